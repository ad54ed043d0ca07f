//! On-disk outputs: solution, iteration log, verification report,
//! convergence CSV and power-flow results.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use scpopf_core::netmodel::Network;
use scpopf_core::pfcore::OracleResult;
use scpopf_core::scp::{IterationRecord, Solution};
use scpopf_core::verify::VerificationReport;
use scpopf_core::Complex64;

pub const SOLUTION_FILE: &str = "solution.json";
pub const ITERATIONS_FILE: &str = "iterations.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const CONVERGENCE_FILE: &str = "convergence.csv";
pub const POWERFLOW_FILE: &str = "powerflow.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeLabel {
    pub bus: String,
    pub phase: char,
}

pub fn node_labels(network: &Network) -> Vec<NodeLabel> {
    let index = network.index();
    (0..index.len())
        .map(|n| {
            let (bus, ph) = index.label(n);
            NodeLabel {
                bus: bus.to_string(),
                phase: ph.as_char(),
            }
        })
        .collect()
}

/// `solution.json`: node labels followed by the solution fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub nodes: Vec<NodeLabel>,
    #[serde(flatten)]
    pub solution: Solution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowNode {
    pub bus: String,
    pub phase: char,
    pub v: Complex64,
    pub residual: f64,
}

/// `powerflow.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowFile {
    pub converged: bool,
    pub iterations: usize,
    pub max_residual: f64,
    pub trace: Vec<f64>,
    pub nodes: Vec<PowerFlowNode>,
}

impl PowerFlowFile {
    pub fn new(network: &Network, result: &OracleResult, residuals: &[f64]) -> Self {
        Self {
            converged: result.converged,
            iterations: result.iterations,
            max_residual: result.max_residual,
            trace: result.trace.clone(),
            nodes: node_labels(network)
                .into_iter()
                .zip(result.v.iter().zip(residuals))
                .map(|(l, (&v, &r))| PowerFlowNode {
                    bus: l.bus,
                    phase: l.phase,
                    v,
                    residual: r,
                })
                .collect(),
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_solution(dir: &Path, network: &Network, solution: &Solution) -> Result<()> {
    write_json(
        &dir.join(SOLUTION_FILE),
        &SolutionFile {
            nodes: node_labels(network),
            solution: solution.clone(),
        },
    )
}

pub fn read_solution(path: &Path) -> Result<SolutionFile> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn iteration_line(record: &IterationRecord) -> String {
    serde_json::to_string(record).expect("iteration records always serialize")
}

pub fn write_iterations(dir: &Path, history: &[IterationRecord]) -> Result<()> {
    let path = dir.join(ITERATIONS_FILE);
    let mut out = BufWriter::new(
        File::create(&path).with_context(|| format!("creating {}", path.display()))?,
    );
    for r in history {
        writeln!(out, "{}", iteration_line(r))?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct ConvergenceRow {
    iteration: usize,
    objective: f64,
    dv: f64,
    delta2: f64,
}

/// Plot-ready columns `iteration,objective,dv,delta2`.
pub fn write_convergence_csv(dir: &Path, history: &[IterationRecord]) -> Result<()> {
    let path = dir.join(CONVERGENCE_FILE);
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
    for r in history {
        w.serialize(ConvergenceRow {
            iteration: r.k,
            objective: r.objective,
            dv: r.dv,
            delta2: r.delta2,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_report(dir: &Path, report: &VerificationReport) -> Result<()> {
    write_json(&dir.join(REPORT_FILE), report)
}

pub fn write_powerflow(dir: &Path, file: &PowerFlowFile) -> Result<()> {
    write_json(&dir.join(POWERFLOW_FILE), file)
}
