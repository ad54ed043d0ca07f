//! Command-line interface. Exit codes: 0 success, 1 error, 2 no converged
//! and verified result.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use scpopf_core::conic::InteriorPoint;
use scpopf_core::netmodel::{assemble_ybus, Network};
use scpopf_core::pfcore::{
    flat_voltages, net_injections, power_balance_residual, solve_power_flow, PowerFlowError,
    PowerFlowOptions,
};
use scpopf_core::scp::{solve_opf_with, ScpError, ScpOptions, Solution, TrustRegionConfig};
use scpopf_core::verify::{reference_optimum_tiny, verify_solution, VerificationReport};

use crate::artifacts::{self, node_labels};
use crate::ingest::{
    generate_feeder, randomize_feeder, read_feeder, to_network, FeederSpec, PhasePolicy,
    RandomizationSpec,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_UNCONVERGED: i32 = 2;

/// Tolerance of the power-flow oracle used during verification.
pub const ORACLE_TOL: f64 = 1e-10;
/// Allowed voltage-limit excess, triangle-bound deficit and identity error.
pub const VERIFY_TOL: f64 = 1e-6;
/// Allowed distance between solver and oracle voltages.
pub const ORACLE_VOLTAGE_TOL: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "scpopf", version, about = "Three-phase optimal power flow by sequential convex programming")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the OPF and verify the result.
    Solve(SolveArgs),
    /// Run the power flow with loads only; the slack supplies the balance.
    Powerflow(PowerflowArgs),
    /// Write a synthetic feeder.
    Generate(GenerateArgs),
    /// Verify an existing solution file.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LogMode {
    /// One JSON object per iteration on stdout.
    Jsonl,
    Quiet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PhaseArg {
    Three,
    Single,
    Mixed,
}

impl From<PhaseArg> for PhasePolicy {
    fn from(p: PhaseArg) -> Self {
        match p {
            PhaseArg::Three => PhasePolicy::Three,
            PhaseArg::Single => PhasePolicy::Single,
            PhaseArg::Mixed => PhasePolicy::Mixed,
        }
    }
}

#[derive(Debug, Args)]
pub struct LoadArgs {
    /// Seed for load randomization.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Redraw every load before solving.
    #[arg(long)]
    pub randomize: bool,
    /// Active-power range in kW.
    #[arg(long, value_delimiter = ',', default_values_t = [0.2, 0.8])]
    pub p_range: Vec<f64>,
    /// Power-factor range.
    #[arg(long, value_delimiter = ',', default_values_t = [0.92, 0.98])]
    pub pf_range: Vec<f64>,
}

impl LoadArgs {
    fn spec(&self) -> Result<RandomizationSpec> {
        let pair = |v: &[f64], flag: &str| match v {
            [lo, hi] => Ok((*lo, *hi)),
            _ => Err(anyhow::anyhow!("{flag} takes two comma-separated values")),
        };
        Ok(RandomizationSpec {
            p_kw: pair(&self.p_range, "--p-range")?,
            pf: pair(&self.pf_range, "--pf-range")?,
            seed: self.seed,
        })
    }
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    #[arg(long, allow_negative_numbers = true)]
    pub delta2_init: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub delta2_min: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub delta2_max: Option<f64>,
    /// Contraction factor.
    #[arg(long, allow_negative_numbers = true)]
    pub alpha: Option<f64>,
    /// Expansion factor.
    #[arg(long, allow_negative_numbers = true)]
    pub beta: Option<f64>,
    /// Contract when the voltage step is below this.
    #[arg(long, allow_negative_numbers = true)]
    pub tau: Option<f64>,
    #[arg(long, default_value_t = 1e-3, allow_negative_numbers = true)]
    pub dv_tol: f64,
    #[arg(long, default_value_t = 1e-6, allow_negative_numbers = true)]
    pub delta2_tol: f64,
    #[arg(long, default_value_t = 50)]
    pub max_iter: usize,
}

impl SolverArgs {
    pub fn config(&self) -> TrustRegionConfig {
        let d = TrustRegionConfig::default();
        TrustRegionConfig {
            delta2_init: self.delta2_init.unwrap_or(d.delta2_init),
            delta2_min: self.delta2_min.unwrap_or(d.delta2_min),
            delta2_max: self.delta2_max.unwrap_or(d.delta2_max),
            alpha: self.alpha.unwrap_or(d.alpha),
            beta: self.beta.unwrap_or(d.beta),
            tau: self.tau.unwrap_or(d.tau),
        }
    }

    pub fn options(&self) -> ScpOptions {
        ScpOptions {
            dv_tol: self.dv_tol,
            delta2_tol: self.delta2_tol,
            max_iter: self.max_iter,
            ..ScpOptions::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub loads: LoadArgs,
    #[arg(long, value_enum, default_value_t = LogMode::Jsonl)]
    pub log: LogMode,
}

#[derive(Debug, Args)]
pub struct PowerflowArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub loads: LoadArgs,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
    #[arg(long, value_enum, default_value_t = LogMode::Jsonl)]
    pub log: LogMode,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub buses: usize,
    #[arg(long, default_value_t = 0)]
    pub ties: usize,
    #[arg(long, value_enum, default_value_t = PhaseArg::Three)]
    pub phases: PhaseArg,
    #[arg(long, default_value_t = 10.0)]
    pub base_kva: f64,
    #[arg(long, default_value_t = 0.4)]
    pub base_kv: f64,
    #[command(flatten)]
    pub loads: LoadArgs,
    /// Directory for `feeder.json`; the feeder goes to stdout when omitted.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Feeder the solution belongs to.
    #[arg(long)]
    pub input: PathBuf,
    /// Defaults to `solution.json` in the output directory.
    #[arg(long)]
    pub solution: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = LogMode::Jsonl)]
    pub log: LogMode,
}

/// Parses `args` (program name first) and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    }
}

pub fn run(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Solve(a) => solve(a),
        Command::Powerflow(a) => powerflow(a),
        Command::Generate(a) => generate(a),
        Command::Verify(a) => verify(a),
    }
}

fn load_network(input: &Path, loads: Option<&LoadArgs>) -> Result<Network> {
    let mut file = read_feeder(input).with_context(|| format!("loading {}", input.display()))?;
    if let Some(l) = loads.filter(|l| l.randomize) {
        randomize_feeder(&mut file, &l.spec()?)?;
    }
    Ok(to_network(&file).with_context(|| format!("building network from {}", input.display()))?)
}

fn out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Runs the verification report, adding the brute-force reference where
/// the network is small enough.
pub fn full_report(network: &Network, solution: &Solution) -> Result<VerificationReport> {
    let mut report = verify_solution(network, solution, ORACLE_TOL)?;
    if let Ok(reference) = reference_optimum_tiny(network) {
        report.attach_reference(solution, &reference);
    }
    Ok(report)
}

/// Whether a report meets the physical checks applied by `solve`/`verify`.
pub fn is_verified(report: &VerificationReport) -> bool {
    report.passes(VERIFY_TOL)
        && report
            .oracle_voltage_discrepancy
            .is_some_and(|d| d <= ORACLE_VOLTAGE_TOL)
}

fn summarize(report: &VerificationReport) -> String {
    let mut s = format!(
        "residual max {:.3e}, triangle slack min {:.3e}, oracle discrepancy {}",
        report.power_balance_residual_max,
        report.triangle_bound_slack_min,
        report
            .oracle_voltage_discrepancy
            .map_or(String::from("n/a"), |d| format!("{d:.3e}")),
    );
    if let Some(gap) = report.optimality_gap_percent {
        s.push_str(&format!(", gap {gap:.4}%"));
    }
    s
}

fn solve(a: &SolveArgs) -> Result<i32> {
    let network = load_network(&a.input, Some(&a.loads))?;
    let config = a.solver.config();
    config.validate()?;
    out_dir(&a.out_dir)?;

    let stdout = io::stdout();
    let log = a.log;
    let result = solve_opf_with(
        &network,
        &config,
        &a.solver.options(),
        &InteriorPoint,
        |r| {
            if log == LogMode::Jsonl {
                let _ = writeln!(stdout.lock(), "{}", artifacts::iteration_line(r));
            }
        },
    );
    let solution = match result {
        Ok(s) => s,
        Err(e) => {
            if let ScpError::Infeasible { history, .. } | ScpError::NumericalFailure { history, .. } = &e {
                artifacts::write_iterations(&a.out_dir, history)?;
                artifacts::write_convergence_csv(&a.out_dir, history)?;
            }
            bail!(e);
        }
    };
    artifacts::write_solution(&a.out_dir, &network, &solution)?;
    artifacts::write_iterations(&a.out_dir, &solution.history)?;
    artifacts::write_convergence_csv(&a.out_dir, &solution.history)?;
    let report = full_report(&network, &solution)?;
    artifacts::write_report(&a.out_dir, &report)?;

    if !solution.converged {
        eprintln!(
            "not converged after {} iterations (dv {:.3e}, delta2 {:.3e})",
            solution.iterations, solution.dv_final, solution.delta2_final
        );
        return Ok(EXIT_UNCONVERGED);
    }
    if !is_verified(&report) {
        eprintln!("converged but verification failed: {}", summarize(&report));
        return Ok(EXIT_UNCONVERGED);
    }
    if log != LogMode::Quiet {
        eprintln!(
            "converged in {} iterations, objective {:.6e}; {}",
            solution.iterations,
            solution.objective,
            summarize(&report)
        );
    }
    Ok(EXIT_OK)
}

fn powerflow(a: &PowerflowArgs) -> Result<i32> {
    let network = load_network(&a.input, Some(&a.loads))?;
    let ybus = assemble_ybus(&network, network.index())?;
    let zero = vec![scpopf_core::Complex64::new(0.0, 0.0); ybus.dim()];
    let mut injections = net_injections(&network, &zero);
    let options = PowerFlowOptions {
        tol: a.tol,
        max_iter: a.max_iter,
    };
    let result = match solve_power_flow(&network, &ybus, &injections, &flat_voltages(&network), &options) {
        Ok(r) => r,
        Err(PowerFlowError::Diverged { iteration, trace }) => {
            eprintln!("residual trace: {trace:?}");
            bail!("power flow diverged at iteration {iteration}");
        }
        Err(e) => return Err(e.into()),
    };
    // the slack absorbs the balance
    let current = ybus.mul(&result.v);
    for &n in ybus.slack_nodes() {
        injections[n] = result.v[n] * current[n].conj();
    }
    let residuals: Vec<f64> = power_balance_residual(&ybus, &injections, &result.v)
        .iter()
        .map(|r| r.norm())
        .collect();
    out_dir(&a.out_dir)?;
    artifacts::write_powerflow(
        &a.out_dir,
        &artifacts::PowerFlowFile::new(&network, &result, &residuals),
    )?;
    if !result.converged {
        eprintln!("residual trace: {:?}", result.trace);
        eprintln!("power flow did not converge in {} iterations", result.iterations);
        return Ok(EXIT_UNCONVERGED);
    }
    if a.log != LogMode::Quiet {
        eprintln!(
            "power flow converged in {} iterations, max residual {:.3e}",
            result.iterations, result.max_residual
        );
    }
    Ok(EXIT_OK)
}

fn generate(a: &GenerateArgs) -> Result<i32> {
    let mut spec = FeederSpec::new(a.buses, a.ties, a.loads.seed);
    spec.phases = a.phases.into();
    spec.base.s_kva = a.base_kva;
    spec.base.v_kv = a.base_kv;
    spec.loads = a.loads.spec()?;
    let file = generate_feeder(&spec)?;
    // catch anything the network model rejects before writing
    to_network(&file)?;
    let text = file.to_json();
    match &a.out_dir {
        Some(dir) => {
            out_dir(dir)?;
            let path = dir.join("feeder.json");
            fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        }
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(EXIT_OK)
}

fn verify(a: &VerifyArgs) -> Result<i32> {
    let network = load_network(&a.input, None)?;
    let path = a
        .solution
        .clone()
        .unwrap_or_else(|| a.out_dir.join(artifacts::SOLUTION_FILE));
    let file = artifacts::read_solution(&path)?;
    if file.nodes != node_labels(&network) {
        bail!(
            "{} does not match the bus-phase nodes of {}",
            path.display(),
            a.input.display()
        );
    }
    let report = full_report(&network, &file.solution)?;
    out_dir(&a.out_dir)?;
    artifacts::write_report(&a.out_dir, &report)?;
    let ok = is_verified(&report);
    if a.log != LogMode::Quiet || !ok {
        eprintln!(
            "{}: {}",
            if ok { "verified" } else { "verification failed" },
            summarize(&report)
        );
    }
    Ok(if ok { EXIT_OK } else { EXIT_UNCONVERGED })
}
