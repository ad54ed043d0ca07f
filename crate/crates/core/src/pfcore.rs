//! Fixed-point current-injection power flow.
//!
//! With the slack voltages `V_S` fixed, the non-slack voltages iterate
//! `V_L ← Y_LL⁻¹ (conj(S_L / V_L) − Y_LS V_S)`. `Y_LL` is factorized once.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
use thiserror::Error;

use crate::linalg::ComplexLu;
use crate::netmodel::{Network, YBus};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerFlowOptions {
    /// Stop once `max |V^{t+1} − V^t|` and the power-balance residual are
    /// both below this value.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 200,
        }
    }
}

/// Residual growth over this many consecutive iterations counts as divergence.
pub const DIVERGENCE_WINDOW: usize = 5;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct OracleResult {
    pub converged: bool,
    pub v: Vec<Complex64>,
    /// Nodal injection currents `Y V`.
    pub i: Vec<Complex64>,
    pub iterations: usize,
    /// `max_n |S_n − V_n conj((Y V)_n)|` over non-slack nodes.
    pub max_residual: f64,
    /// Residual after each iteration.
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PowerFlowError {
    #[error("non-slack admittance block Y_LL is singular")]
    SingularAdmittance,
    #[error("power flow diverged at iteration {iteration} (residual grew for {DIVERGENCE_WINDOW} iterations)")]
    Diverged { iteration: usize, trace: Vec<f64> },
    #[error("zero voltage at node {0}")]
    ZeroVoltage(usize),
    #[error("tolerance must be positive")]
    InvalidTolerance,
    #[error("expected {expected} entries, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// `S_n − V_n conj((Y V)_n)` for every node.
pub fn power_balance_residual(
    ybus: &YBus,
    injections: &[Complex64],
    v: &[Complex64],
) -> Vec<Complex64> {
    let current = ybus.mul(v);
    injections
        .iter()
        .zip(v.iter().zip(&current))
        .map(|(s, (v, i))| s - v * i.conj())
        .collect()
}

/// Net specified injection `S^G − S^D` per node for a given generator dispatch.
pub fn net_injections(network: &Network, generation: &[Complex64]) -> Vec<Complex64> {
    network
        .demand()
        .iter()
        .zip(generation)
        .map(|(d, g)| g - d)
        .collect()
}

fn max_load_residual(ybus: &YBus, injections: &[Complex64], v: &[Complex64]) -> f64 {
    let r = power_balance_residual(ybus, injections, v);
    ybus.load_nodes()
        .iter()
        .map(|&n| r[n].norm())
        .fold(0.0, f64::max)
}

/// Solves the power flow for the given per-node injections. Slack entries of
/// `v_init` are replaced by the network's slack voltages.
pub fn solve_power_flow(
    network: &Network,
    ybus: &YBus,
    injections: &[Complex64],
    v_init: &[Complex64],
    options: &PowerFlowOptions,
) -> Result<OracleResult, PowerFlowError> {
    let n = ybus.dim();
    if !(options.tol > 0.0) {
        return Err(PowerFlowError::InvalidTolerance);
    }
    for len in [injections.len(), v_init.len()] {
        if len != n {
            return Err(PowerFlowError::DimensionMismatch {
                expected: n,
                got: len,
            });
        }
    }
    let slack = ybus.slack_nodes();
    let load = ybus.load_nodes();
    let mut v = v_init.to_vec();
    for &s in slack {
        v[s] = network.slack_voltage(s).expect("slack node");
    }
    let lu = ComplexLu::factor(ybus.dense_block(load, load), load.len())
        .ok_or(PowerFlowError::SingularAdmittance)?;
    let y_ls = ybus.dense_block(load, slack);
    let slack_v: Vec<Complex64> = slack.iter().map(|&s| v[s]).collect();
    let source: Vec<Complex64> = (0..load.len())
        .map(|r| {
            (0..slack.len())
                .map(|c| y_ls[r * slack.len() + c] * slack_v[c])
                .sum()
        })
        .collect();

    let mut trace = Vec::new();
    let mut rhs = vec![Complex64::new(0.0, 0.0); load.len()];
    let mut converged = false;
    let mut iterations = 0;
    let mut residual = max_load_residual(ybus, injections, &v);
    for it in 1..=options.max_iter {
        iterations = it;
        for (k, &node) in load.iter().enumerate() {
            if v[node].norm() == 0.0 {
                return Err(PowerFlowError::ZeroVoltage(node));
            }
            rhs[k] = (injections[node] / v[node]).conj() - source[k];
        }
        let next = lu.solve(&rhs);
        let mut step = 0.0f64;
        for (k, &node) in load.iter().enumerate() {
            step = step.max((next[k] - v[node]).norm());
            v[node] = next[k];
        }
        residual = max_load_residual(ybus, injections, &v);
        trace.push(residual);
        if !residual.is_finite() || !step.is_finite() {
            return Err(PowerFlowError::Diverged {
                iteration: it,
                trace,
            });
        }
        if step < options.tol && residual <= options.tol {
            converged = true;
            break;
        }
        if trace.len() > DIVERGENCE_WINDOW
            && trace[trace.len() - DIVERGENCE_WINDOW - 1..]
                .windows(2)
                .all(|w| w[1] > w[0])
        {
            return Err(PowerFlowError::Diverged {
                iteration: it,
                trace,
            });
        }
    }
    let i = ybus.mul(&v);
    Ok(OracleResult {
        converged,
        v,
        i,
        iterations,
        max_residual: residual,
        trace,
    })
}

/// Flat profile: nominal phasors everywhere, slack voltages at the slack.
pub fn flat_voltages(network: &Network) -> Vec<Complex64> {
    (0..network.index().len())
        .map(|n| {
            network
                .slack_voltage(n)
                .unwrap_or_else(|| network.reference_at(n))
        })
        .collect()
}
