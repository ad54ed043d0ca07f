//! Outer sequential convex programming loop.
//!
//! Starting from a flat profile, each iteration builds the convex subproblem at
//! the current linearisation point, solves it, and moves the linearisation
//! point to the subproblem's `(V, I)`. The trust-region radius contracts while
//! the voltage iterates settle and expands while they keep moving. The loop
//! stops once both the step-to-step voltage change and the radius are small.

use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use num_complex::Complex64;
use thiserror::Error;

use crate::conic::{ConicBackend, ConicError, InteriorPoint, SolveStatus, Tolerances, Violation};
use crate::convex::{
    alignment_residuals, bounds_with_kappa, build_subproblem, products, LinearisationPoint,
    SubproblemError, SubproblemOptions, TrustRegionMode, DEFAULT_KAPPA,
};
use crate::netmodel::{assemble_ybus, Network, NetworkError, YBus};
use crate::pfcore::flat_voltages;

/// Adaptive trust-region parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrustRegionConfig {
    pub delta2_init: f64,
    pub delta2_min: f64,
    pub delta2_max: f64,
    /// Contraction factor, `0 < α < 1`.
    pub alpha: f64,
    /// Expansion factor, `β ≥ 1`.
    pub beta: f64,
    /// Contract when `Δv < τ`.
    pub tau: f64,
}

impl Default for TrustRegionConfig {
    fn default() -> Self {
        Self {
            delta2_init: 1e-1,
            delta2_min: 1e-10,
            delta2_max: 1.0,
            alpha: DEFAULT_ALPHA,
            beta: 2.0,
            tau: 1e-3,
        }
    }
}

/// Default contraction factor. From `δ² = 10⁻¹` one contraction lands at the
/// stopping threshold and the next at `δ²_min`, so a converged solve ends with
/// a radius that is negligible next to the loads. The relaxation can absorb
/// up to `√2·δ` of power per node, which is what bounds the final optimality
/// gap.
pub const DEFAULT_ALPHA: f64 = 1e-5;

impl TrustRegionConfig {
    pub fn validate(&self) -> Result<(), ScpError> {
        let fail = |msg: &str| Err(ScpError::InvalidConfig(String::from(msg)));
        let all = [
            self.delta2_init,
            self.delta2_min,
            self.delta2_max,
            self.alpha,
            self.beta,
            self.tau,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return fail("trust-region parameters must be finite");
        }
        if !(0.0 < self.delta2_min
            && self.delta2_min <= self.delta2_init
            && self.delta2_init <= self.delta2_max)
        {
            return fail("need 0 < delta2_min <= delta2_init <= delta2_max");
        }
        if !(0.0 < self.alpha && self.alpha < 1.0) {
            return fail("alpha must lie in (0, 1)");
        }
        if !(self.beta >= 1.0) {
            return fail("beta must be at least 1");
        }
        if !(self.tau > 0.0) {
            return fail("tau must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScpOptions {
    /// Stop when `Δv` falls below this …
    pub dv_tol: f64,
    /// … and the radius used in that iteration is below this.
    pub delta2_tol: f64,
    pub max_iter: usize,
    /// Current-bound safety factor.
    pub kappa: f64,
    pub trust_region_mode: TrustRegionMode,
    pub conic: Tolerances,
    /// Expand the radius once and re-solve when a subproblem is infeasible.
    pub retry_on_infeasible: bool,
}

impl Default for ScpOptions {
    fn default() -> Self {
        Self {
            dv_tol: 1e-3,
            delta2_tol: 1e-6,
            max_iter: 50,
            kappa: DEFAULT_KAPPA,
            trust_region_mode: TrustRegionMode::PerNode,
            conic: Tolerances {
                primal: 1e-10,
                dual: 1e-10,
                gap: 1e-10,
                max_iter: 100,
            },
            retry_on_infeasible: true,
        }
    }
}

impl ScpOptions {
    fn validate(&self) -> Result<(), ScpError> {
        if !(self.dv_tol > 0.0 && self.delta2_tol > 0.0 && self.kappa > 0.0) {
            return Err(ScpError::InvalidConfig(String::from(
                "dv_tol, delta2_tol and kappa must be positive",
            )));
        }
        if self.max_iter == 0 {
            return Err(ScpError::InvalidConfig(String::from(
                "max_iter must be at least 1",
            )));
        }
        Ok(())
    }
}

/// One outer iteration.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IterationRecord {
    /// 1-based iteration number.
    pub k: usize,
    pub objective: f64,
    pub dv: f64,
    /// Squared radius the subproblem was solved with.
    pub delta2: f64,
    /// Squared radius for the next iteration.
    pub delta2_next: f64,
    pub status: SolveStatus,
    /// `max ‖m − X‖` over nodes.
    pub max_alignment: f64,
    /// `max ‖m − V·I‖` over nodes.
    pub max_bilinear: f64,
    pub conic_iterations: usize,
    /// Whether this iteration needed the infeasibility retry.
    pub retried: bool,
}

/// Mutable state of a running solve.
#[derive(Debug, Clone, PartialEq)]
pub struct ScpState {
    pub k: usize,
    pub lin_point: LinearisationPoint,
    pub delta2: f64,
    pub dv: f64,
    pub history: Vec<IterationRecord>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Solution {
    pub v: Vec<Complex64>,
    pub i: Vec<Complex64>,
    /// Auxiliaries `[m^RR, m^RI, m^IR, m^II]` per node.
    pub m: Vec<[f64; 4]>,
    /// `P^G + jQ^G` per node; `None` where the node has no generator.
    pub generation: Vec<Option<Complex64>>,
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Squared radius of the last subproblem.
    pub delta2_final: f64,
    pub dv_final: f64,
    /// `max ‖m − V·I‖` over nodes.
    pub max_bilinear_residual: f64,
    /// Point the last subproblem was expanded around.
    pub expansion_point: LinearisationPoint,
    pub history: Vec<IterationRecord>,
}

impl Solution {
    /// Generator injections with zeros where there is no generator.
    pub fn generation_or_zero(&self) -> Vec<Complex64> {
        self.generation
            .iter()
            .map(|g| g.unwrap_or(Complex64::new(0.0, 0.0)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScpError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Subproblem(#[from] SubproblemError),
    #[error(transparent)]
    Conic(#[from] ConicError),
    #[error("subproblem infeasible at iteration {iteration} (witness: {witness:?})")]
    Infeasible {
        iteration: usize,
        witness: Option<Violation>,
        history: Vec<IterationRecord>,
    },
    #[error("conic solver failed at iteration {iteration} ({status:?})")]
    NumericalFailure {
        iteration: usize,
        status: SolveStatus,
        history: Vec<IterationRecord>,
    },
}

/// Nominal voltages (slack values at the slack) and `I = Y V`.
pub fn flat_start(network: &Network, ybus: &YBus) -> LinearisationPoint {
    let v = flat_voltages(network);
    let i = ybus.mul(&v);
    LinearisationPoint { v, i }
}

/// `max_n |ΔV^R_n| + |ΔV^I_n|`.
pub fn voltage_deviation(v: &[Complex64], prev: &[Complex64]) -> f64 {
    debug_assert_eq!(v.len(), prev.len());
    v.iter()
        .zip(prev)
        .map(|(a, b)| (a.re - b.re).abs() + (a.im - b.im).abs())
        .fold(0.0, f64::max)
}

/// Contracts when `Δv < τ`, expands otherwise, clamped to
/// `[δ²_min, δ²_max]`.
pub fn update_radius(delta2: f64, dv: f64, config: &TrustRegionConfig) -> f64 {
    if dv < config.tau {
        config.delta2_min.max(config.alpha * delta2)
    } else {
        config.delta2_max.min(config.beta * delta2)
    }
}

/// Solves the OPF with the built-in interior-point backend.
pub fn solve_opf(
    network: &Network,
    config: &TrustRegionConfig,
    options: &ScpOptions,
) -> Result<Solution, ScpError> {
    solve_opf_with(network, config, options, &InteriorPoint, |_| {})
}

/// Solves the OPF with an explicit backend, reporting each iteration to
/// `observer`.
pub fn solve_opf_with<B, F>(
    network: &Network,
    config: &TrustRegionConfig,
    options: &ScpOptions,
    backend: &B,
    mut observer: F,
) -> Result<Solution, ScpError>
where
    B: ConicBackend + ?Sized,
    F: FnMut(&IterationRecord),
{
    config.validate()?;
    options.validate()?;
    let ybus = assemble_ybus(network, network.index())?;
    let bounds = bounds_with_kappa(network, options.kappa);
    let sub_opts = SubproblemOptions {
        trust_region: options.trust_region_mode,
    };
    let slack: Vec<Option<Complex64>> = (0..ybus.dim()).map(|n| network.slack_voltage(n)).collect();

    let mut state = ScpState {
        k: 0,
        lin_point: flat_start(network, &ybus),
        delta2: config.delta2_init,
        dv: f64::INFINITY,
        history: Vec::new(),
    };

    loop {
        state.k += 1;
        let k = state.k;
        let mut retried = false;
        let (program, map, sol) = loop {
            let (program, map) =
                build_subproblem(network, &ybus, &state.lin_point, &bounds, state.delta2, &sub_opts)?;
            let sol = backend.solve(&program, &options.conic)?;
            match sol.status {
                SolveStatus::Optimal => break (program, map, sol),
                SolveStatus::Infeasible if options.retry_on_infeasible && !retried => {
                    retried = true;
                    state.delta2 = config.delta2_max.min(config.beta * state.delta2);
                }
                SolveStatus::Infeasible => {
                    return Err(ScpError::Infeasible {
                        iteration: k,
                        witness: sol.witness,
                        history: state.history,
                    })
                }
                status => {
                    return Err(ScpError::NumericalFailure {
                        iteration: k,
                        status,
                        history: state.history,
                    })
                }
            }
        };
        let _ = program;

        let mut v = map.voltages(&sol.x);
        for (vn, s) in v.iter_mut().zip(&slack) {
            if let Some(s) = s {
                *vn = *s;
            }
        }
        let i = map.currents(&sol.x);
        let m = map.auxiliaries(&sol.x);
        let dv = voltage_deviation(&v, &state.lin_point.v);
        let max_alignment = alignment_residuals(&state.lin_point, &map, &sol.x)
            .into_iter()
            .fold(0.0, f64::max);
        let max_bilinear = bilinear_residuals(&v, &i, &m).into_iter().fold(0.0, f64::max);
        let delta2_used = state.delta2;
        let converged = dv < options.dv_tol && delta2_used < options.delta2_tol;
        let delta2_next = if converged {
            delta2_used
        } else {
            update_radius(delta2_used, dv, config)
        };
        let record = IterationRecord {
            k,
            objective: sol.objective,
            dv,
            delta2: delta2_used,
            delta2_next,
            status: sol.status,
            max_alignment,
            max_bilinear,
            conic_iterations: sol.iterations,
            retried,
        };
        observer(&record);
        state.history.push(record);
        state.dv = dv;

        if converged || k >= options.max_iter {
            let generation = map
                .generators
                .iter()
                .map(|g| g.map(|g| Complex64::new(sol.x[g.p], sol.x[g.q])))
                .collect();
            return Ok(Solution {
                v,
                i,
                m,
                generation,
                objective: sol.objective,
                converged,
                iterations: k,
                delta2_final: delta2_used,
                dv_final: dv,
                max_bilinear_residual: max_bilinear,
                expansion_point: state.lin_point,
                history: state.history,
            });
        }
        state.lin_point = LinearisationPoint { v, i };
        state.delta2 = delta2_next;
    }
}

/// `‖m − V·I‖` per node.
pub fn bilinear_residuals(v: &[Complex64], i: &[Complex64], m: &[[f64; 4]]) -> Vec<f64> {
    v.iter()
        .zip(i)
        .zip(m)
        .map(|((&v, &i), m)| {
            let p = products(v, i);
            (0..4).map(|k| (m[k] - p[k]) * (m[k] - p[k])).sum::<f64>().sqrt()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{diagonal_block, nominal_phasors, Phase, PhaseMask};
    use alloc::vec;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn two_bus(load: Complex64) -> Network {
        let a = PhaseMask::single(Phase::A);
        let mut b = Network::builder()
            .bus("1", a, 0.9, 1.1)
            .bus("2", a, 0.9, 1.1)
            .branch("1", "2", diagonal_block(c(1.0, 0.0) / c(0.01, 0.02), a))
            .slack("1", nominal_phasors());
        if load.norm() > 0.0 {
            b = b.load("2", Phase::A, load);
        }
        b.build().unwrap()
    }

    #[test]
    fn deviation_metric() {
        let a = [c(1.0, 0.0), c(0.5, 0.5)];
        assert_eq!(voltage_deviation(&a, &a), 0.0);
        let b = [c(1.0, 0.0), c(0.501, 0.498)];
        assert!((voltage_deviation(&b, &a) - 3e-3).abs() < 1e-15);
    }

    #[test]
    fn radius_rules() {
        let cfg = TrustRegionConfig {
            alpha: 0.5,
            ..Default::default()
        };
        assert!((update_radius(1e-1, 1e-4, &cfg) - 5e-2).abs() < 1e-18);
        assert_eq!(update_radius(cfg.delta2_min, 1e-4, &cfg), cfg.delta2_min);
        assert_eq!(update_radius(cfg.delta2_max, 1.0, &cfg), cfg.delta2_max);
        assert_eq!(update_radius(1e-2, 1e-3, &cfg), 2e-2);
    }

    #[test]
    fn config_validation() {
        assert!(TrustRegionConfig::default().validate().is_ok());
        for bad in [
            TrustRegionConfig {
                alpha: 1.0,
                ..Default::default()
            },
            TrustRegionConfig {
                beta: 0.5,
                ..Default::default()
            },
            TrustRegionConfig {
                delta2_min: 1.0,
                ..Default::default()
            },
            TrustRegionConfig {
                delta2_init: 2.0,
                ..Default::default()
            },
            TrustRegionConfig {
                tau: f64::NAN,
                ..Default::default()
            },
        ] {
            assert!(matches!(bad.validate(), Err(ScpError::InvalidConfig(_))));
        }
    }

    #[test]
    fn flat_start_on_two_bus() {
        let net = two_bus(c(0.1, 0.05));
        let ybus = assemble_ybus(&net, net.index()).unwrap();
        let lp = flat_start(&net, &ybus);
        assert_eq!(lp.v[0], nominal_phasors()[0]);
        let dense = ybus.to_dense();
        for r in 0..2 {
            let expect: Complex64 = (0..2).map(|k| dense[r * 2 + k] * lp.v[k]).sum();
            assert!((lp.i[r] - expect).norm() < 1e-15);
        }
        assert!(lp.i.iter().all(|i| i.norm() < 1e-12));
    }

    #[test]
    fn load_free_converges_to_nominal() {
        let net = two_bus(c(0.0, 0.0));
        let sol = solve_opf(&net, &Default::default(), &Default::default()).unwrap();
        assert!(sol.converged);
        assert!(sol.objective.abs() < 1e-8);
        for v in &sol.v {
            assert!((v - c(1.0, 0.0)).norm() < 1e-6);
        }
        assert_eq!(sol.history.len(), sol.iterations);
    }

    #[test]
    fn loaded_two_bus_converges() {
        let net = two_bus(c(0.5, 0.2));
        let mut seen = vec![];
        let sol = solve_opf_with(
            &net,
            &Default::default(),
            &Default::default(),
            &InteriorPoint,
            |r| seen.push(r.k),
        )
        .unwrap();
        assert!(sol.converged, "{:#?}", sol.history);
        assert!(sol.iterations <= 10);
        assert_eq!(seen, (1..=sol.iterations).collect::<Vec<_>>());
        assert!(sol.delta2_final < 1e-6 && sol.dv_final < 1e-3);
        for r in &sol.history {
            assert!(r.max_alignment <= r.delta2.sqrt() + 1e-8);
        }
    }

    #[test]
    fn iteration_cap_returns_unconverged() {
        let net = two_bus(c(0.5, 0.2));
        let opts = ScpOptions {
            max_iter: 1,
            ..Default::default()
        };
        let sol = solve_opf(&net, &Default::default(), &opts).unwrap();
        assert!(!sol.converged);
        assert_eq!(sol.iterations, 1);
        assert_eq!(sol.history.len(), 1);
    }
}
