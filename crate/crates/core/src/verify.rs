//! A posteriori checks of a [`Solution`]: physical residuals, the error-bound
//! chain behind the trust region, and a brute-force reference optimum for
//! tiny networks.
//!
//! The bilinear error splits as `m − VI = (m − X) + (X − VI)`. The first
//! term is bounded by the trust region, `‖m − X‖ ≤ δ`, and the second is
//! exactly `−(V − V^k)(I − I^k)` componentwise, so
//! `‖m − VI‖ ≤ δ + ‖(V − V^k)(I − I^k)‖` at every node.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use num_complex::Complex64;
use thiserror::Error;

use crate::convex::{linearised_product, products};
use crate::linalg::{DenseMatrix, Lu};
use crate::netmodel::{assemble_ybus, Network, NetworkError, YBus};
use crate::pfcore::{net_injections, power_balance_residual, solve_power_flow, PowerFlowOptions};
use crate::scp::Solution;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct VoltageViolation {
    pub node: usize,
    pub bus: String,
    pub phase: char,
    pub magnitude: f64,
    /// Distance outside `[V̲, V̄]`.
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct VerificationReport {
    /// `|S^G − S^D − V·conj(YV)|` per node.
    pub power_balance_residual: Vec<f64>,
    pub power_balance_residual_max: f64,
    pub power_balance_residual_mean: f64,
    /// Nodes whose magnitude leaves its limits by more than the tolerance.
    pub voltage_bound_violations: Vec<VoltageViolation>,
    pub max_voltage_bound_violation: f64,
    /// `max ‖m − V·I‖`.
    pub bilinear_residual_max: f64,
    /// `max ‖m − X‖`.
    pub alignment_residual_max: f64,
    /// Trust-region radius of the final subproblem.
    pub delta_final: f64,
    /// `max |(X − VI) + (V − V^k)(I − I^k)|` over all components.
    pub linearisation_identity_error: f64,
    /// `δ + ‖(V − V^k)(I − I^k)‖ − ‖m − VI‖` per node.
    pub triangle_bound_slack: Vec<f64>,
    pub triangle_bound_slack_min: f64,
    /// `max |V_oracle − V|` after feeding the net injections to the power
    /// flow; `None` when the oracle does not converge.
    pub oracle_voltage_discrepancy: Option<f64>,
    pub optimality_gap_percent: Option<f64>,
    pub voltage_error_max: Option<f64>,
    pub voltage_error_mean: Option<f64>,
}

impl VerificationReport {
    /// Fills the reference comparison fields.
    pub fn attach_reference(&mut self, solution: &Solution, reference: &ReferenceOptimum) {
        self.optimality_gap_percent = Some(optimality_gap(solution.objective, reference.objective));
        let errs: Vec<f64> = solution
            .v
            .iter()
            .zip(&reference.v)
            .map(|(a, b)| (a - b).norm())
            .collect();
        self.voltage_error_max = Some(errs.iter().copied().fold(0.0, f64::max));
        self.voltage_error_mean = Some(mean(&errs));
    }

    /// Whether the physical checks pass within `tol`.
    pub fn passes(&self, tol: f64) -> bool {
        self.triangle_bound_slack_min >= -tol
            && self.max_voltage_bound_violation <= tol
            && self.linearisation_identity_error <= tol
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VerifyError {
    #[error("solution has {got} nodes, network has {expected}")]
    Dimension { expected: usize, got: usize },
    #[error(transparent)]
    Network(#[from] NetworkError),
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn norm4(a: [f64; 4]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Verifies `solution` against `network`. `oracle_tol` is the power-flow
/// tolerance and also the slack allowed on voltage limits.
pub fn verify_solution(
    network: &Network,
    solution: &Solution,
    oracle_tol: f64,
) -> Result<VerificationReport, VerifyError> {
    let count = network.index().len();
    for got in [
        solution.v.len(),
        solution.i.len(),
        solution.m.len(),
        solution.generation.len(),
        solution.expansion_point.v.len(),
        solution.expansion_point.i.len(),
    ] {
        if got != count {
            return Err(VerifyError::Dimension {
                expected: count,
                got,
            });
        }
    }
    let ybus = assemble_ybus(network, network.index())?;
    let injections = net_injections(network, &solution.generation_or_zero());

    let balance: Vec<f64> = power_balance_residual(&ybus, &injections, &solution.v)
        .iter()
        .map(|r| r.norm())
        .collect();

    let mut violations = Vec::new();
    let mut worst_violation = 0.0f64;
    for (n, v) in solution.v.iter().enumerate() {
        if network.is_slack_node(n) {
            continue;
        }
        let (lo, hi) = network.voltage_limits(n);
        let mag = v.norm();
        let excess = (lo - mag).max(mag - hi).max(0.0);
        worst_violation = worst_violation.max(excess);
        if excess > oracle_tol {
            let (bus, ph) = network.index().label(n);
            violations.push(VoltageViolation {
                node: n,
                bus: String::from(bus),
                phase: ph.as_char(),
                magnitude: mag,
                excess,
            });
        }
    }

    let delta = solution.delta2_final.sqrt();
    let lin = &solution.expansion_point;
    let mut alignment_max = 0.0f64;
    let mut bilinear_max = 0.0f64;
    let mut identity_err = 0.0f64;
    let mut slack = Vec::with_capacity(count);
    for n in 0..count {
        let (v, i, vk, ik) = (solution.v[n], solution.i[n], lin.v[n], lin.i[n]);
        let x = [
            linearised_product(vk.re, ik.re, v.re, i.re),
            linearised_product(vk.re, ik.im, v.re, i.im),
            linearised_product(vk.im, ik.re, v.im, i.re),
            linearised_product(vk.im, ik.im, v.im, i.im),
        ];
        let exact = products(v, i);
        let step = products(v - vk, i - ik);
        let m = solution.m[n];
        let mut m_x = [0.0; 4];
        let mut m_vi = [0.0; 4];
        for k in 0..4 {
            m_x[k] = m[k] - x[k];
            m_vi[k] = m[k] - exact[k];
            identity_err = identity_err.max((x[k] - exact[k] + step[k]).abs());
        }
        alignment_max = alignment_max.max(norm4(m_x));
        let lhs = norm4(m_vi);
        bilinear_max = bilinear_max.max(lhs);
        slack.push(delta + norm4(step) - lhs);
    }

    let oracle = solve_power_flow(
        network,
        &ybus,
        &injections,
        &solution.v,
        &PowerFlowOptions {
            tol: oracle_tol,
            ..Default::default()
        },
    )
    .ok()
    .filter(|r| r.converged)
    .map(|r| {
        r.v.iter()
            .zip(&solution.v)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    });

    Ok(VerificationReport {
        power_balance_residual_max: balance.iter().copied().fold(0.0, f64::max),
        power_balance_residual_mean: mean(&balance),
        power_balance_residual: balance,
        voltage_bound_violations: violations,
        max_voltage_bound_violation: worst_violation,
        bilinear_residual_max: bilinear_max,
        alignment_residual_max: alignment_max,
        delta_final: delta,
        linearisation_identity_error: identity_err,
        triangle_bound_slack_min: slack.iter().copied().fold(f64::INFINITY, f64::min),
        triangle_bound_slack: slack,
        oracle_voltage_discrepancy: oracle,
        optimality_gap_percent: None,
        voltage_error_max: None,
        voltage_error_mean: None,
    })
}

/// `100·|scp − ref| / max(|ref|, 1e-12)`.
pub fn optimality_gap(scp_objective: f64, reference_objective: f64) -> f64 {
    100.0 * (scp_objective - reference_objective).abs() / reference_objective.abs().max(1e-12)
}

/// Largest number of non-slack nodes [`reference_optimum_tiny`] accepts.
pub const TINY_MAX_NODES: usize = 3;
/// Grid spacing of the reference search (p.u.).
pub const TINY_GRID_STEP: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct ReferenceOptimum {
    pub objective: f64,
    /// Voltages at every node, slack included.
    pub v: Vec<Complex64>,
    pub grid_points: usize,
    /// Grid minima that were polished by Newton's method.
    pub candidates: usize,
    /// Power-balance residual after polishing.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReferenceError {
    #[error("reference search supports at most {TINY_MAX_NODES} non-slack nodes, got {0}")]
    TooLarge(usize),
    #[error("reference search needs {0}")]
    Unsupported(&'static str),
    #[error("no feasible point found ({grid_points} grid points, {candidates} candidates)")]
    NoFeasiblePoint { grid_points: usize, candidates: usize },
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// Brute-force optimum of a tiny single-phase chain.
///
/// With loads fixed and only the slack dispatchable, the feasible set is the
/// set of power-flow solutions within the voltage limits. The leaf voltage is
/// scanned on a rectangular grid; each grid value determines all upstream
/// voltages by a backward sweep, and the mismatch against the slack voltage
/// measures infeasibility. Local minima of the mismatch are polished by
/// Newton's method on the power-flow equations and the best feasible one is
/// returned.
pub fn reference_optimum_tiny(network: &Network) -> Result<ReferenceOptimum, ReferenceError> {
    let index = network.index();
    let count = index.len();
    if network.buses().iter().any(|b| b.phases.count() != 1) {
        return Err(ReferenceError::Unsupported("single-phase buses"));
    }
    let slack_node = (0..count)
        .find(|&n| network.is_slack_node(n))
        .expect("validated slack");
    let load_count = count - 1;
    if load_count > TINY_MAX_NODES {
        return Err(ReferenceError::TooLarge(load_count));
    }
    if network
        .generator_limits()
        .iter()
        .enumerate()
        .any(|(n, g)| g.is_some() && n != slack_node)
    {
        return Err(ReferenceError::Unsupported("generation at the slack only"));
    }
    let ybus = assemble_ybus(network, index)?;
    let order = chain_order(&ybus, slack_node)?;
    let demand = network.demand();
    let v_slack = network.slack_voltage(slack_node).expect("slack");

    if load_count == 0 {
        let v = vec![v_slack];
        return Ok(ReferenceOptimum {
            objective: 0.0,
            v,
            grid_points: 0,
            candidates: 0,
            residual: 0.0,
        });
    }

    let leaf = *order.last().expect("non-empty chain");
    let (vmin, vmax) = network.voltage_limits(leaf);
    let steps = (2.0 * vmax / TINY_GRID_STEP).round() as usize + 1;
    let coord = |k: usize| -vmax + k as f64 * TINY_GRID_STEP;
    let mut mismatch = vec![f64::INFINITY; steps * steps];
    let mut grid_points = 0;
    for a in 0..steps {
        for b in 0..steps {
            let v = Complex64::new(coord(a), coord(b));
            let mag = v.norm();
            if mag < vmin || mag > vmax {
                continue;
            }
            grid_points += 1;
            if let Some(v0) = sweep(&ybus, &order, &demand, v) {
                mismatch[a * steps + b] = (v0[0] - v_slack).norm();
            }
        }
    }

    // Local minima of the mismatch, best first.
    let mut minima: Vec<(f64, usize, usize)> = Vec::new();
    for a in 0..steps {
        for b in 0..steps {
            let f = mismatch[a * steps + b];
            if !f.is_finite() {
                continue;
            }
            let mut is_min = true;
            for da in -1i64..=1 {
                for db in -1i64..=1 {
                    let (na, nb) = (a as i64 + da, b as i64 + db);
                    if (da, db) == (0, 0) || na < 0 || nb < 0 {
                        continue;
                    }
                    let (na, nb) = (na as usize, nb as usize);
                    if na >= steps || nb >= steps {
                        continue;
                    }
                    if mismatch[na * steps + nb] < f {
                        is_min = false;
                    }
                }
            }
            if is_min {
                minima.push((f, a, b));
            }
        }
    }
    minima.sort_by(|x, y| x.0.total_cmp(&y.0));
    minima.truncate(16);

    let mut best: Option<ReferenceOptimum> = None;
    let candidates = minima.len();
    for &(_, a, b) in &minima {
        let Some(seed) = sweep(&ybus, &order, &demand, Complex64::new(coord(a), coord(b))) else {
            continue;
        };
        // `seed` is in chain order; place it by node.
        let mut v = vec![ZERO; count];
        v[slack_node] = v_slack;
        for (k, &node) in order.iter().enumerate() {
            v[node] = seed[k + 1];
        }
        let Some((v, residual)) = newton_polish(&ybus, &demand, slack_node, v) else {
            continue;
        };
        let feasible = (0..count).all(|n| {
            if n == slack_node {
                return true;
            }
            let (lo, hi) = network.voltage_limits(n);
            let m = v[n].norm();
            m >= lo - 1e-9 && m <= hi + 1e-9
        });
        if !feasible || residual > 1e-9 {
            continue;
        }
        let objective: f64 = (0..count)
            .filter(|&n| n != slack_node)
            .map(|n| (v[n] - network.reference_at(n)).norm_sqr())
            .sum();
        if best.as_ref().map_or(true, |b| objective < b.objective) {
            best = Some(ReferenceOptimum {
                objective,
                v,
                grid_points,
                candidates,
                residual,
            });
        }
    }
    best.ok_or(ReferenceError::NoFeasiblePoint {
        grid_points,
        candidates,
    })
}

/// Non-slack nodes ordered from the slack outward; errors unless the network
/// is a simple path starting at the slack.
fn chain_order(ybus: &YBus, slack: usize) -> Result<Vec<usize>, ReferenceError> {
    let n = ybus.dim();
    let neighbours = |i: usize| -> Vec<usize> {
        ybus.row(i)
            .filter(|&(j, y)| j != i && y.norm() > 0.0)
            .map(|(j, _)| j)
            .collect()
    };
    let mut order = Vec::with_capacity(n - 1);
    let (mut prev, mut cur) = (usize::MAX, slack);
    loop {
        let next: Vec<usize> = neighbours(cur).into_iter().filter(|&j| j != prev).collect();
        match next.len() {
            0 => break,
            1 => {
                if order.contains(&next[0]) || next[0] == slack {
                    return Err(ReferenceError::Unsupported("a chain topology"));
                }
                order.push(next[0]);
                prev = cur;
                cur = next[0];
            }
            _ => return Err(ReferenceError::Unsupported("a chain topology")),
        }
    }
    if order.len() != n - 1 {
        return Err(ReferenceError::Unsupported("a chain topology"));
    }
    Ok(order)
}

/// Given the leaf voltage, recovers the upstream voltages from the nodal
/// equations `I_k = conj(S_k / V_k) = Σ_j Y_kj V_j`. Returns voltages in chain
/// order with the implied slack voltage first.
fn sweep(
    ybus: &YBus,
    order: &[usize],
    demand: &[Complex64],
    leaf: Complex64,
) -> Option<Vec<Complex64>> {
    let len = order.len();
    let mut v = vec![ZERO; len + 1];
    v[len] = leaf;
    let node_at = |k: usize, slack: usize| if k == 0 { slack } else { order[k - 1] };
    let slack = {
        // slack is the neighbour of order[0] that is not order[1]
        let first = order[0];
        ybus.row(first)
            .map(|(j, _)| j)
            .find(|&j| j != first && !order.contains(&j))?
    };
    for k in (1..=len).rev() {
        let node = node_at(k, slack);
        if v[k].norm() == 0.0 {
            return None;
        }
        let current = (-demand[node] / v[k]).conj();
        let mut rest = current - ybus.get(node, node) * v[k];
        if k < len {
            rest -= ybus.get(node, node_at(k + 1, slack)) * v[k + 1];
        }
        let coupling = ybus.get(node, node_at(k - 1, slack));
        if coupling.norm() == 0.0 {
            return None;
        }
        v[k - 1] = rest / coupling;
        if !(v[k - 1].re.is_finite() && v[k - 1].im.is_finite()) {
            return None;
        }
    }
    Some(v)
}

/// Newton's method on `V_k conj((YV)_k) = −S^D_k` for the non-slack nodes.
fn newton_polish(
    ybus: &YBus,
    demand: &[Complex64],
    slack: usize,
    mut v: Vec<Complex64>,
) -> Option<(Vec<Complex64>, f64)> {
    let n = ybus.dim();
    let free: Vec<usize> = (0..n).filter(|&k| k != slack).collect();
    let f = free.len();
    let residual = |v: &[Complex64]| -> Vec<Complex64> {
        let i = ybus.mul(v);
        free.iter()
            .map(|&k| v[k] * i[k].conj() + demand[k])
            .collect()
    };
    let mut r = residual(&v);
    let mut norm = r.iter().fold(0.0f64, |m, x| m.max(x.norm()));
    for _ in 0..50 {
        if norm <= 1e-13 {
            break;
        }
        let i = ybus.mul(&v);
        let mut jac = DenseMatrix::zeros(2 * f, 2 * f);
        for (row, &k) in free.iter().enumerate() {
            for (col, &j) in free.iter().enumerate() {
                let y = ybus.get(k, j);
                // ∂F_k/∂V^R_j and ∂F_k/∂V^I_j
                let mut d_re = v[k] * y.conj();
                let mut d_im = -Complex64::i() * v[k] * y.conj();
                if k == j {
                    d_re += i[k].conj();
                    d_im += Complex64::i() * i[k].conj();
                }
                jac[(2 * row, 2 * col)] = d_re.re;
                jac[(2 * row + 1, 2 * col)] = d_re.im;
                jac[(2 * row, 2 * col + 1)] = d_im.re;
                jac[(2 * row + 1, 2 * col + 1)] = d_im.im;
            }
        }
        let rhs: Vec<f64> = r.iter().flat_map(|c| [-c.re, -c.im]).collect();
        let step = Lu::factor(&jac)?.solve(&rhs);
        for (col, &j) in free.iter().enumerate() {
            v[j] += Complex64::new(step[2 * col], step[2 * col + 1]);
        }
        r = residual(&v);
        let next = r.iter().fold(0.0f64, |m, x| m.max(x.norm()));
        if !next.is_finite() {
            return None;
        }
        norm = next;
    }
    Some((v, norm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{diagonal_block, nominal_phasors, Phase, PhaseMask};
    use crate::pfcore::flat_voltages;
    use crate::scp::{solve_opf, TrustRegionConfig};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn chain(loads: &[Complex64], vmin: f64) -> Network {
        let a = PhaseMask::single(Phase::A);
        let y = c(1.0, 0.0) / c(0.01, 0.02);
        let mut b = Network::builder()
            .bus("0", a, vmin, 1.1)
            .slack("0", nominal_phasors());
        for (k, s) in loads.iter().enumerate() {
            let id = alloc::format!("{}", k + 1);
            let prev = alloc::format!("{k}");
            b = b.bus(&id, a, vmin, 1.1).branch(&prev, &id, diagonal_block(y, a));
            if s.norm() > 0.0 {
                b = b.load(&id, Phase::A, *s);
            }
        }
        b.build().unwrap()
    }

    #[test]
    fn gap_formula() {
        assert!((optimality_gap(1.00001, 1.0) - 0.001).abs() < 1e-9);
        assert_eq!(optimality_gap(2.0, 2.0), 0.0);
        assert!((optimality_gap(1e-13, 0.0) - 10.0).abs() < 1e-9);
    }

    #[test]
    fn reference_on_load_free_chain_is_nominal() {
        let net = chain(&[c(0.0, 0.0), c(0.0, 0.0)], 0.9);
        let r = reference_optimum_tiny(&net).unwrap();
        assert!(r.objective < 1e-20);
        for v in &r.v {
            assert!((v - c(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn reference_matches_power_flow() {
        let net = chain(&[c(0.3, 0.1), c(0.2, 0.1), c(0.4, 0.2)], 0.9);
        let ybus = assemble_ybus(&net, net.index()).unwrap();
        let inj = net_injections(&net, &[ZERO; 4]);
        let pf = solve_power_flow(&net, &ybus, &inj, &flat_voltages(&net), &Default::default())
            .unwrap();
        let r = reference_optimum_tiny(&net).unwrap();
        for (a, b) in pf.v.iter().zip(&r.v) {
            assert!((a - b).norm() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn reference_reports_infeasible_limits() {
        let net = chain(&[c(2.0, 1.0)], 0.999);
        assert!(matches!(
            reference_optimum_tiny(&net),
            Err(ReferenceError::NoFeasiblePoint { .. })
        ));
    }

    #[test]
    fn reference_rejects_large_instances() {
        let net = chain(&[c(0.1, 0.0); 4], 0.9);
        assert_eq!(reference_optimum_tiny(&net), Err(ReferenceError::TooLarge(4)));
    }

    #[test]
    fn verify_converged_two_bus() {
        let net = chain(&[c(0.5, 0.2)], 0.9);
        let sol = solve_opf(&net, &TrustRegionConfig::default(), &Default::default()).unwrap();
        let mut rep = verify_solution(&net, &sol, 1e-10).unwrap();
        assert!(rep.passes(1e-9), "{rep:#?}");
        assert!(rep.linearisation_identity_error <= 1e-12);
        rep.attach_reference(&sol, &reference_optimum_tiny(&net).unwrap());
        assert!(rep.optimality_gap_percent.unwrap() < 0.1, "{rep:#?}");
    }

    #[test]
    fn corrupted_voltage_is_flagged() {
        let net = chain(&[c(0.3, 0.1), c(0.2, 0.1)], 0.9);
        let mut sol = solve_opf(&net, &TrustRegionConfig::default(), &Default::default()).unwrap();
        sol.v[1] += c(0.1, 0.0);
        let rep = verify_solution(&net, &sol, 1e-10).unwrap();
        let worst = rep
            .power_balance_residual
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(worst, 1);
    }

    #[test]
    fn dimension_mismatch() {
        let net = chain(&[c(0.3, 0.1)], 0.9);
        let mut sol = solve_opf(&net, &TrustRegionConfig::default(), &Default::default()).unwrap();
        sol.m.pop();
        assert!(matches!(
            verify_solution(&net, &sol, 1e-10),
            Err(VerifyError::Dimension { .. })
        ));
    }
}
