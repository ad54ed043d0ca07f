//! Per-iteration convex OPF subproblem.
//!
//! Every bus-phase node carries eight variables: the rectangular voltage and
//! current components and four auxiliaries `m` standing in for the bilinear
//! products `V·I` that make up the complex power. The auxiliaries are boxed by
//! McCormick envelopes built once from global bounds, and tied to a first-order
//! expansion `X` of the products around the current iterate by a
//! second-order-cone trust region `‖m − X‖ ≤ δ`.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use num_complex::Complex64;
use thiserror::Error;

use crate::conic::{ConicProgram, LinExpr};
use crate::netmodel::{Network, YBus};

/// Default current-bound safety factor.
pub const DEFAULT_KAPPA: f64 = 2.0;

/// Variable indices of one bus-phase node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeVars {
    pub v_re: usize,
    pub v_im: usize,
    pub i_re: usize,
    pub i_im: usize,
    /// `≈ V^R I^R`
    pub m_rr: usize,
    /// `≈ V^R I^I`
    pub m_ri: usize,
    /// `≈ V^I I^R`
    pub m_ir: usize,
    /// `≈ V^I I^I`
    pub m_ii: usize,
}

impl NodeVars {
    /// `[m_rr, m_ri, m_ir, m_ii]`
    pub fn aux(&self) -> [usize; 4] {
        [self.m_rr, self.m_ri, self.m_ir, self.m_ii]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GeneratorVars {
    pub p: usize,
    pub q: usize,
}

/// Maps the subproblem's variables back to the network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariableMap {
    pub nodes: Vec<NodeVars>,
    /// Dispatch variables of nodes that have a generator.
    pub generators: Vec<Option<GeneratorVars>>,
    len: usize,
}

impl VariableMap {
    /// Node variables occupy `8n..8n+8`; generator variables follow in node
    /// order.
    pub fn new(network: &Network) -> Self {
        let count = network.index().len();
        let nodes: Vec<NodeVars> = (0..count)
            .map(|n| {
                let b = 8 * n;
                NodeVars {
                    v_re: b,
                    v_im: b + 1,
                    i_re: b + 2,
                    i_im: b + 3,
                    m_rr: b + 4,
                    m_ri: b + 5,
                    m_ir: b + 6,
                    m_ii: b + 7,
                }
            })
            .collect();
        let mut next = 8 * count;
        let generators = network
            .generator_limits()
            .iter()
            .map(|g| {
                g.as_ref().map(|_| {
                    let v = GeneratorVars { p: next, q: next + 1 };
                    next += 2;
                    v
                })
            })
            .collect();
        Self {
            nodes,
            generators,
            len: next,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn voltages(&self, x: &[f64]) -> Vec<Complex64> {
        self.nodes
            .iter()
            .map(|v| Complex64::new(x[v.v_re], x[v.v_im]))
            .collect()
    }

    pub fn currents(&self, x: &[f64]) -> Vec<Complex64> {
        self.nodes
            .iter()
            .map(|v| Complex64::new(x[v.i_re], x[v.i_im]))
            .collect()
    }

    /// `[m_rr, m_ri, m_ir, m_ii]` per node.
    pub fn auxiliaries(&self, x: &[f64]) -> Vec<[f64; 4]> {
        self.nodes
            .iter()
            .map(|v| v.aux().map(|i| x[i]))
            .collect()
    }

    /// `P^G + jQ^G` per node; zero where there is no generator.
    pub fn generation(&self, x: &[f64]) -> Vec<Complex64> {
        self.generators
            .iter()
            .map(|g| g.map_or(Complex64::new(0.0, 0.0), |g| Complex64::new(x[g.p], x[g.q])))
            .collect()
    }
}

/// Closed interval; `lo == hi` marks a fixed quantity.
pub type Interval = (f64, f64);

/// Global boxes for the McCormick envelopes.
#[derive(Debug, Clone, PartialEq)]
pub struct McCormickBounds {
    pub v_re: Vec<Interval>,
    pub v_im: Vec<Interval>,
    pub i_re: Vec<Interval>,
    pub i_im: Vec<Interval>,
}

/// Voltage components within `±V̄`, slack voltages fixed, current components
/// within `±κ·S_total / V̲`.
pub fn default_bounds(network: &Network) -> McCormickBounds {
    bounds_with_kappa(network, DEFAULT_KAPPA)
}

pub fn bounds_with_kappa(network: &Network, kappa: f64) -> McCormickBounds {
    let n = network.index().len();
    let vmin = network
        .buses()
        .iter()
        .map(|b| b.vmin)
        .fold(f64::INFINITY, f64::min);
    let i_bar = if vmin > 0.0 {
        kappa * network.total_apparent_load() / vmin
    } else {
        f64::INFINITY
    };
    let mut b = McCormickBounds {
        v_re: Vec::with_capacity(n),
        v_im: Vec::with_capacity(n),
        i_re: vec![(-i_bar, i_bar); n],
        i_im: vec![(-i_bar, i_bar); n],
    };
    for node in 0..n {
        match network.slack_voltage(node) {
            Some(v) => {
                b.v_re.push((v.re, v.re));
                b.v_im.push((v.im, v.im));
            }
            None => {
                let vmax = network.voltage_limits(node).1;
                b.v_re.push((-vmax, vmax));
                b.v_im.push((-vmax, vmax));
            }
        }
    }
    b
}

impl McCormickBounds {
    pub fn len(&self) -> usize {
        self.v_re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v_re.is_empty()
    }

    /// Whether `(v, i)` lies inside every box.
    pub fn contains(&self, v: &[Complex64], i: &[Complex64]) -> bool {
        let inside = |(lo, hi): Interval, x: f64| lo <= x && x <= hi;
        (0..self.len()).all(|n| {
            inside(self.v_re[n], v[n].re)
                && inside(self.v_im[n], v[n].im)
                && inside(self.i_re[n], i[n].re)
                && inside(self.i_im[n], i[n].im)
        })
    }
}

/// Relaxation of `z = x·y` over a box.
#[derive(Debug, Clone, PartialEq)]
pub enum Envelope {
    /// Four inequalities `expr ≤ 0`.
    Facets([LinExpr; 4]),
    /// A fixed factor makes the product linear: `expr = 0`.
    Exact(LinExpr),
}

impl Envelope {
    /// Whether the point satisfies the envelope within `tol`.
    pub fn admits(&self, x: &[f64], tol: f64) -> bool {
        match self {
            Envelope::Facets(f) => f.iter().all(|e| e.eval(x) <= tol),
            Envelope::Exact(e) => e.eval(x).abs() <= tol,
        }
    }
}

/// McCormick envelope of `z = x·y` with `x ∈ bx`, `y ∈ by`.
pub fn mccormick_envelope(x: usize, y: usize, z: usize, bx: Interval, by: Interval) -> Envelope {
    let (xl, xu) = bx;
    let (yl, yu) = by;
    if xl == xu {
        return Envelope::Exact(LinExpr::var(z).term(y, -xl));
    }
    if yl == yu {
        return Envelope::Exact(LinExpr::var(z).term(x, -yl));
    }
    let facet = |a: f64, b: f64, sign: f64| {
        // sign · (a·y + b·x − a·b − z) ≤ 0
        LinExpr::new()
            .term(y, sign * a)
            .term(x, sign * b)
            .term(z, -sign)
            .plus(-sign * a * b)
    };
    Envelope::Facets([
        facet(xl, yl, 1.0),
        facet(xu, yu, 1.0),
        // z ≤ x̄y + y̲x − x̄y̲
        facet(xu, yl, -1.0),
        // z ≤ x̲y + ȳx − x̲ȳ
        facet(xl, yu, -1.0),
    ])
}

/// Operating point the products are expanded around.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LinearisationPoint {
    pub v: Vec<Complex64>,
    pub i: Vec<Complex64>,
}

impl LinearisationPoint {
    /// Products `[V^R I^R, V^R I^I, V^I I^R, V^I I^I]` at node `n`.
    pub fn products(&self, n: usize) -> [f64; 4] {
        products(self.v[n], self.i[n])
    }
}

/// `[V^R I^R, V^R I^I, V^I I^R, V^I I^I]`.
pub fn products(v: Complex64, i: Complex64) -> [f64; 4] {
    [v.re * i.re, v.re * i.im, v.im * i.re, v.im * i.im]
}

/// First-order expansion of `x·y` at `(xk, yk)`, evaluated at `(x, y)`.
pub fn linearised_product(xk: f64, yk: f64, x: f64, y: f64) -> f64 {
    xk * y + x * yk - xk * yk
}

/// Affine surrogates `[X^RR, X^RI, X^IR, X^II]` of node `n`'s products.
pub fn surrogate(lin: &LinearisationPoint, vars: &NodeVars, n: usize) -> [LinExpr; 4] {
    let (v, i) = (lin.v[n], lin.i[n]);
    let affine = |xk: f64, x: usize, yk: f64, y: usize| {
        LinExpr::new().term(y, xk).term(x, yk).plus(-xk * yk)
    };
    [
        affine(v.re, vars.v_re, i.re, vars.i_re),
        affine(v.re, vars.v_re, i.im, vars.i_im),
        affine(v.im, vars.v_im, i.re, vars.i_re),
        affine(v.im, vars.v_im, i.im, vars.i_im),
    ]
}

/// How the trust-region deviation vectors are grouped into cones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum TrustRegionMode {
    /// One four-dimensional cone per node.
    #[default]
    PerNode,
    /// A single cone over all nodes' deviations.
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SubproblemOptions {
    pub trust_region: TrustRegionMode,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SubproblemError {
    #[error("trust-region radius must be positive, got δ² = {0}")]
    NonPositiveRadius(f64),
    #[error("slack voltage at node {0} lies outside the McCormick bounds")]
    SlackOutsideBounds(usize),
    #[error("invalid linearisation point: zero voltage at node {0}")]
    ZeroVoltage(usize),
    #[error("invalid linearisation point: non-finite value at node {0}")]
    NonFinite(usize),
    #[error("invalid linearisation point: slack voltage at node {0} differs from the slack record")]
    SlackMismatch(usize),
    #[error("expected {expected} nodes, got {got}")]
    Dimension { expected: usize, got: usize },
}

/// Assembles the convex subproblem at `lin` with squared trust-region radius
/// `delta2`.
pub fn build_subproblem(
    network: &Network,
    ybus: &YBus,
    lin: &LinearisationPoint,
    bounds: &McCormickBounds,
    delta2: f64,
    options: &SubproblemOptions,
) -> Result<(ConicProgram, VariableMap), SubproblemError> {
    let count = network.index().len();
    for got in [lin.v.len(), lin.i.len(), bounds.len(), ybus.dim()] {
        if got != count {
            return Err(SubproblemError::Dimension {
                expected: count,
                got,
            });
        }
    }
    if !(delta2 > 0.0) || !delta2.is_finite() {
        return Err(SubproblemError::NonPositiveRadius(delta2));
    }
    for n in 0..count {
        let (v, i) = (lin.v[n], lin.i[n]);
        if !(v.re.is_finite() && v.im.is_finite() && i.re.is_finite() && i.im.is_finite()) {
            return Err(SubproblemError::NonFinite(n));
        }
        if let Some(vs) = network.slack_voltage(n) {
            if v != vs {
                return Err(SubproblemError::SlackMismatch(n));
            }
            let inside = |(lo, hi): Interval, x: f64| lo <= x && x <= hi;
            if !inside(bounds.v_re[n], vs.re) || !inside(bounds.v_im[n], vs.im) {
                return Err(SubproblemError::SlackOutsideBounds(n));
            }
        } else if v.norm() == 0.0 {
            return Err(SubproblemError::ZeroVoltage(n));
        }
    }

    let map = VariableMap::new(network);
    let mut p = ConicProgram::new(map.len());
    let delta = delta2.sqrt();
    let demand = network.demand();
    let generators = network.generator_limits();
    let mut deviations: Vec<LinExpr> = Vec::with_capacity(4 * count);

    for (n, vars) in map.nodes.iter().enumerate() {
        let slack = network.is_slack_node(n);

        // Boxes; fixed boxes become equalities in the backend.
        p.set_bounds(vars.v_re, bounds.v_re[n].0, bounds.v_re[n].1);
        p.set_bounds(vars.v_im, bounds.v_im[n].0, bounds.v_im[n].1);
        p.set_bounds(vars.i_re, bounds.i_re[n].0, bounds.i_re[n].1);
        p.set_bounds(vars.i_im, bounds.i_im[n].0, bounds.i_im[n].1);

        // Voltage deviation objective.
        if !slack {
            let r = network.reference_at(n);
            for (idx, target) in [(vars.v_re, r.re), (vars.v_im, r.im)] {
                p.add_objective_product(idx, idx, 1.0);
                p.add_objective_linear(idx, -2.0 * target);
                p.add_objective_constant(target * target);
            }
        }

        // I = Y V, real and imaginary rows.
        let mut re = LinExpr::var(vars.i_re);
        let mut im = LinExpr::var(vars.i_im);
        for (col, y) in ybus.row(n) {
            let c = &map.nodes[col];
            re.add_term(c.v_re, -y.re);
            re.add_term(c.v_im, y.im);
            im.add_term(c.v_re, -y.im);
            im.add_term(c.v_im, -y.re);
        }
        p.add_equality(re);
        p.add_equality(im);

        // McCormick envelopes of the four products.
        let products = [
            (vars.v_re, vars.i_re, vars.m_rr, bounds.v_re[n], bounds.i_re[n]),
            (vars.v_re, vars.i_im, vars.m_ri, bounds.v_re[n], bounds.i_im[n]),
            (vars.v_im, vars.i_re, vars.m_ir, bounds.v_im[n], bounds.i_re[n]),
            (vars.v_im, vars.i_im, vars.m_ii, bounds.v_im[n], bounds.i_im[n]),
        ];
        for (x, y, z, bx, by) in products {
            match mccormick_envelope(x, y, z, bx, by) {
                Envelope::Facets(f) => {
                    for e in f {
                        p.add_inequality(e);
                    }
                }
                Envelope::Exact(e) => {
                    p.add_equality(e);
                }
            }
        }

        // Power balance: m^RR + m^II = P^G − P^D, m^IR − m^RI = Q^G − Q^D.
        let mut pb = LinExpr::var(vars.m_rr).term(vars.m_ii, 1.0).plus(demand[n].re);
        let mut qb = LinExpr::var(vars.m_ir).term(vars.m_ri, -1.0).plus(demand[n].im);
        if let (Some(g), Some(lim)) = (map.generators[n], &generators[n]) {
            pb.add_term(g.p, -1.0);
            qb.add_term(g.q, -1.0);
            p.set_bounds(g.p, lim.p_min, lim.p_max);
            p.set_bounds(g.q, lim.q_min, lim.q_max);
        }
        p.add_equality(pb);
        p.add_equality(qb);

        // Voltage magnitude limits.
        if !slack {
            let (vmin, vmax) = network.voltage_limits(n);
            p.add_cone(
                LinExpr::constant(vmax),
                vec![LinExpr::var(vars.v_re), LinExpr::var(vars.v_im)],
            );
            let vk = lin.v[n];
            p.add_inequality(
                LinExpr::new()
                    .term(vars.v_re, -vk.re)
                    .term(vars.v_im, -vk.im)
                    .plus(vmin * vk.norm()),
            );
        }

        // Trust-region deviation e = m − X.
        let x = surrogate(lin, vars, n);
        for (aux, xe) in vars.aux().into_iter().zip(x) {
            let mut e = xe.scaled(-1.0);
            e.add_term(aux, 1.0);
            deviations.push(e);
        }
    }

    match options.trust_region {
        TrustRegionMode::PerNode => {
            for chunk in deviations.chunks(4) {
                p.add_cone(LinExpr::constant(delta), chunk.to_vec());
            }
        }
        TrustRegionMode::Global => {
            p.add_cone(LinExpr::constant(delta), deviations);
        }
    }
    Ok((p, map))
}

/// `‖m − X‖` per node for a subproblem solution `x`.
pub fn alignment_residuals(lin: &LinearisationPoint, map: &VariableMap, x: &[f64]) -> Vec<f64> {
    map.nodes
        .iter()
        .enumerate()
        .map(|(n, vars)| {
            let s = surrogate(lin, vars, n);
            vars.aux()
                .iter()
                .zip(&s)
                .map(|(&a, e)| {
                    let d = x[a] - e.eval(x);
                    d * d
                })
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::{check_feasibility, ConicBackend, InteriorPoint, Tolerances};
    use crate::netmodel::{assemble_ybus, diagonal_block, nominal_phasors, Phase, PhaseMask};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn chain(loads: &[Complex64]) -> Network {
        let a = PhaseMask::single(Phase::A);
        let y = c(1.0, 0.0) / c(0.01, 0.02);
        let mut b = Network::builder().bus("0", a, 0.9, 1.1).slack("0", nominal_phasors());
        for (k, s) in loads.iter().enumerate() {
            let id = alloc::format!("{}", k + 1);
            let prev = alloc::format!("{k}");
            b = b
                .bus(&id, a, 0.9, 1.1)
                .branch(&prev, &id, diagonal_block(y, a));
            if s.norm() > 0.0 {
                b = b.load(&id, Phase::A, *s);
            }
        }
        b.build().unwrap()
    }

    fn flat(net: &Network, ybus: &YBus) -> LinearisationPoint {
        let v = crate::pfcore::flat_voltages(net);
        let i = ybus.mul(&v);
        LinearisationPoint { v, i }
    }

    #[test]
    fn bounds_follow_load_and_voltage_limits() {
        let net = chain(&[c(0.03, 0.04)]);
        let b = default_bounds(&net);
        assert_eq!(b.v_re[1], (-1.1, 1.1));
        assert_eq!(b.v_re[0], (1.0, 1.0));
        assert_eq!(b.v_im[0], (0.0, 0.0));
        let i_bar = 2.0 * 0.05 / 0.9;
        assert!((b.i_re[1].1 - i_bar).abs() < 1e-15);
        assert!((b.i_im[0].0 + i_bar).abs() < 1e-15);
    }

    #[test]
    fn bounds_contain_power_flow_solution() {
        let net = chain(&[c(0.05, 0.02), c(0.08, 0.03)]);
        let ybus = assemble_ybus(&net, net.index()).unwrap();
        let inj = crate::pfcore::net_injections(&net, &[c(0.0, 0.0); 3]);
        let pf = crate::pfcore::solve_power_flow(
            &net,
            &ybus,
            &inj,
            &crate::pfcore::flat_voltages(&net),
            &Default::default(),
        )
        .unwrap();
        assert!(default_bounds(&net).contains(&pf.v, &pf.i));
    }

    #[test]
    fn envelope_interior_point() {
        let env = mccormick_envelope(0, 1, 2, (0.0, 2.0), (0.0, 3.0));
        // at (1, 1.5): z ∈ [0, 3]
        for (z, ok) in [(0.0, true), (1.5, true), (3.0, true), (-0.01, false), (3.01, false)] {
            assert_eq!(env.admits(&[1.0, 1.5, z], 1e-12), ok, "z = {z}");
        }
    }

    #[test]
    fn envelope_exact_at_corners() {
        let env = mccormick_envelope(0, 1, 2, (0.0, 2.0), (0.0, 3.0));
        assert!(env.admits(&[2.0, 3.0, 6.0], 1e-12));
        assert!(!env.admits(&[2.0, 3.0, 6.0 - 1e-9], 1e-12));
        assert!(!env.admits(&[2.0, 3.0, 6.0 + 1e-9], 1e-12));
    }

    #[test]
    fn envelope_contains_true_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let (xl, yl) = (rng.random_range(-2.0..1.0), rng.random_range(-2.0..1.0));
            let (xu, yu) = (
                xl + rng.random_range(0.01..2.0),
                yl + rng.random_range(0.01..2.0),
            );
            let env = mccormick_envelope(0, 1, 2, (xl, xu), (yl, yu));
            let x = rng.random_range(xl..=xu);
            let y = rng.random_range(yl..=yu);
            assert!(env.admits(&[x, y, x * y], 1e-12));
        }
    }

    #[test]
    fn degenerate_box_is_exact() {
        let env = mccormick_envelope(0, 1, 2, (0.5, 0.5), (-1.0, 1.0));
        assert_eq!(env, Envelope::Exact(LinExpr::var(2).term(1, -0.5)));
        let env = mccormick_envelope(0, 1, 2, (-1.0, 1.0), (2.0, 2.0));
        assert!(env.admits(&[0.3, 2.0, 0.6], 1e-15));
        assert!(!env.admits(&[0.3, 2.0, 0.7], 1e-3));
    }

    #[test]
    fn surrogate_exact_at_expansion_point() {
        assert_eq!(linearised_product(1.0, 1.0, 1.0, 1.0), 1.0);
        let x = linearised_product(1.0, 1.0, 1.1, 0.9);
        assert!((x - 1.0).abs() < 1e-15);
        assert!((x - 1.1 * 0.9 - 0.01).abs() < 1e-15);
    }

    #[test]
    fn surrogate_error_is_product_of_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let vars = NodeVars {
            v_re: 0,
            v_im: 1,
            i_re: 2,
            i_im: 3,
            m_rr: 4,
            m_ri: 5,
            m_ir: 6,
            m_ii: 7,
        };
        for _ in 0..10_000 {
            let mut r = || rng.random_range(-2.0..2.0);
            let lin = LinearisationPoint {
                v: vec![c(r(), r())],
                i: vec![c(r(), r())],
            };
            let (v, i) = (c(r(), r()), c(r(), r()));
            let x = [v.re, v.im, i.re, i.im, 0.0, 0.0, 0.0, 0.0];
            let s = surrogate(&lin, &vars, 0);
            let exact = products(v, i);
            let step = products(v - lin.v[0], i - lin.i[0]);
            for k in 0..4 {
                let err = s[k].eval(&x) - exact[k];
                assert!((err + step[k]).abs() < 1e-12);
            }
            let at_k = [lin.v[0].re, lin.v[0].im, lin.i[0].re, lin.i[0].im, 0.0, 0.0, 0.0, 0.0];
            let p = lin.products(0);
            for k in 0..4 {
                assert_eq!(s[k].eval(&at_k), p[k]);
            }
        }
    }

    #[test]
    fn two_bus_counts() {
        let net = chain(&[c(0.1, 0.05)]);
        let ybus = assemble_ybus(&net, net.index()).unwrap();
        let lin = flat(&net, &ybus);
        let (p, map) =
            build_subproblem(&net, &ybus, &lin, &default_bounds(&net), 0.1, &Default::default())
                .unwrap();
        assert_eq!(map.len(), 2 * 8 + 2);
        assert_eq!(p.num_vars(), 18);
        // one voltage cone on the load node plus two trust-region cones
        let tr = p.cones().iter().filter(|c| c.args.len() == 4).count();
        assert_eq!(tr, 2);
        assert!(p.validate().is_ok());
        let (g, _) = build_subproblem(
            &net,
            &ybus,
            &lin,
            &default_bounds(&net),
            0.1,
            &SubproblemOptions {
                trust_region: TrustRegionMode::Global,
            },
        )
        .unwrap();
        assert_eq!(g.cones().iter().filter(|c| c.args.len() == 8).count(), 1);
    }

    #[test]
    fn load_free_subproblem_is_flat() {
        let net = chain(&[c(0.0, 0.0)]);
        let ybus = assemble_ybus(&net, net.index()).unwrap();
        let lin = flat(&net, &ybus);
        let (p, map) =
            build_subproblem(&net, &ybus, &lin, &default_bounds(&net), 0.1, &Default::default())
                .unwrap();
        let sol = InteriorPoint.solve(&p, &Tolerances::default()).unwrap();
        assert!(sol.is_optimal(), "{:?}", sol.status);
        assert!(sol.objective.abs() < 1e-8);
        let v = map.voltages(&sol.x);
        assert!((v[1] - c(1.0, 0.0)).norm() < 1e-6);
    }

    #[test]
    fn four_bus_solution_respects_trust_region() {
        let net = chain(&[c(0.05, 0.02), c(0.03, 0.01), c(0.04, 0.02)]);
        let ybus = assemble_ybus(&net, net.index()).unwrap();
        let lin = flat(&net, &ybus);
        let delta2 = 1e-4;
        let (p, map) =
            build_subproblem(&net, &ybus, &lin, &default_bounds(&net), delta2, &Default::default())
                .unwrap();
        let sol = InteriorPoint.solve(&p, &Tolerances::default()).unwrap();
        assert!(sol.is_optimal(), "{:?}", sol.status);
        assert!(check_feasibility(&p, &sol.x, 1e-7).unwrap().is_feasible());
        for r in alignment_residuals(&lin, &map, &sol.x) {
            assert!(r <= delta2.sqrt() + 1e-7);
        }
    }

    #[test]
    fn rejects_invalid_inputs() {
        let net = chain(&[c(0.1, 0.05)]);
        let ybus = assemble_ybus(&net, net.index()).unwrap();
        let b = default_bounds(&net);
        let mut lin = flat(&net, &ybus);
        let opts = SubproblemOptions::default();
        assert_eq!(
            build_subproblem(&net, &ybus, &lin, &b, 0.0, &opts).unwrap_err(),
            SubproblemError::NonPositiveRadius(0.0)
        );
        lin.v[1] = c(0.0, 0.0);
        assert_eq!(
            build_subproblem(&net, &ybus, &lin, &b, 0.1, &opts).unwrap_err(),
            SubproblemError::ZeroVoltage(1)
        );
        let lin = flat(&net, &ybus);
        let mut bad = b.clone();
        bad.v_re[0] = (0.5, 0.6);
        assert_eq!(
            build_subproblem(&net, &ybus, &lin, &bad, 0.1, &opts).unwrap_err(),
            SubproblemError::SlackOutsideBounds(0)
        );
    }
}
