//! Reference backend: primal-dual interior-point method with Nesterov–Todd
//! scaling and Mehrotra predictor-corrector steps.
//!
//! The program is brought to the standard form
//!
//! ```text
//! minimize ½ xᵀPx + qᵀx   s.t.  A x = b,  G x + s = h,  s ∈ K
//! ```
//!
//! with `K` an orthant times second-order cones. Newton systems are reduced to
//! `(P + GᵀW⁻²G) Δx + AᵀΔy = r₁`, `AΔx = r₂` and solved by a dense Cholesky
//! of `P + GᵀW⁻²G + AᵀA` followed by a Cholesky of the Schur complement on `A`.
//! When the main solve fails, a phase-I problem decides infeasibility and
//! supplies the most violated constraint.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use super::cone::{ConeLayout, NtScaling};
use super::{
    check_feasibility, ConicBackend, ConicError, ConicProgram, ConicSolution, LinExpr,
    SolveStatus, Tolerances,
};
use crate::linalg::{dot, norm2, norm_inf, Cholesky, DenseMatrix};

type SparseRow = Vec<(usize, f64)>;

#[derive(Debug, Clone, Copy, Default)]
pub struct InteriorPoint;

impl ConicBackend for InteriorPoint {
    fn name(&self) -> &str {
        "interior-point"
    }

    fn solve(
        &self,
        program: &ConicProgram,
        tol: &Tolerances,
    ) -> Result<ConicSolution, ConicError> {
        program.validate()?;
        let form = StandardForm::from_program(program);
        let out = run(&form, tol);
        let report = check_feasibility(program, &out.x, 0.0)?;
        let mut sol = ConicSolution {
            status: out.status,
            objective: program.objective(&out.x),
            primal_residual: report.max_violation(),
            dual_residual: Some(out.dres),
            duality_gap: Some(out.gap),
            iterations: out.iterations,
            x: out.x,
            witness: None,
        };
        if sol.status != SolveStatus::Optimal {
            let phase_one = phase_one_program(program);
            let p1 = run(&StandardForm::from_program(&phase_one), tol);
            let n = program.num_vars();
            let sigma = p1.x[n];
            let x0 = &p1.x[..n];
            let rep = check_feasibility(program, x0, 0.0)?;
            let threshold = feasibility_scale(&form) * tol.primal * 10.0;
            if (p1.status == SolveStatus::Optimal && sigma > threshold)
                || rep.equalities.iter().any(|e| *e > threshold.sqrt())
            {
                sol.status = SolveStatus::Infeasible;
                sol.witness = rep.worst();
            }
        }
        Ok(sol)
    }
}

fn feasibility_scale(form: &StandardForm) -> f64 {
    1.0 + norm_inf(&form.b).max(norm_inf(&form.h))
}

/// Relaxes every inequality, bound and cone by a shared margin `σ ≥ −1`
/// (index `n`) and minimizes it.
fn phase_one_program(program: &ConicProgram) -> ConicProgram {
    let n = program.num_vars();
    let sigma = n;
    let mut p = ConicProgram::new(n + 1);
    for i in 0..n {
        p.add_objective_product(i, i, 0.5e-8);
    }
    p.add_objective_linear(sigma, 1.0);
    for e in program.equalities() {
        p.add_equality(e.clone());
    }
    for g in program.inequalities() {
        p.add_inequality(g.clone().term(sigma, -1.0));
    }
    for i in 0..n {
        let (l, u) = (program.lower()[i], program.upper()[i]);
        if l == u {
            p.add_equality(LinExpr::var(i).plus(-l));
            continue;
        }
        if l.is_finite() {
            p.add_inequality(LinExpr::new().term(i, -1.0).term(sigma, -1.0).plus(l));
        }
        if u.is_finite() {
            p.add_inequality(LinExpr::var(i).term(sigma, -1.0).plus(-u));
        }
    }
    for c in program.cones() {
        p.add_cone(c.radius.clone().term(sigma, 1.0), c.args.clone());
    }
    p.set_bounds(sigma, -1.0, f64::INFINITY);
    p
}

struct StandardForm {
    n: usize,
    p: DenseMatrix,
    q: Vec<f64>,
    a: Vec<SparseRow>,
    b: Vec<f64>,
    g: Vec<SparseRow>,
    h: Vec<f64>,
    layout: ConeLayout,
}

impl StandardForm {
    fn from_program(program: &ConicProgram) -> Self {
        let n = program.num_vars();
        let mut a = Vec::new();
        let mut b = Vec::new();
        for e in program.equalities() {
            a.push(e.terms.clone());
            b.push(-e.constant);
        }
        let mut g: Vec<SparseRow> = Vec::new();
        let mut h = Vec::new();
        for e in program.inequalities() {
            g.push(e.terms.clone());
            h.push(-e.constant);
        }
        for i in 0..n {
            let (l, u) = (program.lower()[i], program.upper()[i]);
            if l == u {
                a.push(vec![(i, 1.0)]);
                b.push(l);
                continue;
            }
            if l.is_finite() {
                g.push(vec![(i, -1.0)]);
                h.push(-l);
            }
            if u.is_finite() {
                g.push(vec![(i, 1.0)]);
                h.push(u);
            }
        }
        let nonneg = g.len();
        let mut dims = Vec::with_capacity(program.cones().len());
        for c in program.cones() {
            for e in core::iter::once(&c.radius).chain(&c.args) {
                g.push(e.terms.iter().map(|&(i, v)| (i, -v)).collect());
                h.push(e.constant);
            }
            dims.push(c.args.len() + 1);
        }
        Self {
            n,
            p: program.quadratic_matrix(),
            q: program.linear().to_vec(),
            a,
            b,
            g,
            h,
            layout: ConeLayout::new(nonneg, &dims),
        }
    }

    fn mul_rows(rows: &[SparseRow], x: &[f64]) -> Vec<f64> {
        rows.iter()
            .map(|r| r.iter().map(|&(i, v)| v * x[i]).sum())
            .collect()
    }

    fn mul_rows_t(&self, rows: &[SparseRow], y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (r, &yk) in rows.iter().zip(y) {
            if yk != 0.0 {
                for &(i, v) in r {
                    out[i] += v * yk;
                }
            }
        }
        out
    }
}

/// Factorized reduced KKT system for a fixed scaling.
struct Kkt {
    h: DenseMatrix,
    chol: Cholesky,
    /// Rows `u_j = L⁻¹ a_j`.
    u: Vec<Vec<f64>>,
    schur: Option<Cholesky>,
}

/// Scaling weights: orthant diagonal of `W⁻²` and dense cone blocks of `W⁻²`.
struct Weights {
    nonneg: Vec<f64>,
    soc: Vec<Vec<f64>>,
}

impl Weights {
    fn identity(layout: &ConeLayout) -> Self {
        Self {
            nonneg: vec![1.0; layout.nonneg],
            soc: layout
                .soc
                .iter()
                .map(|&(_, k)| {
                    let mut m = vec![0.0; k * k];
                    for i in 0..k {
                        m[i * k + i] = 1.0;
                    }
                    m
                })
                .collect(),
        }
    }

    fn from_scaling(layout: &ConeLayout, w: &NtScaling) -> Self {
        Self {
            nonneg: w.nonneg_inv_sq().collect(),
            soc: (0..layout.soc.len())
                .map(|c| w.soc_inv_sq(layout, c))
                .collect(),
        }
    }
}

impl Kkt {
    fn factor(form: &StandardForm, weights: &Weights) -> Option<Self> {
        let n = form.n;
        let mut h = form.p.clone();
        for (row, &w) in form.g[..form.layout.nonneg].iter().zip(&weights.nonneg) {
            for &(i, a) in row {
                for &(j, b) in row {
                    h[(i, j)] += w * a * b;
                }
            }
        }
        for (&(o, k), m) in form.layout.soc.iter().zip(&weights.soc) {
            for r in 0..k {
                for c in 0..k {
                    let w = m[r * k + c];
                    if w == 0.0 {
                        continue;
                    }
                    for &(i, a) in &form.g[o + r] {
                        for &(j, b) in &form.g[o + c] {
                            h[(i, j)] += w * a * b;
                        }
                    }
                }
            }
        }
        let mut reg = h_aug(form, &h);
        // Try an exact factorization first, then growing relative shifts.
        let diag: Vec<f64> = (0..n).map(|i| reg[(i, i)]).collect();
        let mut eps = 0.0;
        let chol = loop {
            for i in 0..n {
                reg[(i, i)] = diag[i] + eps * (diag[i].abs() + 1.0);
            }
            if let Some(c) = Cholesky::factor(&reg) {
                break c;
            }
            eps = if eps == 0.0 { 1e-14 } else { eps * 100.0 };
            if eps > 1e-4 {
                return None;
            }
        };
        let mut u = Vec::with_capacity(form.a.len());
        for row in &form.a {
            let mut v = vec![0.0; n];
            for &(i, a) in row {
                v[i] += a;
            }
            chol.forward_in_place(&mut v);
            u.push(v);
        }
        let p = u.len();
        let schur = if p == 0 {
            None
        } else {
            let mut s = DenseMatrix::zeros(p, p);
            for i in 0..p {
                for j in 0..=i {
                    let v = dot(&u[i], &u[j]);
                    s[(i, j)] = v;
                    s[(j, i)] = v;
                }
            }
            let sc = (0..p).fold(1e-300f64, |m, i| m.max(s[(i, i)]));
            let mut eps = 1e-14 * sc;
            loop {
                let mut t = s.clone();
                for i in 0..p {
                    t[(i, i)] += eps;
                }
                if let Some(c) = Cholesky::factor(&t) {
                    break Some(c);
                }
                eps *= 100.0;
                if eps > 1e-4 * sc {
                    return None;
                }
            }
        };
        Some(Self { h, chol, u, schur })
    }

    fn solve_once(&self, form: &StandardForm, r1: &[f64], r2: &[f64]) -> (Vec<f64>, Vec<f64>) {
        // H̃ = H + AᵀA; right-hand side r1 + Aᵀ r2.
        let mut t: Vec<f64> = r1.to_vec();
        let at = form.mul_rows_t(&form.a, r2);
        for (ti, ai) in t.iter_mut().zip(&at) {
            *ti += ai;
        }
        self.chol.forward_in_place(&mut t);
        let mut dy: Vec<f64> = self
            .u
            .iter()
            .zip(r2)
            .map(|(u, r)| dot(u, &t) - r)
            .collect();
        if let Some(s) = &self.schur {
            s.solve_in_place(&mut dy);
        }
        for (u, &y) in self.u.iter().zip(&dy) {
            if y != 0.0 {
                for (ti, ui) in t.iter_mut().zip(u) {
                    *ti -= y * ui;
                }
            }
        }
        self.chol.backward_in_place(&mut t);
        (t, dy)
    }

    /// Solves with a few steps of iterative refinement on the unregularized
    /// system.
    fn solve(&self, form: &StandardForm, r1: &[f64], r2: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (mut dx, mut dy) = self.solve_once(form, r1, r2);
        for _ in 0..3 {
            let hx = self.h.mul_vec(&dx);
            let aty = form.mul_rows_t(&form.a, &dy);
            let e1: Vec<f64> = (0..form.n).map(|i| r1[i] - hx[i] - aty[i]).collect();
            let ax = StandardForm::mul_rows(&form.a, &dx);
            let e2: Vec<f64> = r2.iter().zip(&ax).map(|(r, a)| r - a).collect();
            let err = norm_inf(&e1).max(norm_inf(&e2));
            let scale = 1.0 + norm_inf(r1).max(norm_inf(r2));
            if !(err > 1e-14 * scale) {
                break;
            }
            let (cx, cy) = self.solve_once(form, &e1, &e2);
            dx.iter_mut().zip(&cx).for_each(|(a, b)| *a += b);
            dy.iter_mut().zip(&cy).for_each(|(a, b)| *a += b);
        }
        (dx, dy)
    }
}

fn h_aug(form: &StandardForm, h: &DenseMatrix) -> DenseMatrix {
    let mut m = h.clone();
    for row in &form.a {
        for &(i, a) in row {
            for &(j, b) in row {
                m[(i, j)] += a * b;
            }
        }
    }
    m
}

struct Outcome {
    status: SolveStatus,
    x: Vec<f64>,
    iterations: usize,
    dres: f64,
    gap: f64,
}

struct Direction {
    dx: Vec<f64>,
    dy: Vec<f64>,
    ds: Vec<f64>,
    dz: Vec<f64>,
}

/// Solves the scaled Newton system
///
/// ```text
/// P dx + Aᵀdy + GᵀW⁻¹ dz̃ = bx,   A dx = by,   W⁻¹G dx − dz̃ = bz
/// ```
///
/// with `dz̃ = W dz`, refining against the full system.
fn solve_scaled(
    form: &StandardForm,
    kkt: &Kkt,
    w: &NtScaling,
    bx: &[f64],
    by: &[f64],
    bz: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let layout = &form.layout;
    let once = |bx: &[f64], by: &[f64], bz: &[f64]| {
        let gw = form.mul_rows_t(&form.g, &w.apply(layout, bz, true));
        let r1: Vec<f64> = bx.iter().zip(&gw).map(|(a, b)| a + b).collect();
        let (dx, dy) = kkt.solve(form, &r1, by);
        let wg = w.apply(layout, &StandardForm::mul_rows(&form.g, &dx), true);
        let dz: Vec<f64> = wg.iter().zip(bz).map(|(a, b)| a - b).collect();
        (dx, dy, dz)
    };
    let (mut dx, mut dy, mut dz) = once(bx, by, bz);
    let scale = 1.0 + norm_inf(bx).max(norm_inf(by)).max(norm_inf(bz));
    for _ in 0..3 {
        let px = form.p.mul_vec(&dx);
        let aty = form.mul_rows_t(&form.a, &dy);
        let gtz = form.mul_rows_t(&form.g, &w.apply(layout, &dz, true));
        let ex: Vec<f64> = (0..form.n).map(|i| bx[i] - px[i] - aty[i] - gtz[i]).collect();
        let ax = StandardForm::mul_rows(&form.a, &dx);
        let ey: Vec<f64> = by.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let wg = w.apply(layout, &StandardForm::mul_rows(&form.g, &dx), true);
        let ez: Vec<f64> = (0..layout.dim).map(|k| bz[k] - wg[k] + dz[k]).collect();
        let err = norm_inf(&ex).max(norm_inf(&ey)).max(norm_inf(&ez));
        if !(err > 1e-15 * scale) {
            break;
        }
        let (cx, cy, cz) = once(&ex, &ey, &ez);
        dx.iter_mut().zip(&cx).for_each(|(a, b)| *a += b);
        dy.iter_mut().zip(&cy).for_each(|(a, b)| *a += b);
        dz.iter_mut().zip(&cz).for_each(|(a, b)| *a += b);
    }
    (dx, dy, dz)
}

fn newton(
    form: &StandardForm,
    kkt: &Kkt,
    w: &NtScaling,
    rx: &[f64],
    ry: &[f64],
    rz: &[f64],
    rc: &[f64],
) -> Direction {
    let layout = &form.layout;
    let u = layout.divide(&w.lambda, rc);
    let wu = w.apply(layout, &u, false);
    let t: Vec<f64> = rz.iter().zip(&wu).map(|(a, b)| a + b).collect();
    let bz: Vec<f64> = w.apply(layout, &t, true).iter().map(|v| -v).collect();
    let bx: Vec<f64> = rx.iter().map(|v| -v).collect();
    let by: Vec<f64> = ry.iter().map(|v| -v).collect();
    let (dx, dy, dzt) = solve_scaled(form, kkt, w, &bx, &by, &bz);
    let dz = w.apply(layout, &dzt, true);
    let diff: Vec<f64> = u.iter().zip(&dzt).map(|(a, b)| a - b).collect();
    let ds = w.apply(layout, &diff, false);
    Direction { dx, dy, ds, dz }
}

fn run(form: &StandardForm, tol: &Tolerances) -> Outcome {
    let n = form.n;
    let layout = &form.layout;
    let m = layout.dim;
    let fail = |x: Vec<f64>, status, iterations| Outcome {
        status,
        x,
        iterations,
        dres: f64::INFINITY,
        gap: f64::INFINITY,
    };

    // Starting point from the KKT system with W = I.
    let Some(kkt0) = Kkt::factor(form, &Weights::identity(layout)) else {
        return fail(vec![0.0; n], SolveStatus::NumericalFailure, 0);
    };
    let gth = form.mul_rows_t(&form.g, &form.h);
    let r1: Vec<f64> = (0..n).map(|i| gth[i] - form.q[i]).collect();
    let (mut x, mut y) = kkt0.solve(form, &r1, &form.b);
    let gx = StandardForm::mul_rows(&form.g, &x);
    let mut s: Vec<f64> = (0..m).map(|k| form.h[k] - gx[k]).collect();
    let mut z: Vec<f64> = s.iter().map(|v| -v).collect();
    for v in [&mut s, &mut z] {
        if m > 0 {
            let e = layout.min_eig(v);
            if e <= 1e-8 {
                layout.add_identity(v, 1.0 - e);
            }
        }
    }

    let resx0 = 1f64.max(norm2(&form.q));
    let resy0 = 1f64.max(norm2(&form.b));
    let resz0 = 1f64.max(norm2(&form.h));
    let degree = layout.degree().max(1) as f64;
    let mut dres = f64::INFINITY;
    let mut gap = f64::INFINITY;
    let mut stalls = 0;

    for it in 0..=tol.max_iter {
        let px = form.p.mul_vec(&x);
        let aty = form.mul_rows_t(&form.a, &y);
        let gtz = form.mul_rows_t(&form.g, &z);
        let rx: Vec<f64> = (0..n).map(|i| px[i] + form.q[i] + aty[i] + gtz[i]).collect();
        let ax = StandardForm::mul_rows(&form.a, &x);
        let ry: Vec<f64> = ax.iter().zip(&form.b).map(|(a, b)| a - b).collect();
        let gx = StandardForm::mul_rows(&form.g, &x);
        let rz: Vec<f64> = (0..m).map(|k| gx[k] + s[k] - form.h[k]).collect();
        gap = dot(&s, &z);
        let pcost = 0.5 * dot(&x, &px) + dot(&form.q, &x);
        let pres = (norm2(&ry) / resy0).max(norm2(&rz) / resz0);
        dres = norm2(&rx) / resx0;
        let relgap = gap / pcost.abs().max(1.0);
        if !(pres.is_finite() && dres.is_finite() && gap.is_finite()) {
            return fail(x, SolveStatus::NumericalFailure, it);
        }
        if pres <= tol.primal && dres <= tol.dual && (gap <= tol.gap || relgap <= tol.gap) {
            return Outcome {
                status: SolveStatus::Optimal,
                x,
                iterations: it,
                dres,
                gap,
            };
        }
        if it == tol.max_iter {
            break;
        }
        let Some(w) = NtScaling::new(layout, &s, &z) else {
            return fail(x, SolveStatus::NumericalFailure, it);
        };
        let Some(kkt) = Kkt::factor(form, &Weights::from_scaling(layout, &w)) else {
            return fail(x, SolveStatus::NumericalFailure, it);
        };
        let mu = gap / degree;

        // Predictor.
        let ll = layout.product(&w.lambda, &w.lambda);
        let rc: Vec<f64> = ll.iter().map(|v| -v).collect();
        let aff = newton(form, &kkt, &w, &rx, &ry, &rz, &rc);
        let alpha_aff = 1f64
            .min(layout.max_step(&s, &aff.ds))
            .min(layout.max_step(&z, &aff.dz));
        let s_aff: Vec<f64> = (0..m).map(|k| s[k] + alpha_aff * aff.ds[k]).collect();
        let z_aff: Vec<f64> = (0..m).map(|k| z[k] + alpha_aff * aff.dz[k]).collect();
        let sigma = if gap > 0.0 {
            (dot(&s_aff, &z_aff) / gap).clamp(0.0, 1.0).powi(3)
        } else {
            0.0
        };

        // Corrector.
        let ds_t = w.apply(layout, &aff.ds, true);
        let dz_t = w.apply(layout, &aff.dz, false);
        let cross = layout.product(&ds_t, &dz_t);
        let e = layout.identity();
        let rc: Vec<f64> = (0..m)
            .map(|k| -ll[k] + sigma * mu * e[k] - cross[k])
            .collect();
        let dir = newton(form, &kkt, &w, &rx, &ry, &rz, &rc);
        let alpha_max = layout
            .max_step(&s, &dir.ds)
            .min(layout.max_step(&z, &dir.dz));
        let alpha = (0.99 * alpha_max).min(1.0);
        if !(alpha > 1e-12) {
            stalls += 1;
            if stalls > 3 {
                return fail(x, SolveStatus::NumericalFailure, it);
            }
        }
        for i in 0..n {
            x[i] += alpha * dir.dx[i];
        }
        for (yi, d) in y.iter_mut().zip(&dir.dy) {
            *yi += alpha * d;
        }
        for k in 0..m {
            s[k] += alpha * dir.ds[k];
            z[k] += alpha * dir.dz[k];
        }
    }
    Outcome {
        status: SolveStatus::IterationLimit,
        x,
        iterations: tol.max_iter,
        dres,
        gap,
    }
}
