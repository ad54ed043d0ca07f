//! Convex programs with a quadratic objective, linear constraints and
//! second-order cones, plus the backend contract used to solve them.
//!
//! A [`ConicProgram`] is
//!
//! ```text
//! minimize    ½ xᵀ P x + cᵀ x + k
//! subject to  e_i(x) = 0            (equalities)
//!             g_j(x) ≤ 0            (inequalities)
//!             ‖(a_1(x), …, a_m(x))‖₂ ≤ r(x)   (cones)
//!             l ≤ x ≤ u
//! ```
//!
//! where every `e`, `g`, `a`, `r` is an affine [`LinExpr`]. A constant-radius
//! cone is simply one whose radius expression has no terms.

mod cone;
mod ipm;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use core::fmt::Write;

use thiserror::Error;

use crate::linalg::{Cholesky, DenseMatrix};

pub use ipm::InteriorPoint;

/// Affine expression `Σ coef·x_i + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn var(i: usize) -> Self {
        Self {
            terms: vec![(i, 1.0)],
            constant: 0.0,
        }
    }

    /// Adds `coef·x_i`, skipping exact zeros.
    pub fn term(mut self, i: usize, coef: f64) -> Self {
        self.add_term(i, coef);
        self
    }

    pub fn plus(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn add_term(&mut self, i: usize, coef: f64) {
        if coef != 0.0 {
            self.terms.push((i, coef));
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(i, a)| a * x[i]).sum::<f64>() + self.constant
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            terms: self.terms.iter().map(|&(i, a)| (i, a * s)).collect(),
            constant: self.constant * s,
        }
    }

    /// Merges duplicate indices and drops zero coefficients, sorted by index.
    pub fn compact(mut self) -> Self {
        self.terms.sort_by_key(|t| t.0);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(self.terms.len());
        for (i, a) in self.terms {
            match out.last_mut() {
                Some(last) if last.0 == i => last.1 += a,
                _ => out.push((i, a)),
            }
        }
        out.retain(|t| t.1 != 0.0);
        Self {
            terms: out,
            constant: self.constant,
        }
    }
}

/// `‖args‖₂ ≤ radius`.
#[derive(Debug, Clone, PartialEq)]
pub struct SocConstraint {
    pub radius: LinExpr,
    pub args: Vec<LinExpr>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", content = "index", rename_all = "snake_case"))]
pub enum ConstraintRef {
    Equality(usize),
    Inequality(usize),
    Lower(usize),
    Upper(usize),
    Cone(usize),
}

/// A constraint together with how badly it is violated.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct Violation {
    pub constraint: ConstraintRef,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProgramError {
    #[error("variable index {index} out of range in {location} (n = {n})")]
    IndexOutOfRange {
        location: String,
        index: usize,
        n: usize,
    },
    #[error("non-finite coefficient in {0}")]
    NonFinite(String),
    #[error("objective quadratic form is not positive semidefinite")]
    NotPsd,
    #[error("bounds of variable {0} are inconsistent")]
    Bounds(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicProgram {
    n: usize,
    /// Entries `(i, j, v)` of the symmetric matrix `P`, `i ≤ j`.
    quad: Vec<(usize, usize, f64)>,
    linear: Vec<f64>,
    constant: f64,
    equalities: Vec<LinExpr>,
    inequalities: Vec<LinExpr>,
    cones: Vec<SocConstraint>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ConicProgram {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            quad: Vec::new(),
            linear: vec![0.0; n],
            constant: 0.0,
            equalities: Vec::new(),
            inequalities: Vec::new(),
            cones: Vec::new(),
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.n
    }

    /// Adds `w·x_i·x_j` to the objective.
    pub fn add_objective_product(&mut self, i: usize, j: usize, w: f64) {
        if i == j {
            self.quad.push((i, i, 2.0 * w));
        } else {
            self.quad.push((i.min(j), i.max(j), w));
        }
    }

    pub fn add_objective_linear(&mut self, i: usize, c: f64) {
        self.linear[i] += c;
    }

    pub fn add_objective_constant(&mut self, k: f64) {
        self.constant += k;
    }

    /// `expr = 0`. Returns the equality's index.
    pub fn add_equality(&mut self, expr: LinExpr) -> usize {
        self.equalities.push(expr.compact());
        self.equalities.len() - 1
    }

    /// `expr ≤ 0`. Returns the inequality's index.
    pub fn add_inequality(&mut self, expr: LinExpr) -> usize {
        self.inequalities.push(expr.compact());
        self.inequalities.len() - 1
    }

    /// `‖args‖₂ ≤ radius`. Returns the cone's index.
    pub fn add_cone(&mut self, radius: LinExpr, args: Vec<LinExpr>) -> usize {
        self.cones.push(SocConstraint {
            radius: radius.compact(),
            args: args.into_iter().map(LinExpr::compact).collect(),
        });
        self.cones.len() - 1
    }

    pub fn set_bounds(&mut self, i: usize, lower: f64, upper: f64) {
        self.lower[i] = lower;
        self.upper[i] = upper;
    }

    pub fn quadratic_entries(&self) -> &[(usize, usize, f64)] {
        &self.quad
    }

    pub fn linear(&self) -> &[f64] {
        &self.linear
    }

    pub fn objective_constant(&self) -> f64 {
        self.constant
    }

    pub fn equalities(&self) -> &[LinExpr] {
        &self.equalities
    }

    pub fn inequalities(&self) -> &[LinExpr] {
        &self.inequalities
    }

    pub fn cones(&self) -> &[SocConstraint] {
        &self.cones
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Dense symmetric `P`.
    pub fn quadratic_matrix(&self) -> DenseMatrix {
        let mut p = DenseMatrix::zeros(self.n, self.n);
        for &(i, j, v) in &self.quad {
            p[(i, j)] += v;
            if i != j {
                p[(j, i)] += v;
            }
        }
        p
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let mut v = self.constant;
        for &(i, j, w) in &self.quad {
            let f = if i == j { 0.5 } else { 1.0 };
            v += f * w * x[i] * x[j];
        }
        v + self.linear.iter().zip(x).map(|(c, x)| c * x).sum::<f64>()
    }

    /// Checks index ranges, finiteness, bounds and positive semidefiniteness
    /// of the quadratic form.
    pub fn validate(&self) -> Result<(), ProgramError> {
        let n = self.n;
        let check = |loc: &dyn Fn() -> String, e: &LinExpr| -> Result<(), ProgramError> {
            if !e.constant.is_finite() {
                return Err(ProgramError::NonFinite(loc()));
            }
            for &(i, a) in &e.terms {
                if i >= n {
                    return Err(ProgramError::IndexOutOfRange {
                        location: loc(),
                        index: i,
                        n,
                    });
                }
                if !a.is_finite() {
                    return Err(ProgramError::NonFinite(loc()));
                }
            }
            Ok(())
        };
        for (k, e) in self.equalities.iter().enumerate() {
            check(&|| format!("equality {k}"), e)?;
        }
        for (k, e) in self.inequalities.iter().enumerate() {
            check(&|| format!("inequality {k}"), e)?;
        }
        for (k, c) in self.cones.iter().enumerate() {
            check(&|| format!("cone {k} radius"), &c.radius)?;
            for a in &c.args {
                check(&|| format!("cone {k}"), a)?;
            }
        }
        for &(i, j, v) in &self.quad {
            if i >= n || j >= n {
                return Err(ProgramError::IndexOutOfRange {
                    location: "objective".into(),
                    index: i.max(j),
                    n,
                });
            }
            if !v.is_finite() {
                return Err(ProgramError::NonFinite("objective".into()));
            }
        }
        if self.linear.iter().any(|c| !c.is_finite()) || !self.constant.is_finite() {
            return Err(ProgramError::NonFinite("objective".into()));
        }
        for i in 0..n {
            let (l, u) = (self.lower[i], self.upper[i]);
            if l.is_nan() || u.is_nan() || l > u || l == f64::INFINITY || u == f64::NEG_INFINITY {
                return Err(ProgramError::Bounds(i));
            }
        }
        if !self.quadratic_is_psd() {
            return Err(ProgramError::NotPsd);
        }
        Ok(())
    }

    /// Diagonal dominance first, then a shifted Cholesky on the variables the
    /// quadratic form touches.
    pub fn quadratic_is_psd(&self) -> bool {
        if self.quad.is_empty() {
            return true;
        }
        let p = self.quadratic_matrix();
        let touched: Vec<usize> = (0..self.n)
            .filter(|&i| p.row(i).iter().any(|v| *v != 0.0))
            .collect();
        let dominant = touched.iter().all(|&i| {
            let off: f64 = touched
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| p[(i, j)].abs())
                .sum();
            p[(i, i)] >= off
        });
        if dominant {
            return true;
        }
        let m = touched.len();
        let scale = touched
            .iter()
            .fold(0.0f64, |a, &i| a.max(p[(i, i)].abs()))
            .max(1.0);
        let mut sub = DenseMatrix::zeros(m, m);
        for (a, &i) in touched.iter().enumerate() {
            for (b, &j) in touched.iter().enumerate() {
                sub[(a, b)] = p[(i, j)];
            }
            sub[(a, a)] += 1e-10 * scale;
        }
        Cholesky::factor(&sub).is_some()
    }

    /// Debug dump, one line per nonzero: `section row col value`.
    ///
    /// Sections are `P` (objective matrix, upper triangle), `c` (linear
    /// objective, row 0), `k` (objective constant), `eq` / `ineq` (constraint
    /// rows), `lb` / `ub` (finite variable bounds, col 0) and `soc<k>` (row 0
    /// is the radius, row `r` the r-th argument). Constant terms use
    /// column `n`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let n = self.n;
        let _ = writeln!(out, "# n {n}");
        for &(i, j, v) in &self.quad {
            let _ = writeln!(out, "P {i} {j} {v:e}");
        }
        for (i, c) in self.linear.iter().enumerate().filter(|(_, c)| **c != 0.0) {
            let _ = writeln!(out, "c 0 {i} {c:e}");
        }
        if self.constant != 0.0 {
            let _ = writeln!(out, "k 0 0 {:e}", self.constant);
        }
        let rows = |out: &mut String, section: &str, row: usize, e: &LinExpr| {
            for &(j, a) in &e.terms {
                let _ = writeln!(out, "{section} {row} {j} {a:e}");
            }
            if e.constant != 0.0 {
                let _ = writeln!(out, "{section} {row} {n} {:e}", e.constant);
            }
        };
        for (r, e) in self.equalities.iter().enumerate() {
            rows(&mut out, "eq", r, e);
        }
        for (r, e) in self.inequalities.iter().enumerate() {
            rows(&mut out, "ineq", r, e);
        }
        for (k, c) in self.cones.iter().enumerate() {
            let name = format!("soc{k}");
            rows(&mut out, &name, 0, &c.radius);
            for (r, a) in c.args.iter().enumerate() {
                rows(&mut out, &name, r + 1, a);
            }
        }
        for i in 0..n {
            if self.lower[i].is_finite() {
                let _ = writeln!(out, "lb {i} 0 {:e}", self.lower[i]);
            }
            if self.upper[i].is_finite() {
                let _ = writeln!(out, "ub {i} 0 {:e}", self.upper[i]);
            }
        }
        out
    }
}

/// Per-constraint violation magnitudes at a point.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct FeasibilityReport {
    pub tol: f64,
    /// `|e_i(x)|`
    pub equalities: Vec<f64>,
    /// `max(0, g_j(x))`
    pub inequalities: Vec<f64>,
    /// `max(0, l_i − x_i)`
    pub lower: Vec<f64>,
    /// `max(0, x_i − u_i)`
    pub upper: Vec<f64>,
    /// `max(0, ‖a(x)‖ − r(x))`
    pub cones: Vec<f64>,
}

impl FeasibilityReport {
    pub fn worst(&self) -> Option<Violation> {
        let groups: [(&[f64], fn(usize) -> ConstraintRef); 5] = [
            (&self.equalities, ConstraintRef::Equality),
            (&self.inequalities, ConstraintRef::Inequality),
            (&self.lower, ConstraintRef::Lower),
            (&self.upper, ConstraintRef::Upper),
            (&self.cones, ConstraintRef::Cone),
        ];
        let mut best: Option<Violation> = None;
        for (vals, make) in groups {
            for (i, &v) in vals.iter().enumerate() {
                if best.map_or(true, |b| v > b.magnitude) {
                    best = Some(Violation {
                        constraint: make(i),
                        magnitude: v,
                    });
                }
            }
        }
        best
    }

    pub fn max_violation(&self) -> f64 {
        self.worst().map_or(0.0, |w| w.magnitude)
    }

    pub fn is_feasible(&self) -> bool {
        self.max_violation() <= self.tol
    }

    /// Constraints violated by more than `tol`.
    pub fn violated(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let groups: [(&[f64], fn(usize) -> ConstraintRef); 5] = [
            (&self.equalities, ConstraintRef::Equality),
            (&self.inequalities, ConstraintRef::Inequality),
            (&self.lower, ConstraintRef::Lower),
            (&self.upper, ConstraintRef::Upper),
            (&self.cones, ConstraintRef::Cone),
        ];
        for (vals, make) in groups {
            for (i, &v) in vals.iter().enumerate() {
                if v > self.tol {
                    out.push(Violation {
                        constraint: make(i),
                        magnitude: v,
                    });
                }
            }
        }
        out
    }
}

pub fn check_feasibility(
    program: &ConicProgram,
    x: &[f64],
    tol: f64,
) -> Result<FeasibilityReport, ProgramError> {
    if x.len() != program.n {
        return Err(ProgramError::Dimension {
            expected: program.n,
            got: x.len(),
        });
    }
    let cone_violation = |c: &SocConstraint| {
        let norm = c
            .args
            .iter()
            .map(|a| {
                let v = a.eval(x);
                v * v
            })
            .sum::<f64>()
            .sqrt();
        (norm - c.radius.eval(x)).max(0.0)
    };
    Ok(FeasibilityReport {
        tol,
        equalities: program.equalities.iter().map(|e| e.eval(x).abs()).collect(),
        inequalities: program
            .inequalities
            .iter()
            .map(|g| g.eval(x).max(0.0))
            .collect(),
        lower: x
            .iter()
            .zip(&program.lower)
            .map(|(x, l)| (l - x).max(0.0))
            .collect(),
        upper: x
            .iter()
            .zip(&program.upper)
            .map(|(x, u)| (x - u).max(0.0))
            .collect(),
        cones: program.cones.iter().map(cone_violation).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Relative primal residual.
    pub primal: f64,
    /// Relative dual residual.
    pub dual: f64,
    /// Duality gap, absolute or relative to the objective.
    pub gap: f64,
    pub max_iter: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            primal: 1e-8,
            dual: 1e-8,
            gap: 1e-8,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    IterationLimit,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicSolution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// Largest constraint violation of `x` (absolute).
    pub primal_residual: f64,
    pub dual_residual: Option<f64>,
    pub duality_gap: Option<f64>,
    pub iterations: usize,
    /// Most violated constraint of a phase-I solve when infeasible.
    pub witness: Option<Violation>,
}

impl ConicSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConicError {
    #[error("invalid program: {0}")]
    Invalid(#[from] ProgramError),
}

/// Solver backend contract.
pub trait ConicBackend {
    fn name(&self) -> &str;
    fn solve(&self, program: &ConicProgram, tol: &Tolerances)
        -> Result<ConicSolution, ConicError>;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn objective_convention() {
        let mut p = ConicProgram::new(2);
        p.add_objective_product(0, 0, 1.0);
        p.add_objective_product(0, 1, 3.0);
        p.add_objective_linear(1, -1.0);
        p.add_objective_constant(2.0);
        // x0² + 3 x0 x1 − x1 + 2
        assert_eq!(p.objective(&[2.0, 1.0]), 4.0 + 6.0 - 1.0 + 2.0);
    }

    #[test]
    fn cone_violation_magnitude() {
        let mut p = ConicProgram::new(2);
        p.add_cone(LinExpr::constant(1.0), vec![LinExpr::var(0), LinExpr::var(1)]);
        let r = check_feasibility(&p, &[0.6, 0.8], 1e-9).unwrap();
        assert!(r.is_feasible());
        let r = check_feasibility(&p, &[0.66, 0.88], 1e-9).unwrap();
        assert!((r.cones[0] - 0.1).abs() < 1e-12);
        let w = r.worst().unwrap();
        assert_eq!(w.constraint, ConstraintRef::Cone(0));
    }

    #[test]
    fn every_constraint_kind_reports() {
        let mut p = ConicProgram::new(2);
        p.add_equality(LinExpr::var(0).term(1, 1.0).plus(-1.0));
        p.add_inequality(LinExpr::var(0).plus(-0.25));
        p.set_bounds(1, 0.0, 0.5);
        let r = check_feasibility(&p, &[0.5, 0.75], 1e-9).unwrap();
        assert!((r.equalities[0] - 0.25).abs() < 1e-15);
        assert!((r.inequalities[0] - 0.25).abs() < 1e-15);
        assert!((r.upper[1] - 0.25).abs() < 1e-15);
        assert_eq!(r.lower, vec![0.0, 0.0]);
        assert_eq!(r.violated().len(), 3);
        assert!(check_feasibility(&p, &[0.0], 1e-9).is_err());
    }

    #[test]
    fn validation_catches_bad_programs() {
        let mut p = ConicProgram::new(2);
        p.add_equality(LinExpr::var(2));
        assert!(matches!(
            p.validate(),
            Err(ProgramError::IndexOutOfRange { index: 2, .. })
        ));
        let mut p = ConicProgram::new(2);
        p.add_objective_product(0, 0, -1.0);
        assert_eq!(p.validate(), Err(ProgramError::NotPsd));
        let mut p = ConicProgram::new(2);
        p.add_objective_product(0, 0, 1.0);
        p.add_objective_product(1, 1, 1.0);
        p.add_objective_product(0, 1, 1.9);
        assert_eq!(p.validate(), Ok(()));
        p.add_objective_product(0, 1, 0.2);
        assert_eq!(p.validate(), Err(ProgramError::NotPsd));
        let mut p = ConicProgram::new(1);
        p.set_bounds(0, 1.0, 0.0);
        assert_eq!(p.validate(), Err(ProgramError::Bounds(0)));
    }

    #[test]
    fn dump_lists_nonzeros() {
        let mut p = ConicProgram::new(2);
        p.add_objective_product(0, 0, 1.0);
        p.add_equality(LinExpr::var(1).plus(-1.0));
        p.add_cone(LinExpr::constant(2.0), vec![LinExpr::var(0)]);
        p.set_bounds(0, -1.0, f64::INFINITY);
        let d = p.dump();
        assert!(d.contains("P 0 0 2e0"));
        assert!(d.contains("eq 0 1 1e0"));
        assert!(d.contains("eq 0 2 -1e0"));
        assert!(d.contains("soc0 0 2 2e0"));
        assert!(d.contains("soc0 1 0 1e0"));
        assert!(d.contains("lb 0 0 -1e0"));
        assert!(!d.contains("ub"));
    }
}
