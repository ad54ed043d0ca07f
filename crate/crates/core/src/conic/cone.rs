//! Cone algebra for the product of a nonnegative orthant and second-order
//! cones: Jordan products, step lengths and Nesterov–Todd scaling.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

/// Layout of the slack vector: `nonneg` orthant entries first, then each
/// second-order cone block `(offset, dim)` with the radius component first.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ConeLayout {
    pub nonneg: usize,
    pub soc: Vec<(usize, usize)>,
    pub dim: usize,
}

impl ConeLayout {
    pub fn new(nonneg: usize, soc_dims: &[usize]) -> Self {
        let mut soc = Vec::with_capacity(soc_dims.len());
        let mut off = nonneg;
        for &d in soc_dims {
            soc.push((off, d));
            off += d;
        }
        Self {
            nonneg,
            soc,
            dim: off,
        }
    }

    /// Barrier degree `ν`.
    pub fn degree(&self) -> usize {
        self.nonneg + self.soc.len()
    }

    /// Smallest "eigenvalue": `x_i` on the orthant, `x₀ − ‖x₁‖` on cones.
    pub fn min_eig(&self, x: &[f64]) -> f64 {
        let mut m = f64::INFINITY;
        for v in &x[..self.nonneg] {
            m = m.min(*v);
        }
        for &(o, d) in &self.soc {
            m = m.min(x[o] - norm(&x[o + 1..o + d]));
        }
        m
    }

    /// `x + a·e`.
    pub fn add_identity(&self, x: &mut [f64], a: f64) {
        for v in &mut x[..self.nonneg] {
            *v += a;
        }
        for &(o, _) in &self.soc {
            x[o] += a;
        }
    }

    pub fn identity(&self) -> Vec<f64> {
        let mut e = vec![0.0; self.dim];
        self.add_identity(&mut e, 1.0);
        e
    }

    /// Largest `α ≥ 0` with `x + α d` in the cone (`x` interior).
    pub fn max_step(&self, x: &[f64], d: &[f64]) -> f64 {
        let mut alpha = f64::INFINITY;
        for i in 0..self.nonneg {
            if d[i] < 0.0 {
                alpha = alpha.min(-x[i] / d[i]);
            }
        }
        for &(o, k) in &self.soc {
            alpha = alpha.min(soc_max_step(&x[o..o + k], &d[o..o + k]));
        }
        alpha
    }

    /// Jordan product `u ∘ v`.
    pub fn product(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        let mut w = vec![0.0; self.dim];
        for i in 0..self.nonneg {
            w[i] = u[i] * v[i];
        }
        for &(o, k) in &self.soc {
            w[o] = dot(&u[o..o + k], &v[o..o + k]);
            for j in 1..k {
                w[o + j] = u[o] * v[o + j] + v[o] * u[o + j];
            }
        }
        w
    }

    /// Solves `λ ∘ x = r` for `x`.
    pub fn divide(&self, lambda: &[f64], r: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.dim];
        for i in 0..self.nonneg {
            x[i] = r[i] / lambda[i];
        }
        for &(o, k) in &self.soc {
            let l0 = lambda[o];
            let l1 = &lambda[o + 1..o + k];
            let r1 = &r[o + 1..o + k];
            let det = l0 * l0 - dot(l1, l1);
            let x0 = (l0 * r[o] - dot(l1, r1)) / det;
            x[o] = x0;
            for j in 1..k {
                x[o + j] = (r[o + j] - x0 * lambda[o + j]) / l0;
            }
        }
        x
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn soc_max_step(x: &[f64], d: &[f64]) -> f64 {
    let d1 = norm(&d[1..]);
    if d[0] >= d1 {
        return f64::INFINITY;
    }
    // (x0 + α d0)² − ‖x1 + α d1‖² = a α² + b α + c with c > 0.
    let a = d[0] * d[0] - d1 * d1;
    let b = 2.0 * (x[0] * d[0] - dot(&x[1..], &d[1..]));
    let c = x[0] * x[0] - dot(&x[1..], &x[1..]);
    let mut alpha = f64::INFINITY;
    if d[0] < 0.0 {
        alpha = -x[0] / d[0];
    }
    if c <= 0.0 {
        return 0.0;
    }
    let disc = b * b - 4.0 * a * c;
    let root = if a.abs() < 1e-300 {
        if b < 0.0 {
            -c / b
        } else {
            f64::INFINITY
        }
    } else if disc < 0.0 {
        f64::INFINITY
    } else {
        let q = -0.5 * (b + b.signum() * disc.sqrt());
        let (r1, r2) = (q / a, c / q);
        let mut best = f64::INFINITY;
        for r in [r1, r2] {
            if r > 0.0 && r.is_finite() {
                best = best.min(r);
            }
        }
        best
    };
    alpha.min(root)
}

/// Nesterov–Todd scaling `W` with `W z = W⁻¹ s = λ`.
#[derive(Debug, Clone)]
pub(crate) struct NtScaling {
    /// Orthant part: `w_i = sqrt(s_i / z_i)`.
    d: Vec<f64>,
    /// Per cone: `(η, v)` with `W = η (2 v vᵀ − J)`.
    soc: Vec<(f64, Vec<f64>)>,
    pub lambda: Vec<f64>,
}

impl NtScaling {
    pub fn new(layout: &ConeLayout, s: &[f64], z: &[f64]) -> Option<Self> {
        let mut d = Vec::with_capacity(layout.nonneg);
        for i in 0..layout.nonneg {
            if !(s[i] > 0.0 && z[i] > 0.0) {
                return None;
            }
            d.push((s[i] / z[i]).sqrt());
        }
        let mut soc = Vec::with_capacity(layout.soc.len());
        for &(o, k) in &layout.soc {
            let (sb, zb) = (&s[o..o + k], &z[o..o + k]);
            let sjs = sb[0] * sb[0] - dot(&sb[1..], &sb[1..]);
            let zjz = zb[0] * zb[0] - dot(&zb[1..], &zb[1..]);
            if !(sjs > 0.0 && zjz > 0.0 && sb[0] > 0.0 && zb[0] > 0.0) {
                return None;
            }
            let (sn, zn) = (sjs.sqrt(), zjz.sqrt());
            let sbar: Vec<f64> = sb.iter().map(|v| v / sn).collect();
            let zbar: Vec<f64> = zb.iter().map(|v| v / zn).collect();
            let gamma = ((1.0 + dot(&sbar, &zbar)) / 2.0).sqrt();
            let mut w = vec![0.0; k];
            w[0] = (sbar[0] + zbar[0]) / (2.0 * gamma);
            for j in 1..k {
                w[j] = (sbar[j] - zbar[j]) / (2.0 * gamma);
            }
            // v = (w̄ + e) / sqrt(2 (w̄₀ + 1)) gives W = η (2 v vᵀ − J).
            let scale = 1.0 / (2.0 * (w[0] + 1.0)).sqrt();
            w[0] += 1.0;
            w.iter_mut().for_each(|x| *x *= scale);
            let eta = (sjs / zjz).sqrt().sqrt();
            soc.push((eta, w));
        }
        let mut scaling = Self {
            d,
            soc,
            lambda: Vec::new(),
        };
        scaling.lambda = scaling.apply(layout, z, false);
        Some(scaling)
    }

    /// `W x` (or `W⁻¹ x` when `inverse`).
    pub fn apply(&self, layout: &ConeLayout, x: &[f64], inverse: bool) -> Vec<f64> {
        let mut y = vec![0.0; layout.dim];
        for i in 0..layout.nonneg {
            y[i] = if inverse { x[i] / self.d[i] } else { x[i] * self.d[i] };
        }
        for (&(o, k), (eta, w)) in layout.soc.iter().zip(&self.soc) {
            let xb = &x[o..o + k];
            if inverse {
                // W⁻¹ = (2 J w̄ w̄ᵀ J − J) / η
                let jw0 = w[0];
                let wjx = w[0] * xb[0] - dot(&w[1..], &xb[1..]);
                y[o] = (2.0 * jw0 * wjx - xb[0]) / eta;
                for j in 1..k {
                    y[o + j] = (-2.0 * w[j] * wjx + xb[j]) / eta;
                }
            } else {
                let wx = dot(w, xb);
                y[o] = eta * (2.0 * w[0] * wx - xb[0]);
                for j in 1..k {
                    y[o + j] = eta * (2.0 * w[j] * wx + xb[j]);
                }
            }
        }
        y
    }

    /// Orthant weights `1 / w_i²` of `W⁻²`.
    pub fn nonneg_inv_sq(&self) -> impl Iterator<Item = f64> + '_ {
        self.d.iter().map(|w| 1.0 / (w * w))
    }

    /// Dense `W⁻²` for cone block `c`, row-major `k × k`.
    pub fn soc_inv_sq(&self, layout: &ConeLayout, c: usize) -> Vec<f64> {
        let (_, k) = layout.soc[c];
        let (eta, w) = &self.soc[c];
        // W⁻¹ entries: (2 (Jw)(Jw)ᵀ − J) / η
        let jw: Vec<f64> = (0..k).map(|j| if j == 0 { w[0] } else { -w[j] }).collect();
        let winv = |i: usize, j: usize| {
            let jij = if i != j {
                0.0
            } else if i == 0 {
                1.0
            } else {
                -1.0
            };
            (2.0 * jw[i] * jw[j] - jij) / eta
        };
        let mut m = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                m[i * k + j] = (0..k).map(|l| winv(i, l) * winv(l, j)).sum();
            }
        }
        m
    }
}
