//! Analytic best-response Jacobian from line integrals of the shock density.
//!
//! Each choice region `{z : u_v(z) >= u_k(z) for all k}` is a polygon in shock
//! space. Differentiating its probability moves the boundary, so every
//! Jacobian entry is a combination of one-dimensional integrals `T_i^v` of the
//! density along the boundary segments. The segments are found here from the
//! defining equality and inequalities rather than from a case table, which
//! keeps the segment identities (`T_2^A = T_2^B` and so on) genuine checks.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::CovariateDist;
use crate::error::Result;
use crate::kernel::bivariate_normal_pdf;
use crate::model::{utility_index, ShareVector, Theta, UtilityIndex};
use crate::quadrature::integrate;

/// Absolute tolerance of each line integral.
pub const LINE_TOL: f64 = 1e-8;

/// Half-width of the integration window around the density peak, in standard
/// deviations along the line.
const WINDOW_SD: f64 = 12.0;

// ∇_z u_v for v = (∅, A, B, AB).
const GRAD: [[f64; 2]; 4] = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];

// Rival bundle on segment i = 1, 2, 3 for v = A, B, AB.
const RIVALS: [[usize; 3]; 3] = [[0, 2, 3], [0, 1, 3], [0, 1, 2]];

/// Boundary line integrals `t[v][i]` for `v` in (A, B, AB) and `i` in 1..=3
/// (stored zero-based).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TTerms {
    pub t: [[f64; 3]; 3],
}

impl TTerms {
    pub fn get(&self, v: usize, i: usize) -> f64 {
        self.t[v][i - 1]
    }

    fn axpy(&mut self, w: f64, other: &TTerms) {
        for v in 0..3 {
            for i in 0..3 {
                self.t[v][i] += w * other.t[v][i];
            }
        }
    }

    /// Jacobian `∂p̃/∂p` assembled from the line integrals.
    pub fn jacobian(&self, theta: &Theta) -> [[f64; 3]; 3] {
        let r2 = std::f64::consts::SQRT_2;
        let (sa, sb, sab) = (theta.s_a, theta.s_b, theta.s_ab);
        let t = |v: usize, i: usize| self.get(v, i);
        [
            [
                sa * t(0, 1) + sa / r2 * t(0, 2),
                -sb / r2 * t(0, 2) - sb * t(0, 3),
                sa * t(0, 1) + (sa - sb) / r2 * t(0, 2) + (sa - sab) * t(0, 3),
            ],
            [
                -sa / r2 * t(1, 2) - sa * t(1, 3),
                sb * t(1, 1) + sb / r2 * t(1, 2),
                sb * t(1, 1) + (sb - sa) / r2 * t(1, 2) + (sb - sab) * t(1, 3),
            ],
            [
                sa / r2 * t(2, 1) + sa * t(2, 3),
                sb / r2 * t(2, 1) + sb * t(2, 2),
                sab / r2 * t(2, 1) + (sab - sa) * t(2, 2) + (sab - sb) * t(2, 3),
            ],
        ]
    }

    /// `∂p̃/∂δ_B`: the response to a unit shift in norm B's baseline utility.
    pub fn d_delta_b(&self) -> [f64; 3] {
        let r2 = std::f64::consts::SQRT_2;
        let t = |v: usize, i: usize| self.get(v, i);
        [
            -t(0, 2) / r2 - t(0, 3),
            t(1, 1) + t(1, 2) / r2,
            t(2, 1) / r2 + t(2, 2),
        ]
    }

    /// Closed-form value of `det(I - Λ) ∂Q_A/∂δ_B` by the sign of `Γ̃`.
    pub fn derivative_numerator_cases(&self, theta: &Theta, gamma_tilde: f64, tau_zero: f64) -> f64 {
        let r2 = std::f64::consts::SQRT_2;
        let gap = theta.sanction_gap();
        let t3 = self.get(0, 3) * self.get(1, 3) * gap;
        if gamma_tilde > tau_zero {
            self.get(2, 1) / r2 + t3
        } else if gamma_tilde < -tau_zero {
            t3 + self.get(1, 2) * (gap * (self.get(0, 3) + self.get(1, 3)) - 1.0) / r2
        } else {
            t3
        }
    }
}

/// Integral of the shock density along the boundary of bundle `v`'s region
/// where it ties with `w`, restricted to where `v` beats the other bundles.
fn segment_integral(c: &[f64; 4], v: usize, w: usize, rho: f64) -> f64 {
    let n = [GRAD[v][0] - GRAD[w][0], GRAD[v][1] - GRAD[w][1]];
    let nn = n[0] * n[0] + n[1] * n[1];
    // u_v - u_w = c_v - c_w + n·z = 0
    let rhs = c[w] - c[v];
    let z0 = [n[0] * rhs / nn, n[1] * rhs / nn];
    let norm = nn.sqrt();
    let d = [-n[1] / norm, n[0] / norm];

    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for k in (0..4).filter(|&k| k != v && k != w) {
        let m = [GRAD[v][0] - GRAD[k][0], GRAD[v][1] - GRAD[k][1]];
        let alpha = m[0] * z0[0] + m[1] * z0[1] + c[v] - c[k];
        let beta = m[0] * d[0] + m[1] * d[1];
        if beta.abs() < 1e-14 {
            if alpha < 0.0 {
                return 0.0;
            }
        } else if beta > 0.0 {
            lo = lo.max(-alpha / beta);
        } else {
            hi = hi.min(-alpha / beta);
        }
    }
    if !(hi > lo) {
        return 0.0;
    }

    // Along the line the density is Gaussian in t with precision kappa.
    let one_m = 1.0 - rho * rho;
    let sd = |a: [f64; 2], b: [f64; 2]| (a[0] * b[0] + a[1] * b[1] - rho * (a[0] * b[1] + a[1] * b[0])) / one_m;
    let kappa = sd(d, d);
    let t_c = -sd(d, z0) / kappa;
    let half = WINDOW_SD / kappa.sqrt();
    let a = lo.max(t_c - half);
    let b = hi.min(t_c + half);
    integrate(
        |t| bivariate_normal_pdf(z0[0] + t * d[0], z0[1] + t * d[1], rho),
        a,
        b,
        LINE_TOL,
    )
}

/// Line integrals for one utility index.
pub fn t_terms_at(idx: &UtilityIndex, rho: f64) -> TTerms {
    let c = [0.0, idx.a, idx.b, idx.ab()];
    let mut out = TTerms::default();
    for (vi, v) in [1usize, 2, 3].into_iter().enumerate() {
        for (i, &w) in RIVALS[vi].iter().enumerate() {
            out.t[vi][i] = segment_integral(&c, v, w, rho);
        }
    }
    out
}

/// Line integrals averaged over the covariate mixture at shares `p`.
pub fn t_terms(theta: &Theta, x_dist: &CovariateDist, p: &ShareVector) -> Result<TTerms> {
    theta.validate()?;
    let mut acc = TTerms::default();
    for (x, w) in x_dist.iter() {
        let idx = utility_index(theta, x, p)?;
        acc.axpy(w, &t_terms_at(&idx, theta.rho));
    }
    Ok(acc)
}

/// Best-response Jacobian `∂p̃/∂p` at `p` from boundary line integrals.
pub fn analytic_jacobian(theta: &Theta, x_dist: &CovariateDist, p: &ShareVector) -> Result<[[f64; 3]; 3]> {
    Ok(t_terms(theta, x_dist, p)?.jacobian(theta))
}

/// `∂Q_A/∂δ_B` at a fixed point `p` using only line integrals.
pub fn analytic_implicit_derivative(theta: &Theta, x_dist: &CovariateDist, p: &ShareVector) -> Result<f64> {
    let t = t_terms(theta, x_dist, p)?;
    super::implicit_derivative(&t.jacobian(theta), &t.d_delta_b())
}

/// `e' adj(I - Λ) r_B`, which equals `det(I - Λ) ∂Q_A/∂δ_B`.
pub fn adjugate_numerator(jacobian: &[[f64; 3]; 3], r_b: &[f64; 3]) -> f64 {
    let m = Matrix3::identity() - Matrix3::from_fn(|i, j| jacobian[i][j]);
    let minor = |r: usize, c: usize| {
        let rows: Vec<usize> = (0..3).filter(|&k| k != r).collect();
        let cols: Vec<usize> = (0..3).filter(|&k| k != c).collect();
        m[(rows[0], cols[0])] * m[(rows[1], cols[1])] - m[(rows[0], cols[1])] * m[(rows[1], cols[0])]
    };
    // adj[i][j] is the (j, i) cofactor.
    let adj = Matrix3::from_fn(|i, j| if (i + j) % 2 == 0 { minor(j, i) } else { -minor(j, i) });
    let v = adj * Vector3::new(r_b[0], r_b[1], r_b[2]);
    v[0] + v[2]
}
