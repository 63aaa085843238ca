//! Static equilibria of the population best-response map.
//!
//! [`solve_equilibrium`] runs damped best-response iteration from a set of
//! starting shares, deduplicates the fixed points and reports each one with a
//! finite-difference Jacobian, its spectral radius and the implicit-function
//! derivative of `Q_A` with respect to a shift in norm B's baseline utility.
//! The [`jacobian`] submodule computes the same Jacobian from line integrals of
//! the shock density along the choice boundaries, and [`classify`] turns the
//! derivative into a complements/substitutes verdict.

pub mod classify;
pub mod jacobian;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{ChoiceKernel, ProbabilityRule, QuadratureSpec};
use crate::model::{utility_index, CovariateRow, ShareVector, Theta, UtilityIndex};

pub use classify::{classify, theorem_branch, ClassificationVerdict, ClassifyOptions, NumericalSign, TheoremBranch};
pub use jacobian::{analytic_jacobian, analytic_implicit_derivative, t_terms, TTerms};

/// Determinant threshold below which `I - Λ` is treated as singular.
pub const SINGULAR_DET: f64 = 1e-10;

/// Margin below one required of the spectral radius for stability.
pub const STABILITY_MARGIN: f64 = 1e-9;

/// A weighted mixture of covariate vectors standing in for the population.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovariateDist {
    rows: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl CovariateDist {
    pub fn new(rows: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("covariate distribution is empty"));
        }
        if rows.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                what: "covariate weights",
                expected: rows.len(),
                got: weights.len(),
            });
        }
        let p = rows[0].len();
        if let Some(bad) = rows.iter().find(|r| r.len() != p) {
            return Err(Error::DimensionMismatch {
                what: "covariate row",
                expected: p,
                got: bad.len(),
            });
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid("covariate weights must be nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("covariate weights sum to {total}, not 1")));
        }
        Ok(CovariateDist { rows, weights })
    }

    /// A single covariate vector with unit weight.
    pub fn point(x: Vec<f64>) -> Self {
        CovariateDist {
            rows: vec![x],
            weights: vec![1.0],
        }
    }

    /// Empirical distribution of the given rows, with identical covariate
    /// vectors merged. Rows are ordered by first appearance.
    pub fn empirical<'a>(rows: impl IntoIterator<Item = &'a CovariateRow>) -> Result<Self> {
        let mut uniq: Vec<Vec<f64>> = Vec::new();
        let mut counts: Vec<f64> = Vec::new();
        let mut index = std::collections::HashMap::new();
        let mut n = 0usize;
        for row in rows {
            n += 1;
            let key: Vec<u64> = row.x.iter().map(|v| v.to_bits()).collect();
            match index.get(&key) {
                Some(&i) => counts[i] += 1.0,
                None => {
                    index.insert(key, uniq.len());
                    uniq.push(row.x.clone());
                    counts.push(1.0);
                }
            }
        }
        if n == 0 {
            return Err(Error::invalid("covariate distribution is empty"));
        }
        let weights = counts.iter().map(|c| c / n as f64).collect();
        CovariateDist::new(uniq, weights)
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn n_covariates(&self) -> usize {
        self.rows[0].len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.rows.iter().map(|r| r.as_slice()).zip(self.weights.iter().copied())
    }
}

/// The population best-response map `p -> p̃(p)` for fixed parameters and
/// covariate mixture. Holds the shock grid so repeated evaluations are cheap.
#[derive(Clone, Debug)]
pub struct BestResponse {
    theta: Theta,
    dist: CovariateDist,
    kernel: ChoiceKernel,
}

impl BestResponse {
    pub fn new(theta: &Theta, dist: &CovariateDist, quad: &QuadratureSpec) -> Result<Self> {
        Self::with_rule(theta, dist, &ProbabilityRule::Smoothed(*quad))
    }

    pub fn with_rule(theta: &Theta, dist: &CovariateDist, rule: &ProbabilityRule) -> Result<Self> {
        theta.validate()?;
        if dist.n_covariates() != theta.n_covariates() {
            return Err(Error::DimensionMismatch {
                what: "covariate row",
                expected: theta.n_covariates(),
                got: dist.n_covariates(),
            });
        }
        Ok(BestResponse {
            theta: theta.clone(),
            dist: dist.clone(),
            kernel: ChoiceKernel::new(rule, theta.rho)?,
        })
    }

    pub fn theta(&self) -> &Theta {
        &self.theta
    }

    pub fn dist(&self) -> &CovariateDist {
        &self.dist
    }

    pub fn eval(&self, p: &ShareVector) -> Result<ShareVector> {
        self.eval_shifted(p, 0.0, 0.0)
    }

    /// Best response with the baseline utilities of A and B shifted by
    /// `shift_a` and `shift_b`.
    pub fn eval_shifted(&self, p: &ShareVector, shift_a: f64, shift_b: f64) -> Result<ShareVector> {
        let mut acc = [0.0; 3];
        for (x, w) in self.dist.iter() {
            if w == 0.0 {
                continue;
            }
            let idx = utility_index(&self.theta, x, p)?;
            let idx = UtilityIndex {
                a: idx.a + shift_a,
                b: idx.b + shift_b,
                ..idx
            };
            let q = self.kernel.probs(&idx)?;
            acc[0] += w * q.q_a;
            acc[1] += w * q.q_b;
            acc[2] += w * q.q_ab;
        }
        Ok(ShareVector::from_array(acc))
    }

    /// Central finite-difference Jacobian `∂p̃_i/∂p_j`. Perturbations may leave
    /// the simplex slightly; the map is defined there through the utilities.
    pub fn jacobian_fd(&self, p: &ShareVector, step: f64) -> Result<[[f64; 3]; 3]> {
        let mut jac = [[0.0; 3]; 3];
        let base = p.to_array();
        for j in 0..3 {
            let mut up = base;
            let mut dn = base;
            up[j] += step;
            dn[j] -= step;
            let fu = self.eval(&ShareVector::from_array(up))?.to_array();
            let fd = self.eval(&ShareVector::from_array(dn))?.to_array();
            for i in 0..3 {
                jac[i][j] = (fu[i] - fd[i]) / (2.0 * step);
            }
        }
        Ok(jac)
    }

    /// Central finite-difference derivative of `p̃` with respect to norm B's
    /// baseline utility.
    pub fn d_delta_b_fd(&self, p: &ShareVector, step: f64) -> Result<[f64; 3]> {
        let up = self.eval_shifted(p, 0.0, step)?.to_array();
        let dn = self.eval_shifted(p, 0.0, -step)?.to_array();
        Ok([0, 1, 2].map(|i| (up[i] - dn[i]) / (2.0 * step)))
    }
}

/// One application of the population best-response map.
pub fn best_response(
    theta: &Theta,
    x_dist: &CovariateDist,
    p: &ShareVector,
    quad: &QuadratureSpec,
) -> Result<ShareVector> {
    p.validate()?;
    BestResponse::new(theta, x_dist, quad)?.eval(p)
}

/// Fixed-point iteration settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Step for the finite-difference Jacobian and `δ_B` derivative.
    pub fd_step: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            damping: 0.5,
            tol: 1e-10,
            max_iter: 10_000,
            fd_step: 1e-5,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::invalid("damping must lie in (0, 1]"));
        }
        if !(self.tol > 0.0) || !(self.fd_step > 0.0) {
            return Err(Error::invalid("tol and fd_step must be positive"));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be at least 1"));
        }
        Ok(())
    }
}

/// A fixed point of the best-response map and its local properties.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub p_star: ShareVector,
    /// Sup-norm of `p̃(p*) - p*`.
    pub residual: f64,
    pub jacobian: [[f64; 3]; 3],
    pub spectral_radius: f64,
    pub stable: bool,
    pub det_i_minus_jacobian: f64,
    /// `∂Q_A/∂δ_B` by the implicit-function theorem; `None` when `I - Λ` is
    /// singular, in which case `derivative_error` carries the error code.
    pub d_qa_d_delta_b: Option<f64>,
    pub derivative_error: Option<String>,
    /// Index of the first start that reached this point.
    pub start_index: usize,
    pub iterations: usize,
}

/// A start whose iteration did not reach the tolerance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergedStart {
    pub start_index: usize,
    pub last: ShareVector,
    pub residual: f64,
    pub diverged: bool,
}

/// All distinct fixed points found plus the starts that failed to converge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumSet {
    pub equilibria: Vec<EquilibriumReport>,
    pub diverged: Vec<DivergedStart>,
}

impl EquilibriumSet {
    pub fn stable(&self) -> impl Iterator<Item = &EquilibriumReport> {
        self.equilibria.iter().filter(|e| e.stable)
    }
}

/// Starting shares on an `m × m × m` stick-breaking lattice of the simplex
/// interior: `p_A = u1`, `p_B = (1 - u1) u2`, `p_AB = (1 - u1)(1 - u2) u3`
/// with each `u` on the midpoints `(k + 1/2)/m`.
pub fn simplex_lattice(m: usize) -> Vec<ShareVector> {
    let mids: Vec<f64> = (0..m).map(|k| (k as f64 + 0.5) / m as f64).collect();
    let mut out = Vec::with_capacity(m * m * m);
    for &u1 in &mids {
        for &u2 in &mids {
            for &u3 in &mids {
                let p_a = u1;
                let p_b = (1.0 - u1) * u2;
                let p_ab = (1.0 - u1) * (1.0 - u2) * u3;
                out.push(ShareVector::raw(p_a, p_b, p_ab));
            }
        }
    }
    out
}

/// Default starts: the 4³ simplex lattice.
pub fn default_starts() -> Vec<ShareVector> {
    simplex_lattice(4)
}

enum Outcome {
    Converged { p: ShareVector, residual: f64, iterations: usize },
    Failed { p: ShareVector, residual: f64, diverged: bool },
}

fn iterate(map: &BestResponse, start: ShareVector, opts: &SolverOptions) -> Result<Outcome> {
    let mut p = start;
    let mut residual = f64::INFINITY;
    for it in 0..opts.max_iter {
        let next = map.eval(&p)?;
        residual = next.sup_distance(&p);
        if !residual.is_finite() {
            return Ok(Outcome::Failed {
                p,
                residual,
                diverged: true,
            });
        }
        if residual < opts.tol {
            return Ok(Outcome::Converged {
                p,
                residual,
                iterations: it,
            });
        }
        let d = opts.damping;
        p = ShareVector::from_array([0, 1, 2].map(|i| (1.0 - d) * p.to_array()[i] + d * next.to_array()[i]));
    }
    Ok(Outcome::Failed {
        p,
        residual,
        diverged: true,
    })
}

/// Spectral radius of a 3×3 matrix.
pub fn spectral_radius(m: &[[f64; 3]; 3]) -> f64 {
    let mat = Matrix3::from_fn(|i, j| m[i][j]);
    mat.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// `e' (I - Λ)^{-1} r` with `e = (1, 0, 1)`, or a singular-equilibrium error.
pub fn implicit_derivative(jacobian: &[[f64; 3]; 3], r: &[f64; 3]) -> Result<f64> {
    let m = Matrix3::identity() - Matrix3::from_fn(|i, j| jacobian[i][j]);
    let det = m.determinant();
    if det.abs() < SINGULAR_DET {
        return Err(Error::SingularEquilibrium { det });
    }
    let sol = m
        .lu()
        .solve(&Vector3::new(r[0], r[1], r[2]))
        .ok_or(Error::SingularEquilibrium { det })?;
    Ok(sol[0] + sol[2])
}

/// Local properties of a point already known to be a fixed point of `map`.
pub fn characterize(
    map: &BestResponse,
    p: ShareVector,
    residual: f64,
    fd_step: f64,
) -> Result<EquilibriumReport> {
    let jacobian = map.jacobian_fd(&p, fd_step)?;
    let rho = spectral_radius(&jacobian);
    let det = (Matrix3::identity() - Matrix3::from_fn(|i, j| jacobian[i][j])).determinant();
    let r_b = map.d_delta_b_fd(&p, fd_step)?;
    let (d_qa_d_delta_b, derivative_error) = match implicit_derivative(&jacobian, &r_b) {
        Ok(v) => (Some(v), None),
        Err(e) => (None, Some(e.code().to_string())),
    };
    Ok(EquilibriumReport {
        p_star: p,
        residual,
        jacobian,
        spectral_radius: rho,
        stable: rho < 1.0 - STABILITY_MARGIN,
        det_i_minus_jacobian: det,
        d_qa_d_delta_b,
        derivative_error,
        start_index: 0,
        iterations: 0,
    })
}

/// Finds the fixed points reachable from `starts` by damped best-response
/// iteration `p <- (1 - d) p + d p̃(p)` with smoothed probabilities.
///
/// Converged points within `10 * tol` of an earlier one are merged; each
/// distinct point is reported in the order of the first start reaching it.
pub fn solve_equilibrium(
    theta: &Theta,
    x_dist: &CovariateDist,
    quad: &QuadratureSpec,
    starts: &[ShareVector],
    opts: &SolverOptions,
) -> Result<EquilibriumSet> {
    solve_equilibrium_with(theta, x_dist, &ProbabilityRule::Smoothed(*quad), starts, opts)
}

/// [`solve_equilibrium`] under an arbitrary probability rule.
pub fn solve_equilibrium_with(
    theta: &Theta,
    x_dist: &CovariateDist,
    rule: &ProbabilityRule,
    starts: &[ShareVector],
    opts: &SolverOptions,
) -> Result<EquilibriumSet> {
    opts.validate()?;
    if starts.is_empty() {
        return Err(Error::invalid("at least one starting share vector is required"));
    }
    for s in starts {
        s.validate()?;
    }
    let map = BestResponse::with_rule(theta, x_dist, rule)?;
    let outcomes = starts
        .par_iter()
        .map(|s| iterate(&map, *s, opts))
        .collect::<Result<Vec<_>>>()?;

    let mut found: Vec<(usize, ShareVector, f64, usize)> = Vec::new();
    let mut diverged = Vec::new();
    for (k, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Outcome::Converged {
                p,
                residual,
                iterations,
            } => {
                if !found.iter().any(|f| f.1.sup_distance(&p) < 10.0 * opts.tol) {
                    found.push((k, p, residual, iterations));
                }
            }
            Outcome::Failed { p, residual, diverged: flag } => diverged.push(DivergedStart {
                start_index: k,
                last: p,
                residual,
                diverged: flag,
            }),
        }
    }
    let equilibria = found
        .par_iter()
        .map(|&(k, p, residual, iterations)| {
            let mut report = characterize(&map, p, residual, opts.fd_step)?;
            report.start_index = k;
            report.iterations = iterations;
            Ok(report)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EquilibriumSet {
        equilibria,
        diverged,
    })
}

#[cfg(test)]
mod tests;
