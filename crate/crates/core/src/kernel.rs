//! Bundle-choice probabilities integrated over bivariate Gaussian shocks.
//!
//! The smoothed kernel replaces each argmax indicator with a logistic sigmoid of
//! temperature `epsilon` and integrates on a regular trapezoid grid over
//! `[-bound, bound]^2`. The sigmoid compares a bundle against its rivals either
//! through their hard maximum or through their log-sum-exp (see [`Indicator`]). The resulting 4-vector is renormalized to sum to one.
//! [`mc_choice_probs`] evaluates the exact argmax rule by simulation and serves as
//! an independent oracle; [`exact_probs`] evaluates it deterministically by
//! conditioning on `z_A` and integrating normal CDFs in one dimension.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{utility_index, Bundle, CovariateRow, ShareVector, Theta, UtilityIndex};
use crate::quadrature::integrate;

/// Sigmoid arguments beyond this are treated as saturated (error < 3e-16).
const SATURATION: f64 = 36.0;

/// Draws per independent substream of the Monte-Carlo oracle.
const MC_CHUNK: u64 = 1 << 16;

/// Grid and smoothing configuration for shock integration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureSpec {
    pub grid_n: usize,
    pub bound: f64,
    pub epsilon: f64,
    pub indicator: Indicator,
}

/// How a bundle's argmax indicator is smoothed at each shock node.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Indicator {
    /// `sigma((u_v - max_{w != v} u_w) / epsilon)`. Kinked in the utilities where
    /// the rival maximum changes hands.
    RivalMax,
    /// `sigma((u_v - epsilon * log sum_{w != v} exp(u_w / epsilon)) / epsilon)`,
    /// the softmax of `u / epsilon`. Smooth in the utilities.
    #[default]
    Softmax,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            grid_n: 200,
            bound: 5.0,
            epsilon: 0.05,
            indicator: Indicator::default(),
        }
    }
}

impl QuadratureSpec {
    pub fn new(grid_n: usize, bound: f64, epsilon: f64) -> Result<Self> {
        let spec = QuadratureSpec {
            grid_n,
            bound,
            epsilon,
            indicator: Indicator::default(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_n < 2 {
            return Err(Error::invalid("grid_n must be at least 2"));
        }
        if !(self.bound > 0.0) || !(self.epsilon > 0.0) {
            return Err(Error::invalid("bound and epsilon must be positive"));
        }
        Ok(())
    }

    /// Grid spacing.
    pub fn step(&self) -> f64 {
        2.0 * self.bound / (self.grid_n - 1) as f64
    }
}

/// Choice probabilities over `(∅, A, B, AB)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbVector {
    pub q_empty: f64,
    pub q_a: f64,
    pub q_b: f64,
    pub q_ab: f64,
}

impl ProbVector {
    pub fn from_array(q: [f64; 4]) -> Self {
        ProbVector {
            q_empty: q[0],
            q_a: q[1],
            q_b: q[2],
            q_ab: q[3],
        }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.q_empty, self.q_a, self.q_b, self.q_ab]
    }

    pub fn get(&self, v: Bundle) -> f64 {
        self.to_array()[v as usize]
    }

    /// The non-outside components as a share vector.
    pub fn shares(&self) -> ShareVector {
        ShareVector::raw(self.q_a, self.q_b, self.q_ab)
    }

    pub fn sup_distance(&self, other: &ProbVector) -> f64 {
        self.to_array()
            .iter()
            .zip(other.to_array())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Smoothed probabilities for one utility index together with their
/// derivatives.
#[derive(Clone, Copy, Debug)]
pub struct KernelEval {
    pub probs: [f64; 4],
    /// `d_probs[v][k]`: derivative of `probs[v]` with respect to the k-th of
    /// `(a, b, gamma_tilde, rho)`. Zero when derivatives were not requested.
    pub d_probs: [[f64; 4]; 4],
    /// Integrated mass before renormalization.
    pub mass: f64,
}

/// Bivariate normal density with unit variances and correlation `rho`.
pub fn bivariate_normal_pdf(x: f64, y: f64, rho: f64) -> f64 {
    let one_m = 1.0 - rho * rho;
    let quad = (x * x - 2.0 * rho * x * y + y * y) / one_m;
    (-0.5 * quad).exp() / (2.0 * std::f64::consts::PI * one_m.sqrt())
}

/// Quadrature nodes and density weights for a fixed `rho`.
#[derive(Clone, Debug)]
pub struct ShockGrid {
    spec: QuadratureSpec,
    rho: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// `∂weight/∂rho`, present when built with [`ShockGrid::with_rho_derivative`].
    d_weights: Option<Vec<f64>>,
}

impl ShockGrid {
    pub fn new(spec: QuadratureSpec, rho: f64) -> Result<Self> {
        Self::build(spec, rho, false)
    }

    pub fn with_rho_derivative(spec: QuadratureSpec, rho: f64) -> Result<Self> {
        Self::build(spec, rho, true)
    }

    fn build(spec: QuadratureSpec, rho: f64, derivative: bool) -> Result<Self> {
        spec.validate()?;
        if !(rho > -1.0 && rho < 1.0) {
            return Err(Error::invalid(format!("rho = {rho} must lie in (-1, 1)")));
        }
        let n = spec.grid_n;
        let h = spec.step();
        let nodes: Vec<f64> = (0..n).map(|i| -spec.bound + h * i as f64).collect();
        let trap = |i: usize| if i == 0 || i == n - 1 { 0.5 * h } else { h };
        let one_m = 1.0 - rho * rho;
        let mut weights = Vec::with_capacity(n * n);
        let mut d_weights = derivative.then(|| Vec::with_capacity(n * n));
        for (i, &x) in nodes.iter().enumerate() {
            for (j, &y) in nodes.iter().enumerate() {
                let w = trap(i) * trap(j) * bivariate_normal_pdf(x, y, rho);
                weights.push(w);
                if let Some(dw) = d_weights.as_mut() {
                    let quad = x * x - 2.0 * rho * x * y + y * y;
                    let dlog = rho / one_m + x * y / one_m - rho * quad / (one_m * one_m);
                    dw.push(w * dlog);
                }
            }
        }
        Ok(ShockGrid {
            spec,
            rho,
            nodes,
            weights,
            d_weights,
        })
    }

    pub fn spec(&self) -> &QuadratureSpec {
        &self.spec
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Renormalized smoothed probabilities.
    pub fn probs(&self, idx: &UtilityIndex) -> Result<ProbVector> {
        Ok(ProbVector::from_array(self.evaluate(idx, false)?.probs))
    }

    /// Probabilities and derivatives with respect to `(a, b, gamma_tilde, rho)`.
    /// The rho column is zero unless the grid carries weight derivatives.
    pub fn probs_with_derivatives(&self, idx: &UtilityIndex) -> Result<KernelEval> {
        self.evaluate(idx, true)
    }

    pub fn evaluate(&self, idx: &UtilityIndex, derivatives: bool) -> Result<KernelEval> {
        check_finite(idx)?;
        let inv_eps = 1.0 / self.spec.epsilon;
        let n = self.spec.grid_n;
        // du[v] = ∂u_v/∂(a, b, gamma_tilde)
        const DU: [[f64; 3]; 4] = [
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [1.0, 1.0, 1.0],
        ];
        let mut raw = [0.0f64; 4];
        let mut d_raw = [[0.0f64; 4]; 4];
        let dw = if derivatives {
            self.d_weights.as_deref()
        } else {
            None
        };

        for i in 0..n {
            let ua = idx.a + self.nodes[i];
            let row = i * n;
            for j in 0..n {
                let ub = idx.b + self.nodes[j];
                let u = [0.0, ua, ub, ua + ub + idx.gamma_tilde];
                let w = self.weights[row + j];
                if self.spec.indicator == Indicator::Softmax {
                    let top = u.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
                    let e = u.map(|x| {
                        let z = (x - top) * inv_eps;
                        if z < -SATURATION {
                            0.0
                        } else {
                            z.exp()
                        }
                    });
                    let total: f64 = e.iter().sum();
                    let pi = e.map(|x| x / total);
                    for v in 0..4 {
                        raw[v] += w * pi[v];
                    }
                    if derivatives {
                        for k in 0..3 {
                            let mean: f64 = (0..4).map(|v| pi[v] * DU[v][k]).sum();
                            for v in 0..4 {
                                d_raw[v][k] += w * pi[v] * (DU[v][k] - mean) * inv_eps;
                            }
                        }
                        if let Some(dw) = dw {
                            for v in 0..4 {
                                d_raw[v][3] += pi[v] * dw[row + j];
                            }
                        }
                    }
                    continue;
                }
                let (first, second) = top_two(&u);
                let top = u[first];
                for v in 0..4 {
                    let (gap, rival) = if v == first {
                        (top - u[second], second)
                    } else {
                        (u[v] - top, first)
                    };
                    let x = gap * inv_eps;
                    if x > SATURATION {
                        raw[v] += w;
                        if let Some(dw) = dw {
                            d_raw[v][3] += dw[row + j];
                        }
                        continue;
                    }
                    if x < -SATURATION {
                        continue;
                    }
                    let pi = 1.0 / (1.0 + (-x).exp());
                    raw[v] += w * pi;
                    if derivatives {
                        let slope = w * pi * (1.0 - pi) * inv_eps;
                        for k in 0..3 {
                            d_raw[v][k] += slope * (DU[v][k] - DU[rival][k]);
                        }
                        if let Some(dw) = dw {
                            d_raw[v][3] += pi * dw[row + j];
                        }
                    }
                }
            }
        }

        let mass: f64 = raw.iter().sum();
        if !(mass > 0.0) {
            return Err(Error::NumericOverflow {
                utility: "integrated mass",
                value: mass,
            });
        }
        if (mass - 1.0).abs() > 0.02 {
            log::debug!("smoothed choice mass {mass:.5} deviates from one before renormalization");
        }
        let probs = raw.map(|r| r / mass);
        let mut d_probs = [[0.0; 4]; 4];
        if derivatives {
            for k in 0..4 {
                let d_mass: f64 = (0..4).map(|v| d_raw[v][k]).sum();
                for v in 0..4 {
                    d_probs[v][k] = (d_raw[v][k] - probs[v] * d_mass) / mass;
                }
            }
        }
        Ok(KernelEval {
            probs,
            d_probs,
            mass,
        })
    }
}

fn check_finite(idx: &UtilityIndex) -> Result<()> {
    for (name, value) in [("u_A", idx.a), ("u_B", idx.b), ("u_AB", idx.ab())] {
        if !value.is_finite() {
            return Err(Error::NumericOverflow {
                utility: name,
                value,
            });
        }
    }
    Ok(())
}

/// Indices of the largest and second-largest entries; earlier entries win ties.
#[inline]
fn top_two(u: &[f64; 4]) -> (usize, usize) {
    let (mut first, mut second) = if u[1] > u[0] { (1, 0) } else { (0, 1) };
    for v in 2..4 {
        if u[v] > u[first] {
            second = first;
            first = v;
        } else if u[v] > u[second] {
            second = v;
        }
    }
    (first, second)
}

/// Strict argmax over bundle utilities; ties go to the earliest of ∅, A, B, AB.
pub fn argmax_bundle(u: &[f64; 4]) -> Bundle {
    let mut best = 0;
    for v in 1..4 {
        if u[v] > u[best] {
            best = v;
        }
    }
    Bundle::ALL[best]
}

/// Realized utilities given deterministic indices and a shock pair.
#[inline]
pub fn realized_utilities(idx: &UtilityIndex, z_a: f64, z_b: f64) -> [f64; 4] {
    let ua = idx.a + z_a;
    let ub = idx.b + z_b;
    [0.0, ua, ub, ua + ub + idx.gamma_tilde]
}

/// Draws a correlated standard-normal shock pair.
#[inline]
pub fn draw_shocks<R: Rng + ?Sized>(rng: &mut R, rho: f64) -> (f64, f64) {
    let e1: f64 = rng.sample(StandardNormal);
    let e2: f64 = rng.sample(StandardNormal);
    (e1, rho * e1 + (1.0 - rho * rho).sqrt() * e2)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Absolute tolerance of each one-dimensional integral in [`exact_probs`].
const EXACT_TOL: f64 = 1e-12;

/// Exact argmax probabilities for one utility index.
///
/// Given `z_A = x`, each bundle's region is a half-line in `z_B`, whose
/// conditional probability is a normal CDF. The outer integral over `x` is
/// split at the two points where the regions change shape.
pub fn exact_probs(idx: &UtilityIndex, rho: f64) -> Result<ProbVector> {
    check_finite(idx)?;
    if !(rho > -1.0 && rho < 1.0) {
        return Err(Error::invalid(format!("rho = {rho} must lie in (-1, 1)")));
    }
    let (a, b, g) = (idx.a, idx.b, idx.gamma_tilde);
    let sd = (1.0 - rho * rho).sqrt();
    let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    // P(b + z_B <= c | z_A = x) and its complement
    let below = move |c: f64, x: f64| normal_cdf((c - b - rho * x) / sd);
    let above = move |c: f64, x: f64| normal_cdf(-(c - b - rho * x) / sd);
    let integrand = |v: usize, x: f64| -> f64 {
        let alpha = a + x;
        let cond = match v {
            0 if alpha <= 0.0 => below(0.0f64.min(-alpha - g), x),
            1 if alpha >= 0.0 => below(alpha.min(-g), x),
            2 if alpha <= -g => above(0.0f64.max(alpha), x),
            3 if alpha >= -g => above((-g).max(-alpha - g), x),
            _ => 0.0,
        };
        phi(x) * cond
    };
    const HALF: f64 = 12.0;
    let mut cuts = vec![-HALF, HALF];
    for c in [-a, -a - g] {
        if c > -HALF && c < HALF {
            cuts.push(c);
        }
    }
    cuts.sort_by(f64::total_cmp);
    let mut q = [0.0; 4];
    for (v, qv) in q.iter_mut().enumerate() {
        *qv = cuts
            .windows(2)
            .map(|w| integrate(|x| integrand(v, x), w[0], w[1], EXACT_TOL))
            .sum::<f64>()
            .clamp(0.0, 1.0);
    }
    let total: f64 = q.iter().sum();
    Ok(ProbVector::from_array(q.map(|v| v / total)))
}

/// How choice probabilities are evaluated from utility indices.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum ProbabilityRule {
    /// Smoothed argmax on a quadrature grid.
    Smoothed(QuadratureSpec),
    /// The argmax rule itself, integrated in one dimension.
    Exact,
}

/// A ready-to-use evaluator for a [`ProbabilityRule`] at a fixed `rho`.
#[derive(Clone, Debug)]
pub enum ChoiceKernel {
    Smoothed(ShockGrid),
    Exact { rho: f64 },
}

impl ChoiceKernel {
    pub fn new(rule: &ProbabilityRule, rho: f64) -> Result<Self> {
        match rule {
            ProbabilityRule::Smoothed(spec) => Ok(ChoiceKernel::Smoothed(ShockGrid::new(*spec, rho)?)),
            ProbabilityRule::Exact => {
                if !(rho > -1.0 && rho < 1.0) {
                    return Err(Error::invalid(format!("rho = {rho} must lie in (-1, 1)")));
                }
                Ok(ChoiceKernel::Exact { rho })
            }
        }
    }

    pub fn probs(&self, idx: &UtilityIndex) -> Result<ProbVector> {
        match self {
            ChoiceKernel::Smoothed(grid) => grid.probs(idx),
            ChoiceKernel::Exact { rho } => exact_probs(idx, *rho),
        }
    }
}

/// Smoothed, renormalized choice probabilities for one individual.
pub fn smoothed_choice_probs(
    theta: &Theta,
    x: &CovariateRow,
    lag: &ShareVector,
    quad: &QuadratureSpec,
) -> Result<ProbVector> {
    theta.validate()?;
    let idx = utility_index(theta, &x.x, lag)?;
    ShockGrid::new(*quad, theta.rho)?.probs(&idx)
}

/// Exact argmax probabilities estimated from `n_draws` simulated shock pairs.
///
/// Draws are split into fixed-size substreams, each seeded from `seed` with its
/// own ChaCha stream id, so the result does not depend on thread scheduling.
pub fn mc_choice_probs(
    theta: &Theta,
    x: &CovariateRow,
    lag: &ShareVector,
    n_draws: u64,
    seed: u64,
) -> Result<ProbVector> {
    if n_draws == 0 {
        return Err(Error::invalid("n_draws must be at least 1"));
    }
    theta.validate()?;
    let idx = utility_index(theta, &x.x, lag)?;
    check_finite(&idx)?;
    let rho = theta.rho;
    let chunks = n_draws.div_ceil(MC_CHUNK);
    let counts = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(chunk);
            let len = MC_CHUNK.min(n_draws - chunk * MC_CHUNK);
            let mut counts = [0u64; 4];
            for _ in 0..len {
                let (za, zb) = draw_shocks(&mut rng, rho);
                counts[argmax_bundle(&realized_utilities(&idx, za, zb)) as usize] += 1;
            }
            counts
        })
        .reduce(
            || [0u64; 4],
            |mut a, b| {
                for v in 0..4 {
                    a[v] += b[v];
                }
                a
            },
        );
    let n = n_draws as f64;
    Ok(ProbVector::from_array(counts.map(|c| c as f64 / n)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_row() -> CovariateRow {
        CovariateRow::new(vec![1.0], 0, 1)
    }

    fn theta_with(delta_a: f64, delta_b: f64, s: (f64, f64, f64), gamma: f64, rho: f64) -> Theta {
        Theta::new(vec![delta_a], vec![delta_b], s.0, s.1, s.2, gamma, rho).unwrap()
    }

    #[test]
    fn quadrant_case_is_uniform() {
        let q = smoothed_choice_probs(
            &Theta::zeros(1),
            &zero_row(),
            &ShareVector::zero(),
            &QuadratureSpec::default(),
        )
        .unwrap();
        for v in q.to_array() {
            assert!((v - 0.25).abs() < 1e-3, "{q:?}");
        }
        assert!((q.to_array().iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn dominance_limit() {
        let theta = theta_with(10.0, -10.0, (0.0, 0.0, 0.0), 0.0, 0.0);
        let q = smoothed_choice_probs(&theta, &zero_row(), &ShareVector::zero(), &QuadratureSpec::default())
            .unwrap();
        assert!(q.q_a >= 0.999, "{q:?}");
    }

    #[test]
    fn overflow_names_the_utility() {
        let theta = theta_with(f64::MAX, f64::MAX, (0.0, 0.0, 0.0), 0.0, 0.0);
        let err = smoothed_choice_probs(&theta, &zero_row(), &ShareVector::zero(), &QuadratureSpec::default())
            .unwrap_err();
        match err {
            Error::NumericOverflow { utility, .. } => assert_eq!(utility, "u_AB"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(QuadratureSpec::new(1, 5.0, 0.05).is_err());
        assert!(QuadratureSpec::new(10, 0.0, 0.05).is_err());
        assert!(QuadratureSpec::new(10, 5.0, 0.0).is_err());
        let err = mc_choice_probs(&Theta::zeros(1), &zero_row(), &ShareVector::zero(), 0, 1);
        assert!(err.is_err());
    }

    #[test]
    fn mc_quadrant_case_and_determinism() {
        let theta = Theta::zeros(1);
        let a = mc_choice_probs(&theta, &zero_row(), &ShareVector::zero(), 1_000_000, 7).unwrap();
        for v in a.to_array() {
            assert!((v - 0.25).abs() < 0.002, "{a:?}");
        }
        let b = mc_choice_probs(&theta, &zero_row(), &ShareVector::zero(), 1_000_000, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mc_positive_correlation_symmetry() {
        let theta = theta_with(0.0, 0.0, (0.0, 0.0, 0.0), 0.0, 0.9);
        let q = mc_choice_probs(&theta, &zero_row(), &ShareVector::zero(), 10_000_000, 2024).unwrap();
        // (z_A, z_B) ~ N(0, [[1, .9], [.9, 1]]): P(both >= 0) = 1/4 + asin(.9)/(2π)
        let exact = 0.25 + 0.9f64.asin() / (2.0 * std::f64::consts::PI);
        assert!((q.q_ab - q.q_empty).abs() < 1e-3, "{q:?}");
        assert!((q.q_a - q.q_b).abs() < 1e-3, "{q:?}");
        assert!(q.q_ab > 0.25);
        assert!((q.q_ab - exact).abs() < 1e-3, "{} vs {exact}", q.q_ab);
    }

    #[test]
    fn kernel_derivatives_match_finite_differences() {
        for indicator in [Indicator::Softmax, Indicator::RivalMax] {
            derivatives_match(QuadratureSpec {
                indicator,
                ..QuadratureSpec::default()
            });
        }
    }

    fn derivatives_match(spec: QuadratureSpec) {
        let rho = -0.3;
        let grid = ShockGrid::with_rho_derivative(spec, rho).unwrap();
        let idx = UtilityIndex {
            a: 0.4,
            b: -0.3,
            gamma_tilde: 0.6,
        };
        let eval = grid.probs_with_derivatives(&idx).unwrap();
        let h = 1e-5;
        for k in 0..3 {
            let shift = |sign: f64| {
                let mut i = idx;
                match k {
                    0 => i.a += sign * h,
                    1 => i.b += sign * h,
                    _ => i.gamma_tilde += sign * h,
                }
                grid.probs(&i).unwrap().to_array()
            };
            let (up, dn) = (shift(1.0), shift(-1.0));
            for v in 0..4 {
                let fd = (up[v] - dn[v]) / (2.0 * h);
                assert!((fd - eval.d_probs[v][k]).abs() < 1e-7, "v={v} k={k}: {fd} vs {}", eval.d_probs[v][k]);
            }
        }
        let up = ShockGrid::new(spec, rho + h).unwrap().probs(&idx).unwrap().to_array();
        let dn = ShockGrid::new(spec, rho - h).unwrap().probs(&idx).unwrap().to_array();
        for v in 0..4 {
            let fd = (up[v] - dn[v]) / (2.0 * h);
            assert!((fd - eval.d_probs[v][3]).abs() < 1e-7, "rho v={v}: {fd} vs {}", eval.d_probs[v][3]);
        }
    }

    #[test]
    fn indicators_agree_with_exact_rule() {
        let idx = UtilityIndex {
            a: 0.9,
            b: -0.1,
            gamma_tilde: -0.5,
        };
        let exact = exact_probs(&idx, -0.7).unwrap();
        for indicator in [Indicator::Softmax, Indicator::RivalMax] {
            let spec = QuadratureSpec {
                indicator,
                ..QuadratureSpec::default()
            };
            let grid = ShockGrid::new(spec, -0.7).unwrap();
            let eval = grid.evaluate(&idx, false).unwrap();
            let q = ProbVector::from_array(eval.probs);
            assert!(q.sup_distance(&exact) < 4e-3, "{indicator:?}: {q:?} vs {exact:?}");
            if indicator == Indicator::Softmax {
                let weights: f64 = grid.weights.iter().sum();
                assert!((eval.mass - weights).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn exact_probs_closed_forms() {
        let zero = UtilityIndex { a: 0.0, b: 0.0, gamma_tilde: 0.0 };
        let q = exact_probs(&zero, 0.0).unwrap();
        for v in q.to_array() {
            assert!((v - 0.25).abs() < 1e-12, "{q:?}");
        }
        let q = exact_probs(&zero, 0.9).unwrap();
        let both = 0.25 + 0.9f64.asin() / (2.0 * std::f64::consts::PI);
        assert!((q.q_ab - both).abs() < 1e-10);
        assert!((q.q_empty - both).abs() < 1e-10);
        // Additive surplus zero, rho zero: independent probits.
        let idx = UtilityIndex { a: 0.4, b: -0.7, gamma_tilde: 0.0 };
        let q = exact_probs(&idx, 0.0).unwrap();
        assert!((q.q_a + q.q_ab - normal_cdf(0.4)).abs() < 1e-11);
        assert!((q.q_b + q.q_ab - normal_cdf(-0.7)).abs() < 1e-11);
        assert!(exact_probs(&zero, 1.0).is_err());
    }

    #[test]
    fn exact_probs_match_simulation() {
        let theta = theta_with(0.5, -0.2, (1.0, 0.5, 1.5), 0.3, -0.3);
        let lag = ShareVector::new(0.2, 0.3, 0.1).unwrap();
        let mc = mc_choice_probs(&theta, &zero_row(), &lag, 4_000_000, 5).unwrap();
        let idx = utility_index(&theta, &zero_row().x, &lag).unwrap();
        let exact = exact_probs(&idx, theta.rho).unwrap();
        assert!(exact.sup_distance(&mc) < 1e-3, "{exact:?} vs {mc:?}");
        let via_kernel = ChoiceKernel::new(&ProbabilityRule::Exact, theta.rho).unwrap().probs(&idx).unwrap();
        assert_eq!(exact, via_kernel);
    }

    #[test]
    fn top_two_orders() {
        assert_eq!(top_two(&[0.0, 1.0, 2.0, 3.0]), (3, 2));
        assert_eq!(top_two(&[5.0, 1.0, 2.0, 3.0]), (0, 3));
        assert_eq!(top_two(&[0.0, 0.0, -1.0, -2.0]), (0, 1));
        assert_eq!(argmax_bundle(&[0.0, 0.0, 0.0, 0.0]), Bundle::Empty);
        assert_eq!(argmax_bundle(&[0.0, 1.0, 1.0, 0.5]), Bundle::A);
    }
}
