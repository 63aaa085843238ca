//! Free-parameter layout under exclusion restrictions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ExclusionSpec, ShareVector, Theta};

/// Largest |η| for the correlation precursor; tanh(4) ≈ 0.9993.
pub const ETA_MAX: f64 = 4.0;

/// Maps the unbounded precursor onto (-1, 1).
pub fn eta_to_rho(eta: f64) -> f64 {
    eta.tanh()
}

pub fn rho_to_eta(rho: f64) -> f64 {
    rho.atanh()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "column")]
pub enum ParamKind {
    BetaA(usize),
    BetaB(usize),
    SA,
    SB,
    SAB,
    Gamma,
    /// Stored as the precursor η with ρ = tanh(η).
    Rho,
}

/// Ordered free coordinates and their box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamMap {
    pub kinds: Vec<ParamKind>,
    pub names: Vec<String>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub n_covariates: usize,
    pub restrict_additive: bool,
}

impl ParamMap {
    pub fn new(
        covariate_names: &[String],
        exclusion: &ExclusionSpec,
        restrict_additive: bool,
        s_nonnegative: bool,
        bound: f64,
    ) -> Result<Self> {
        let p = covariate_names.len();
        exclusion.validate(p)?;
        if !(bound > 0.0) {
            return Err(Error::invalid("parameter bound must be positive"));
        }
        let mut kinds = Vec::new();
        kinds.extend((0..p).filter(|j| !exclusion.idx_a.contains(j)).map(ParamKind::BetaA));
        kinds.extend((0..p).filter(|j| !exclusion.idx_b.contains(j)).map(ParamKind::BetaB));
        kinds.extend([ParamKind::SA, ParamKind::SB]);
        if !restrict_additive {
            kinds.push(ParamKind::SAB);
        }
        kinds.extend([ParamKind::Gamma, ParamKind::Rho]);
        let s_low = if s_nonnegative { 0.0 } else { -bound };
        let (mut names, mut lower, mut upper) = (Vec::new(), Vec::new(), Vec::new());
        for k in &kinds {
            let (name, lo, hi) = match *k {
                ParamKind::BetaA(j) => (format!("beta_A[{}]", covariate_names[j]), -bound, bound),
                ParamKind::BetaB(j) => (format!("beta_B[{}]", covariate_names[j]), -bound, bound),
                ParamKind::SA => ("s_A".into(), s_low, bound),
                ParamKind::SB => ("s_B".into(), s_low, bound),
                ParamKind::SAB => ("s_AB".into(), s_low, bound),
                ParamKind::Gamma => ("Gamma".into(), -bound, bound),
                ParamKind::Rho => ("rho".into(), -ETA_MAX, ETA_MAX),
            };
            names.push(name);
            lower.push(lo);
            upper.push(hi);
        }
        Ok(ParamMap {
            kinds,
            names,
            lower,
            upper,
            n_covariates: p,
            restrict_additive,
        })
    }

    /// Drops the sanction parameters, fixing `s_A = s_B = s_AB = 0`.
    pub fn without_spillovers(mut self) -> Self {
        let keep: Vec<bool> = self
            .kinds
            .iter()
            .map(|k| !matches!(k, ParamKind::SA | ParamKind::SB | ParamKind::SAB))
            .collect();
        let filter = |v: Vec<f64>| v.into_iter().zip(&keep).filter(|(_, k)| **k).map(|(v, _)| v).collect();
        self.lower = filter(self.lower);
        self.upper = filter(self.upper);
        self.names = self.names.into_iter().zip(&keep).filter(|(_, k)| **k).map(|(n, _)| n).collect();
        self.kinds.retain(|k| !matches!(k, ParamKind::SA | ParamKind::SB | ParamKind::SAB));
        self
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn index_of(&self, kind: ParamKind) -> Option<usize> {
        self.kinds.iter().position(|k| *k == kind)
    }

    /// Structural parameters for internal coordinates `phi`. Excluded
    /// coefficients are exactly zero.
    pub fn theta(&self, phi: &[f64]) -> Theta {
        let p = self.n_covariates;
        let mut t = Theta::zeros(p);
        for (k, &v) in self.kinds.iter().zip(phi) {
            match *k {
                ParamKind::BetaA(j) => t.beta_a[j] = v,
                ParamKind::BetaB(j) => t.beta_b[j] = v,
                ParamKind::SA => t.s_a = v,
                ParamKind::SB => t.s_b = v,
                ParamKind::SAB => t.s_ab = v,
                ParamKind::Gamma => t.gamma = v,
                ParamKind::Rho => t.rho = eta_to_rho(v),
            }
        }
        t.restrict_additive = self.restrict_additive;
        t.sync_additive();
        t
    }

    /// Internal coordinates of `theta`, projected onto the box.
    pub fn phi(&self, theta: &Theta) -> Vec<f64> {
        self.kinds
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(k, (&lo, &hi))| {
                let v = match *k {
                    ParamKind::BetaA(j) => theta.beta_a[j],
                    ParamKind::BetaB(j) => theta.beta_b[j],
                    ParamKind::SA => theta.s_a,
                    ParamKind::SB => theta.s_b,
                    ParamKind::SAB => theta.s_ab,
                    ParamKind::Gamma => theta.gamma,
                    ParamKind::Rho => rho_to_eta(theta.rho),
                };
                v.clamp(lo, hi)
            })
            .collect()
    }

    /// Free parameters on the natural scale (ρ rather than η).
    pub fn natural(&self, phi: &[f64]) -> Vec<f64> {
        self.kinds
            .iter()
            .zip(phi)
            .map(|(k, &v)| if *k == ParamKind::Rho { eta_to_rho(v) } else { v })
            .collect()
    }

    /// Diagonal of `∂natural/∂phi`.
    pub fn natural_jacobian(&self, phi: &[f64]) -> Vec<f64> {
        self.kinds
            .iter()
            .zip(phi)
            .map(|(k, &v)| {
                if *k == ParamKind::Rho {
                    1.0 - eta_to_rho(v).powi(2)
                } else {
                    1.0
                }
            })
            .collect()
    }

    /// Rows of `∂(a, b, gamma_tilde, rho)/∂phi_k` at covariates `x` and lag.
    pub fn index_jacobian(&self, phi: &[f64], x: &[f64], lag: &ShareVector) -> Vec<[f64; 4]> {
        let additive = self.restrict_additive;
        let gap_slope = if additive { 0.0 } else { -lag.p_ab };
        self.kinds
            .iter()
            .zip(phi)
            .map(|(k, &v)| match *k {
                ParamKind::BetaA(j) => [x[j], 0.0, 0.0, 0.0],
                ParamKind::BetaB(j) => [0.0, x[j], 0.0, 0.0],
                ParamKind::SA => [lag.q_a(), 0.0, gap_slope, 0.0],
                ParamKind::SB => [0.0, lag.q_b(), gap_slope, 0.0],
                ParamKind::SAB => [0.0, 0.0, lag.p_ab, 0.0],
                ParamKind::Gamma => [0.0, 0.0, 1.0, 0.0],
                ParamKind::Rho => [0.0, 0.0, 0.0, 1.0 - eta_to_rho(v).powi(2)],
            })
            .collect()
    }

    /// Names of coordinates past half of their box, or on it for the
    /// correlation precursor. Estimates there are typically drifting toward
    /// the bound because the data carry no information on them.
    pub fn near_bound(&self, phi: &[f64]) -> Vec<String> {
        (0..self.len())
            .filter(|&k| {
                let (lo, hi) = (self.lower[k], self.upper[k]);
                if self.kinds[k] == ParamKind::Rho {
                    let tol = 1e-6 * hi.abs().max(1.0);
                    phi[k] <= lo + tol || phi[k] >= hi - tol
                } else {
                    (lo < 0.0 && phi[k] <= 0.5 * lo) || phi[k] >= 0.5 * hi
                }
            })
            .map(|k| self.names[k].clone())
            .collect()
    }
}
