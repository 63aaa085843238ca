//! Parameters, share vectors and the deterministic utility algebra.
//!
//! The four bundles are coded `0..4` in the order (none, A only, B only, both).
//! Column 0 of every covariate vector is the intercept by convention.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `p_A + p_B + p_AB <= 1`.
pub const SIMPLEX_SLACK: f64 = 1e-12;

/// One of the four mutually exclusive bundles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Bundle {
    Empty = 0,
    A = 1,
    B = 2,
    AB = 3,
}

impl Bundle {
    pub const ALL: [Bundle; 4] = [Bundle::Empty, Bundle::A, Bundle::B, Bundle::AB];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Bundle> {
        Bundle::ALL.get(code as usize).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            Bundle::Empty => "empty",
            Bundle::A => "A",
            Bundle::B => "B",
            Bundle::AB => "AB",
        }
    }

    /// Indicator vector `(1{A}, 1{B}, 1{AB})` used by the share moments.
    pub fn indicator(self) -> [f64; 3] {
        match self {
            Bundle::Empty => [0.0, 0.0, 0.0],
            Bundle::A => [1.0, 0.0, 0.0],
            Bundle::B => [0.0, 1.0, 0.0],
            Bundle::AB => [0.0, 0.0, 1.0],
        }
    }
}

/// Structural parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub beta_a: Vec<f64>,
    pub beta_b: Vec<f64>,
    pub s_a: f64,
    pub s_b: f64,
    pub s_ab: f64,
    pub gamma: f64,
    pub rho: f64,
    #[serde(default)]
    pub restrict_additive: bool,
}

impl Theta {
    /// Builds an unrestricted parameter vector.
    pub fn new(
        beta_a: Vec<f64>,
        beta_b: Vec<f64>,
        s_a: f64,
        s_b: f64,
        s_ab: f64,
        gamma: f64,
        rho: f64,
    ) -> Result<Self> {
        let theta = Theta {
            beta_a,
            beta_b,
            s_a,
            s_b,
            s_ab,
            gamma,
            rho,
            restrict_additive: false,
        };
        theta.validate()?;
        Ok(theta)
    }

    /// Builds a parameter vector with `s_AB = s_A + s_B` imposed.
    pub fn additive(
        beta_a: Vec<f64>,
        beta_b: Vec<f64>,
        s_a: f64,
        s_b: f64,
        gamma: f64,
        rho: f64,
    ) -> Result<Self> {
        let theta = Theta {
            beta_a,
            beta_b,
            s_a,
            s_b,
            s_ab: s_a + s_b,
            gamma,
            rho,
            restrict_additive: true,
        };
        theta.validate()?;
        Ok(theta)
    }

    /// All-zero parameters with `p` covariate columns.
    pub fn zeros(p: usize) -> Self {
        Theta {
            beta_a: vec![0.0; p],
            beta_b: vec![0.0; p],
            s_a: 0.0,
            s_b: 0.0,
            s_ab: 0.0,
            gamma: 0.0,
            rho: 0.0,
            restrict_additive: false,
        }
    }

    pub fn n_covariates(&self) -> usize {
        self.beta_a.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta_a.len() != self.beta_b.len() {
            return Err(Error::DimensionMismatch {
                what: "beta_b",
                expected: self.beta_a.len(),
                got: self.beta_b.len(),
            });
        }
        if !(self.rho > -1.0 && self.rho < 1.0) {
            return Err(Error::invalid(format!("rho = {} must lie in (-1, 1)", self.rho)));
        }
        if self.restrict_additive && self.s_ab != self.s_a + self.s_b {
            return Err(Error::invalid(
                "restrict_additive is set but s_AB != s_A + s_B",
            ));
        }
        let scalars = [self.s_a, self.s_b, self.s_ab, self.gamma];
        if scalars.iter().chain(&self.beta_a).chain(&self.beta_b).any(|v| !v.is_finite()) {
            return Err(Error::invalid("theta contains non-finite values"));
        }
        Ok(())
    }

    /// Re-imposes `s_AB = s_A + s_B` when the additive flag is set.
    pub fn sync_additive(&mut self) {
        if self.restrict_additive {
            self.s_ab = self.s_a + self.s_b;
        }
    }

    /// Non-linear sanction gap `s_AB - s_A - s_B`.
    pub fn sanction_gap(&self) -> f64 {
        self.s_ab - self.s_a - self.s_b
    }

    /// Returns a copy with the roles of the two norms exchanged.
    pub fn swapped(&self) -> Theta {
        Theta {
            beta_a: self.beta_b.clone(),
            beta_b: self.beta_a.clone(),
            s_a: self.s_b,
            s_b: self.s_a,
            ..self.clone()
        }
    }
}

/// Group adoption shares `(p_A, p_B, p_AB)`; the outside share is derived.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShareVector {
    pub p_a: f64,
    pub p_b: f64,
    pub p_ab: f64,
}

impl ShareVector {
    pub fn new(p_a: f64, p_b: f64, p_ab: f64) -> Result<Self> {
        let s = ShareVector { p_a, p_b, p_ab };
        s.validate()?;
        Ok(s)
    }

    /// Constructs without validation; for internal arithmetic such as deltas.
    pub const fn raw(p_a: f64, p_b: f64, p_ab: f64) -> Self {
        ShareVector { p_a, p_b, p_ab }
    }

    pub const fn zero() -> Self {
        ShareVector::raw(0.0, 0.0, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("p_A", self.p_a), ("p_B", self.p_b), ("p_AB", self.p_ab)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if self.p_a + self.p_b + self.p_ab > 1.0 + SIMPLEX_SLACK {
            return Err(Error::invalid(format!(
                "shares sum to {} > 1",
                self.p_a + self.p_b + self.p_ab
            )));
        }
        Ok(())
    }

    /// Share choosing neither norm.
    pub fn p_empty(&self) -> f64 {
        1.0 - self.p_a - self.p_b - self.p_ab
    }

    /// Prevalence of norm A (alone or jointly).
    pub fn q_a(&self) -> f64 {
        self.p_a + self.p_ab
    }

    /// Prevalence of norm B (alone or jointly).
    pub fn q_b(&self) -> f64 {
        self.p_b + self.p_ab
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.p_a, self.p_b, self.p_ab]
    }

    pub fn from_array(v: [f64; 3]) -> Self {
        ShareVector::raw(v[0], v[1], v[2])
    }

    pub fn sup_distance(&self, other: &ShareVector) -> f64 {
        (self.p_a - other.p_a)
            .abs()
            .max((self.p_b - other.p_b).abs())
            .max((self.p_ab - other.p_ab).abs())
    }

    pub fn sub(&self, other: &ShareVector) -> ShareVector {
        ShareVector::raw(self.p_a - other.p_a, self.p_b - other.p_b, self.p_ab - other.p_ab)
    }

    pub fn swapped(&self) -> ShareVector {
        ShareVector::raw(self.p_b, self.p_a, self.p_ab)
    }
}

/// Covariates of one individual together with group and period labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovariateRow {
    pub x: Vec<f64>,
    pub group_id: u32,
    pub period: u32,
}

impl CovariateRow {
    pub fn new(x: Vec<f64>, group_id: u32, period: u32) -> Self {
        CovariateRow { x, group_id, period }
    }
}

/// Column indices constrained to zero in each coefficient block.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionSpec {
    pub idx_a: BTreeSet<usize>,
    pub idx_b: BTreeSet<usize>,
}

impl ExclusionSpec {
    pub fn new(idx_a: impl IntoIterator<Item = usize>, idx_b: impl IntoIterator<Item = usize>) -> Self {
        ExclusionSpec {
            idx_a: idx_a.into_iter().collect(),
            idx_b: idx_b.into_iter().collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.idx_a.is_empty() && self.idx_b.is_empty()
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if let Some(&i) = self.idx_a.iter().chain(&self.idx_b).find(|&&i| i >= p) {
            return Err(Error::invalid(format!(
                "exclusion index {i} outside covariate range 0..{p}"
            )));
        }
        Ok(())
    }
}

/// Deterministic utility indices: `a = ū_A`, `b = ū_B` and `gamma_tilde`, so
/// that `ū_AB = a + b + gamma_tilde`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UtilityIndex {
    pub a: f64,
    pub b: f64,
    pub gamma_tilde: f64,
}

impl UtilityIndex {
    pub fn ab(&self) -> f64 {
        self.a + self.b + self.gamma_tilde
    }
}

fn dot(x: &[f64], beta: &[f64]) -> f64 {
    x.iter().zip(beta).map(|(x, b)| x * b).sum()
}

/// `Γ + p_AB (s_AB - s_A - s_B)` evaluated at the lagged shares.
pub fn gamma_tilde(theta: &Theta, lag: &ShareVector) -> f64 {
    theta.gamma + lag.p_ab * theta.sanction_gap()
}

/// Utility indices for covariates `x` and lagged shares `lag`.
pub fn utility_index(theta: &Theta, x: &[f64], lag: &ShareVector) -> Result<UtilityIndex> {
    if x.len() != theta.beta_a.len() || x.len() != theta.beta_b.len() {
        return Err(Error::DimensionMismatch {
            what: "covariate row",
            expected: theta.beta_a.len(),
            got: x.len(),
        });
    }
    Ok(UtilityIndex {
        a: dot(x, &theta.beta_a) + theta.s_a * lag.q_a(),
        b: dot(x, &theta.beta_b) + theta.s_b * lag.q_b(),
        gamma_tilde: gamma_tilde(theta, lag),
    })
}

/// Mean utilities `(ū_∅, ū_A, ū_B, ū_AB)` without idiosyncratic shocks.
pub fn mean_utilities(theta: &Theta, x: &CovariateRow, lag: &ShareVector) -> Result<[f64; 4]> {
    let idx = utility_index(theta, &x.x, lag)?;
    Ok([0.0, idx.a, idx.b, idx.ab()])
}
