//! Shared fixtures for unit tests.

use crate::dgp::{CovariateGen, CovariateSpec, SimConfig};
use crate::model::{ExclusionSpec, ShareVector, Theta};

/// Intercept, a binary covariate and a ban step from period 3, excluded from A.
pub fn ban_design() -> Vec<CovariateSpec> {
    vec![
        CovariateSpec::new("const", CovariateGen::Constant { value: 1.0 }),
        CovariateSpec::new("x", CovariateGen::Binary { p: 0.5 }),
        CovariateSpec::new("ban", CovariateGen::PolicyStep { cutoff: 3 }),
    ]
}

pub fn ban_exclusion() -> ExclusionSpec {
    ExclusionSpec::new([2], [])
}

pub fn recovery_theta() -> Theta {
    Theta::additive(vec![-0.5, 0.3, 0.0], vec![-0.5, -0.2, -0.1], 2.4, 0.4, 1.0, -0.7).unwrap()
}

pub fn spread_initial_shares() -> Vec<ShareVector> {
    [(0.05, 0.05, 0.05), (0.45, 0.05, 0.35), (0.15, 0.35, 0.1), (0.1, 0.05, 0.75)]
        .iter()
        .map(|&(a, b, ab)| ShareVector::new(a, b, ab).unwrap())
        .collect()
}

pub fn recovery_config(theta: Theta, n: usize, seed: u64) -> SimConfig {
    SimConfig {
        n_groups: 4,
        n_per_group_per_period: n,
        n_periods: 4,
        theta_true: theta,
        covariate_spec: ban_design(),
        initial_shares: spread_initial_shares(),
        seed,
    }
}
