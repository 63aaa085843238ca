//! Shared fixtures for the criterion benches.

use normbundle::{CovariateGen, CovariateSpec, ExclusionSpec, PanelDataset, ShareVector, SimConfig, Theta, simulate};

pub fn theta() -> Theta {
    Theta::additive(vec![-0.5, 0.3, 0.0], vec![-0.5, -0.2, -0.1], 2.4, 0.4, 1.0, -0.7).expect("valid parameters")
}

pub fn exclusion() -> ExclusionSpec {
    ExclusionSpec::new([2], [])
}

/// Four groups over four periods with `n` rows per group and period.
pub fn panel(n: usize) -> PanelDataset {
    let cfg = SimConfig {
        n_groups: 4,
        n_per_group_per_period: n,
        n_periods: 4,
        theta_true: theta(),
        covariate_spec: vec![
            CovariateSpec::new("const", CovariateGen::Constant { value: 1.0 }),
            CovariateSpec::new("x", CovariateGen::Binary { p: 0.5 }),
            CovariateSpec::new("ban", CovariateGen::PolicyStep { cutoff: 3 }),
        ],
        initial_shares: vec![ShareVector::new(0.2, 0.1, 0.3).expect("valid shares")],
        seed: 1,
    };
    simulate(&cfg).expect("simulation runs").data
}
