//! Synthetic repeated cross-sections from the dynamic model.
//!
//! Each period draws fresh individuals in every group. Their utilities use the
//! previous period's realized sample shares within the group as the lag;
//! period 1 uses the configured initial shares.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{argmax_bundle, draw_shocks, realized_utilities};
use crate::model::{utility_index, Bundle, CovariateRow, ShareVector, Theta};

/// Generator for one covariate column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateGen {
    Constant {
        #[serde(default = "one")]
        value: f64,
    },
    Binary {
        p: f64,
    },
    Normal {
        mean: f64,
        sd: f64,
    },
    /// One from `cutoff` onwards, zero before.
    PolicyStep {
        cutoff: u32,
    },
}

fn one() -> f64 {
    1.0
}

impl CovariateGen {
    fn validate(&self) -> Result<()> {
        match *self {
            CovariateGen::Binary { p } if !(0.0..=1.0).contains(&p) => {
                Err(Error::invalid(format!("binary probability {p} outside [0, 1]")))
            }
            CovariateGen::Normal { sd, .. } if !(sd >= 0.0) => {
                Err(Error::invalid(format!("normal sd {sd} must be nonnegative")))
            }
            CovariateGen::Constant { value } if !value.is_finite() => Err(Error::invalid("constant must be finite")),
            _ => Ok(()),
        }
    }

    fn draw<R: Rng>(&self, rng: &mut R, period: u32) -> f64 {
        match *self {
            CovariateGen::Constant { value } => value,
            CovariateGen::Binary { p } => {
                if rng.random::<f64>() < p {
                    1.0
                } else {
                    0.0
                }
            }
            CovariateGen::Normal { mean, sd } => mean + sd * rng.sample::<f64, _>(StandardNormal),
            CovariateGen::PolicyStep { cutoff } => {
                if period >= cutoff {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// A named covariate column and its generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    #[serde(flatten)]
    pub gen: CovariateGen,
}

impl CovariateSpec {
    pub fn new(name: impl Into<String>, gen: CovariateGen) -> Self {
        CovariateSpec { name: name.into(), gen }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_groups: u32,
    pub n_per_group_per_period: usize,
    pub n_periods: u32,
    pub theta_true: Theta,
    pub covariate_spec: Vec<CovariateSpec>,
    /// One vector per group, or a single vector shared by all groups.
    pub initial_shares: Vec<ShareVector>,
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_groups == 0 || self.n_per_group_per_period == 0 {
            return Err(Error::invalid("n_groups and n_per_group_per_period must be positive"));
        }
        if self.n_periods < 2 {
            return Err(Error::invalid("n_periods must be at least 2"));
        }
        self.theta_true.validate()?;
        if self.covariate_spec.len() != self.theta_true.n_covariates() {
            return Err(Error::DimensionMismatch {
                what: "covariate_spec",
                expected: self.theta_true.n_covariates(),
                got: self.covariate_spec.len(),
            });
        }
        for c in &self.covariate_spec {
            c.gen.validate()?;
        }
        let n = self.initial_shares.len();
        if n != 1 && n != self.n_groups as usize {
            return Err(Error::DimensionMismatch {
                what: "initial_shares",
                expected: self.n_groups as usize,
                got: n,
            });
        }
        for s in &self.initial_shares {
            s.validate()?;
        }
        Ok(())
    }

    pub fn initial_for(&self, group: u32) -> ShareVector {
        if self.initial_shares.len() == 1 {
            self.initial_shares[0]
        } else {
            self.initial_shares[group as usize]
        }
    }

    pub fn covariate_names(&self) -> Vec<String> {
        self.covariate_spec.iter().map(|c| c.name.clone()).collect()
    }
}

/// One individual observation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanelRow {
    pub id: u64,
    pub period: u32,
    pub group: u32,
    pub choice: Bundle,
    pub x: Vec<f64>,
}

impl PanelRow {
    pub fn covariates(&self) -> CovariateRow {
        CovariateRow::new(self.x.clone(), self.group, self.period)
    }
}

/// Repeated cross-section micro-data.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PanelDataset {
    pub covariate_names: Vec<String>,
    pub rows: Vec<PanelRow>,
}

impl PanelDataset {
    pub fn new(covariate_names: Vec<String>, rows: Vec<PanelRow>) -> Result<Self> {
        let p = covariate_names.len();
        if let Some(r) = rows.iter().find(|r| r.x.len() != p) {
            return Err(Error::DimensionMismatch {
                what: "covariate row",
                expected: p,
                got: r.x.len(),
            });
        }
        Ok(PanelDataset { covariate_names, rows })
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn periods(&self) -> Vec<u32> {
        let mut v: Vec<u32> = self.rows.iter().map(|r| r.period).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn groups(&self) -> Vec<u32> {
        let mut v: Vec<u32> = self.rows.iter().map(|r| r.group).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|c| c == name)
    }

    /// Rows observed in `period`, as covariate rows.
    pub fn covariates_in_period(&self, period: u32) -> Vec<CovariateRow> {
        self.rows.iter().filter(|r| r.period == period).map(|r| r.covariates()).collect()
    }
}

/// Simulated data together with the realized share path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimOutput {
    pub data: PanelDataset,
    /// `share_path[g][t - 1]`: realized sample shares of group `g` in period `t`.
    pub share_path: Vec<Vec<ShareVector>>,
}

/// Sample shares `(A, B, AB)` of a set of choices.
pub fn sample_shares(choices: impl IntoIterator<Item = Bundle>) -> ShareVector {
    let mut counts = [0usize; 4];
    let mut n = 0usize;
    for c in choices {
        counts[c as usize] += 1;
        n += 1;
    }
    if n == 0 {
        return ShareVector::zero();
    }
    let n = n as f64;
    ShareVector::raw(counts[1] as f64 / n, counts[2] as f64 / n, counts[3] as f64 / n)
}

fn simulate_group(cfg: &SimConfig, group: u32) -> Result<(Vec<PanelRow>, Vec<ShareVector>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(group as u64);
    let n = cfg.n_per_group_per_period;
    let theta = &cfg.theta_true;
    let mut rows = Vec::with_capacity(n * cfg.n_periods as usize);
    let mut path = Vec::with_capacity(cfg.n_periods as usize);
    let mut lag = cfg.initial_for(group);
    for period in 1..=cfg.n_periods {
        let mut choices = Vec::with_capacity(n);
        for i in 0..n {
            let x: Vec<f64> = cfg.covariate_spec.iter().map(|c| c.gen.draw(&mut rng, period)).collect();
            let (za, zb) = draw_shocks(&mut rng, theta.rho);
            let idx = utility_index(theta, &x, &lag)?;
            let choice = argmax_bundle(&realized_utilities(&idx, za, zb));
            choices.push(choice);
            let id = (group as u64 * cfg.n_periods as u64 + (period - 1) as u64) * n as u64 + i as u64;
            rows.push(PanelRow {
                id,
                period,
                group,
                choice,
                x,
            });
        }
        lag = sample_shares(choices);
        path.push(lag);
    }
    Ok((rows, path))
}

/// Simulates the dynamic model. Groups use independent random streams derived
/// from `cfg.seed`, so the output does not depend on thread scheduling.
pub fn simulate(cfg: &SimConfig) -> Result<SimOutput> {
    cfg.validate()?;
    let per_group = (0..cfg.n_groups)
        .into_par_iter()
        .map(|g| simulate_group(cfg, g))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(cfg.n_groups as usize * cfg.n_periods as usize * cfg.n_per_group_per_period);
    let mut share_path = Vec::with_capacity(cfg.n_groups as usize);
    for (r, p) in per_group {
        rows.extend(r);
        share_path.push(p);
    }
    Ok(SimOutput {
        data: PanelDataset::new(cfg.covariate_names(), rows)?,
        share_path,
    })
}
