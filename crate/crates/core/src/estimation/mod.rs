//! Smoothed maximum-likelihood estimation with exclusion restrictions.

mod likelihood;
mod params;

pub use likelihood::{
    cell_scores, compute_lagged_shares, compute_lagged_shares_with, CellScores, CellShares, LagTable, Likelihood,
    LikelihoodCell, LikelihoodData, MIN_CELL_SIZE, PROB_FLOOR,
};
pub use params::{eta_to_rho, rho_to_eta, ParamKind, ParamMap, ETA_MAX};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::PanelDataset;
use crate::error::{Error, Result, StartRecord};
use crate::kernel::{QuadratureSpec, ShockGrid};
use crate::model::{utility_index, Bundle, ExclusionSpec, Theta};
use crate::optimize::{minimize_box, OptimizerOptions};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    /// Exact derivative of the smoothed objective.
    #[default]
    Analytic,
    /// Central differences, step `1e-6 max(1, |phi_k|)`.
    FiniteDifference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub exclusion: ExclusionSpec,
    pub quad: QuadratureSpec,
    pub restrict_additive: bool,
    /// Fixes all sanctions at zero, so lagged shares drop out.
    pub no_spillovers: bool,
    pub n_starts: usize,
    pub start_dispersion: f64,
    pub seed: u64,
    /// Tolerances apply to the mean log-likelihood per observation.
    pub optimizer: OptimizerOptions,
    pub s_nonnegative: bool,
    pub gradient: GradientMode,
    /// Half-width of the box on coefficients, sanctions and `Γ`.
    pub bound: f64,
    pub min_cell_size: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            exclusion: ExclusionSpec::default(),
            quad: QuadratureSpec::default(),
            restrict_additive: false,
            no_spillovers: false,
            n_starts: 8,
            start_dispersion: 0.5,
            seed: 0,
            optimizer: OptimizerOptions::default(),
            s_nonnegative: false,
            gradient: GradientMode::Analytic,
            bound: 10.0,
            min_cell_size: MIN_CELL_SIZE,
        }
    }
}

impl FitConfig {
    pub fn validate(&self, n_covariates: usize) -> Result<()> {
        if self.n_starts == 0 {
            return Err(Error::invalid("n_starts must be at least 1"));
        }
        if !(self.start_dispersion >= 0.0) {
            return Err(Error::invalid("start_dispersion must be nonnegative"));
        }
        self.optimizer.validate()?;
        self.quad.validate()?;
        self.exclusion.validate(n_covariates)
    }

    pub fn param_map(&self, covariate_names: &[String]) -> Result<ParamMap> {
        let map = ParamMap::new(
            covariate_names,
            &self.exclusion,
            self.restrict_additive,
            self.s_nonnegative,
            self.bound,
        )?;
        Ok(if self.no_spillovers { map.without_spillovers() } else { map })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta_hat: Theta,
    pub param_names: Vec<String>,
    /// Free parameters on the natural scale.
    pub estimates: Vec<f64>,
    /// Free parameters on the optimizer's scale (η for ρ).
    pub phi_hat: Vec<f64>,
    pub loglik: f64,
    pub converged: bool,
    pub best_start: usize,
    pub start_table: Vec<StartRecord>,
    pub lagged_share_table: LagTable,
    pub n_obs: usize,
    /// Gradient of the mean log-likelihood at the optimum, optimizer scale.
    pub gradient: Vec<f64>,
    /// Parameters drifting toward the box, typically because a bundle is
    /// absent from the data.
    pub near_bound: Vec<String>,
    pub absent_bundles: Vec<Bundle>,
    pub warnings: Vec<String>,
}

/// Log-likelihood of `theta` on `data` using the lag table `q_hat`. Rows in a
/// group's first period supply lags only.
pub fn loglik(theta: &Theta, data: &PanelDataset, q_hat: &LagTable, quad: &QuadratureSpec) -> Result<f64> {
    theta.validate()?;
    if theta.n_covariates() != data.n_covariates() {
        return Err(Error::DimensionMismatch {
            what: "theta covariates",
            expected: data.n_covariates(),
            got: theta.n_covariates(),
        });
    }
    let lik = LikelihoodData::with_lags(data, q_hat.clone())?;
    let grid = ShockGrid::new(*quad, theta.rho)?;
    let terms = lik
        .cells
        .par_iter()
        .map(|c| {
            let probs = grid.probs(&utility_index(theta, &c.x, &lik.lag(c))?)?.to_array();
            Ok((0..4).map(|v| c.counts[v] * probs[v].max(PROB_FLOOR).ln()).sum::<f64>())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(terms.iter().sum())
}

fn start_points(map: &ParamMap, cfg: &FitConfig) -> Vec<Vec<f64>> {
    (0..cfg.n_starts)
        .map(|s| {
            let mut phi = vec![0.0; map.len()];
            if s > 0 {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(s as u64);
                for (k, v) in phi.iter_mut().enumerate() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v = (cfg.start_dispersion * z).clamp(map.lower[k], map.upper[k]);
                }
            }
            phi
        })
        .collect()
}

struct StartOutcome {
    record: StartRecord,
    phi: Vec<f64>,
    gradient: Vec<f64>,
}

fn run_start(lik: &Likelihood, phi0: &[f64], cfg: &FitConfig) -> StartOutcome {
    let n = lik.data.n_obs.max(1) as f64;
    let objective = |phi: &[f64]| {
        let (ll, g) = match cfg.gradient {
            GradientMode::Analytic => lik.loglik_grad(phi)?,
            GradientMode::FiniteDifference => lik.loglik_grad_fd(phi)?,
        };
        Ok((-ll / n, g.into_iter().map(|v| -v / n).collect()))
    };
    match minimize_box(objective, phi0, &lik.map.lower, &lik.map.upper, &cfg.optimizer) {
        Ok(m) => StartOutcome {
            record: StartRecord {
                loglik: -m.value * n,
                converged: m.converged,
                iterations: m.iterations,
                gradient_norm: m.projected_gradient_norm,
            },
            gradient: m.gradient.iter().map(|v| -v).collect(),
            phi: m.x,
        },
        Err(e) => {
            log::warn!("optimizer start failed: {e}");
            StartOutcome {
                record: StartRecord {
                    loglik: f64::NEG_INFINITY,
                    converged: false,
                    iterations: 0,
                    gradient_norm: f64::INFINITY,
                },
                gradient: vec![f64::NAN; phi0.len()],
                phi: phi0.to_vec(),
            }
        }
    }
}

/// Multi-start maximum likelihood. The best converged start wins; ties go to
/// the lowest start index.
pub fn fit(data: &PanelDataset, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate(data.n_covariates())?;
    if data.periods().len() < 2 {
        return Err(Error::invalid("estimation needs at least two periods"));
    }
    let lags = compute_lagged_shares_with(data, cfg.min_cell_size)?;
    let lik_data = LikelihoodData::with_lags(data, lags)?;
    if lik_data.n_obs == 0 {
        return Err(Error::invalid("no rows after dropping first periods"));
    }
    let map = cfg.param_map(&data.covariate_names)?;
    let lik = Likelihood::new(&lik_data, &map, cfg.quad);

    let outcomes: Vec<StartOutcome> = start_points(&map, cfg)
        .par_iter()
        .map(|phi0| run_start(&lik, phi0, cfg))
        .collect();
    let start_table: Vec<StartRecord> = outcomes.iter().map(|o| o.record.clone()).collect();
    let mut best: Option<usize> = None;
    for (i, o) in outcomes.iter().enumerate() {
        if o.record.converged && best.is_none_or(|b| o.record.loglik > outcomes[b].record.loglik) {
            best = Some(i);
        }
    }
    let Some(best) = best else {
        return Err(Error::NonConvergence { starts: start_table });
    };
    let o = &outcomes[best];

    let mut warnings = Vec::new();
    let absent_bundles: Vec<Bundle> = lik_data
        .absent_bundles()
        .into_iter()
        .map(|v| Bundle::from_code(v as u8).expect("bundle code"))
        .collect();
    for b in &absent_bundles {
        warnings.push(format!("bundle {} never observed", b.label()));
    }
    let near_bound = map.near_bound(&o.phi);
    for name in &near_bound {
        warnings.push(format!("{name} is drifting toward the parameter bound"));
    }
    let small = lik_data.lags.small_cells();
    if !small.is_empty() {
        warnings.push(format!(
            "{} lag cells have fewer than {} observations",
            small.len(),
            cfg.min_cell_size
        ));
    }

    Ok(FitResult {
        theta_hat: map.theta(&o.phi),
        param_names: map.names.clone(),
        estimates: map.natural(&o.phi),
        phi_hat: o.phi.clone(),
        loglik: o.record.loglik,
        converged: true,
        best_start: best,
        start_table,
        lagged_share_table: lik_data.lags.clone(),
        n_obs: lik_data.n_obs,
        gradient: o.gradient.clone(),
        near_bound,
        absent_bundles,
        warnings,
    })
}
