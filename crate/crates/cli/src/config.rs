//! TOML run configuration.

use std::path::Path;

use normbundle::estimation::GradientMode;
use normbundle::{
    CovariateSpec, Error, ExclusionSpec, FitConfig, InferenceOptions, OptimizerOptions, Outcome, ResidualizeSpec, Result,
    SabAdjustRule, ShareVector, SimConfig, SolverOptions, QuadratureSpec, Theta,
};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub quadrature: QuadratureSpec,
    pub optimizer: OptimizerOptions,
    pub estimation: EstimationConfig,
    pub inference: InferenceOptions,
    pub theta: Option<ThetaConfig>,
    pub simulation: Option<SimulationConfig>,
    pub equilibrium: EquilibriumConfig,
    pub counterfactual: Option<CounterfactualConfig>,
    pub residualize: Option<ResidualizeSpec>,
    pub output: OutputConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Covariate columns in model order; column 0 is the intercept.
    pub covariates: Option<Vec<String>>,
    pub exclude_a: Vec<String>,
    pub exclude_b: Vec<String>,
    pub restrict_additive: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationConfig {
    pub n_starts: usize,
    pub start_dispersion: f64,
    pub s_nonnegative: bool,
    pub no_spillovers: bool,
    pub gradient: GradientMode,
    pub bound: f64,
    pub min_cell_size: usize,
    pub recode: Vec<String>,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        let f = FitConfig::default();
        EstimationConfig {
            n_starts: f.n_starts,
            start_dispersion: f.start_dispersion,
            s_nonnegative: f.s_nonnegative,
            no_spillovers: f.no_spillovers,
            gradient: f.gradient,
            bound: f.bound,
            min_cell_size: f.min_cell_size,
            recode: Vec::new(),
        }
    }
}

/// Structural parameters; `s_ab` absent means additive sanctions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaConfig {
    pub beta_a: Vec<f64>,
    pub beta_b: Vec<f64>,
    pub s_a: f64,
    pub s_b: f64,
    pub s_ab: Option<f64>,
    pub gamma: f64,
    pub rho: f64,
}

impl ThetaConfig {
    pub fn theta(&self) -> Result<Theta> {
        let (a, b) = (self.beta_a.clone(), self.beta_b.clone());
        match self.s_ab {
            Some(s_ab) => Theta::new(a, b, self.s_a, self.s_b, s_ab, self.gamma, self.rho),
            None => Theta::additive(a, b, self.s_a, self.s_b, self.gamma, self.rho),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub n_groups: u32,
    pub n_per_group_per_period: usize,
    pub n_periods: u32,
    pub covariates: Vec<CovariateSpec>,
    /// `[p_A, p_B, p_AB]` per group, or one row for all groups.
    pub initial_shares: Vec<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EquilibriumConfig {
    /// Point covariate vector; otherwise the last period of `--data`, or the
    /// intercept alone.
    pub x: Option<Vec<f64>>,
    /// Starts on an `m^3` simplex lattice instead of the default three.
    pub lattice: Option<usize>,
    pub solver: SolverOptions,
    /// Re-solve and classify with exact probabilities.
    pub refine_exact: bool,
}

impl Default for EquilibriumConfig {
    fn default() -> Self {
        EquilibriumConfig {
            x: None,
            lattice: None,
            solver: SolverOptions::default(),
            refine_exact: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CounterfactualConfig {
    pub horizons: Vec<u32>,
    pub reanchor: bool,
    pub policies: Vec<PolicyConfig>,
}

impl Default for CounterfactualConfig {
    fn default() -> Self {
        CounterfactualConfig {
            horizons: vec![1, 5, 10],
            reanchor: false,
            policies: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub name: String,
    pub delta_shift_a: f64,
    pub delta_shift_b: f64,
    pub s_scale_a: f64,
    pub s_ab_adjust_rule: SabAdjustRule,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            name: "policy".into(),
            delta_shift_a: 0.0,
            delta_shift_b: 0.0,
            s_scale_a: 1.0,
            s_ab_adjust_rule: SabAdjustRule::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<String>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::invalid(format!("config {}: {e}", path.display())))
    }

    pub fn theta(&self) -> Result<Option<Theta>> {
        self.theta.as_ref().map(ThetaConfig::theta).transpose()
    }

    /// Resolves exclusion names against the model's covariate columns.
    pub fn exclusion(&self, columns: &[String]) -> Result<ExclusionSpec> {
        let resolve = |names: &[String]| -> Result<Vec<usize>> {
            names
                .iter()
                .map(|n| {
                    columns
                        .iter()
                        .position(|c| c == n)
                        .ok_or_else(|| Error::invalid(format!("excluded column '{n}' is not a model covariate")))
                })
                .collect()
        };
        let a = resolve(&self.model.exclude_a)?;
        let b = resolve(&self.model.exclude_b)?;
        if let Some(&j) = a.iter().find(|j| b.contains(j)) {
            return Err(Error::invalid(format!("column '{}' is excluded from both norms", columns[j])));
        }
        Ok(ExclusionSpec::new(a, b))
    }

    pub fn fit_config(&self, columns: &[String]) -> Result<FitConfig> {
        let e = &self.estimation;
        Ok(FitConfig {
            exclusion: self.exclusion(columns)?,
            quad: self.quadrature,
            restrict_additive: self.model.restrict_additive,
            no_spillovers: e.no_spillovers,
            n_starts: e.n_starts,
            start_dispersion: e.start_dispersion,
            seed: self.seed,
            optimizer: self.optimizer,
            s_nonnegative: e.s_nonnegative,
            gradient: e.gradient,
            bound: e.bound,
            min_cell_size: e.min_cell_size,
        })
    }

    pub fn sim_config(&self) -> Result<SimConfig> {
        let sim = self
            .simulation
            .as_ref()
            .ok_or_else(|| Error::invalid("simulate needs a [simulation] section"))?;
        let theta = self.theta()?.ok_or_else(|| Error::invalid("simulate needs a [theta] section"))?;
        let initial_shares = sim
            .initial_shares
            .iter()
            .map(|&[a, b, ab]| ShareVector::new(a, b, ab))
            .collect::<Result<Vec<_>>>()?;
        let cfg = SimConfig {
            n_groups: sim.n_groups,
            n_per_group_per_period: sim.n_per_group_per_period,
            n_periods: sim.n_periods,
            theta_true: theta,
            covariate_spec: sim.covariates.clone(),
            initial_shares,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn residualize_spec(&self) -> Result<ResidualizeSpec> {
        self.residualize
            .clone()
            .ok_or_else(|| Error::invalid("residualize needs a [residualize] section"))
    }
}

pub fn outcome_label(o: Outcome) -> &'static str {
    match o {
        Outcome::AOnly => "A only",
        Outcome::BOnly => "B only",
        Outcome::AB => "AB",
        Outcome::Any => "any",
    }
}
