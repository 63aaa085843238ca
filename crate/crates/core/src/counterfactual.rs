//! Forward-iterated policy counterfactuals.
//!
//! The baseline path starts from the observed shares of the first period and
//! iterates the best-response map with each period's covariate distribution,
//! then with the last period's distribution beyond the sample. The policy
//! path coincides with the baseline through the last observed period `T` and
//! iterates under the intervened parameters afterwards.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::PanelDataset;
use crate::equilibrium::{BestResponse, CovariateDist};
use crate::error::{Error, Result};
use crate::estimation::compute_lagged_shares;
use crate::kernel::{ProbabilityRule, QuadratureSpec};
use crate::model::{ShareVector, Theta};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SabAdjustRule {
    /// Lower `s_AB` by the cut in `s_A`.
    #[default]
    ProportionalToSaCut,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicySpec {
    pub delta_shift_a: f64,
    pub delta_shift_b: f64,
    pub s_scale_a: f64,
    pub s_ab_adjust_rule: SabAdjustRule,
    pub horizons: Vec<u32>,
}

impl Default for PolicySpec {
    fn default() -> Self {
        PolicySpec {
            delta_shift_a: 0.0,
            delta_shift_b: 0.0,
            s_scale_a: 1.0,
            s_ab_adjust_rule: SabAdjustRule::ProportionalToSaCut,
            horizons: vec![1, 5, 10],
        }
    }
}

impl PolicySpec {
    pub fn identity(horizons: Vec<u32>) -> Self {
        PolicySpec {
            horizons,
            ..PolicySpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s_scale_a > 0.0) || !self.s_scale_a.is_finite() {
            return Err(Error::invalid("s_scale_a must be positive"));
        }
        if !self.delta_shift_a.is_finite() || !self.delta_shift_b.is_finite() {
            return Err(Error::invalid("intercept shifts must be finite"));
        }
        if self.horizons.is_empty() || self.horizons[0] == 0 || self.horizons.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("horizons must be nonempty, at least 1 and strictly increasing"));
        }
        Ok(())
    }

    pub fn max_horizon(&self) -> u32 {
        *self.horizons.last().unwrap_or(&0)
    }

    /// Intervened parameters. Intercepts are the column-0 coefficients.
    pub fn apply(&self, theta: &Theta) -> Result<Theta> {
        self.validate()?;
        if theta.n_covariates() == 0 {
            return Err(Error::invalid("intercept shifts need at least one covariate column"));
        }
        let mut t = theta.clone();
        t.beta_a[0] += self.delta_shift_a;
        t.beta_b[0] += self.delta_shift_b;
        let cut = (1.0 - self.s_scale_a) * theta.s_a;
        t.s_a = self.s_scale_a * theta.s_a;
        match self.s_ab_adjust_rule {
            SabAdjustRule::ProportionalToSaCut => t.s_ab = theta.s_ab - cut,
            SabAdjustRule::None => {
                if cut != 0.0 {
                    t.restrict_additive = false;
                }
            }
        }
        t.validate()?;
        Ok(t)
    }
}

/// Observed history of one group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupHistory {
    pub group: u32,
    /// Observed shares for periods `1..=T`.
    pub observed: Vec<ShareVector>,
    /// Covariate distribution of each observed period.
    pub covariates: Vec<CovariateDist>,
    /// Aggregation weight, the last period's sample size by default.
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualInput {
    /// Labels of the observed periods, in order.
    pub periods: Vec<u32>,
    pub groups: Vec<GroupHistory>,
}

impl CounterfactualInput {
    /// Observed shares and covariate distributions from micro-data. Every
    /// group must be observed in every period.
    pub fn from_data(data: &PanelDataset) -> Result<Self> {
        let periods = data.periods();
        let lags = compute_lagged_shares(data)?;
        let mut missing = Vec::new();
        let mut groups = Vec::new();
        for g in data.groups() {
            let mut observed = Vec::new();
            let mut covariates = Vec::new();
            let mut weight = 0.0;
            for &t in &periods {
                match lags.get(g, t) {
                    Some(c) => {
                        observed.push(c.shares);
                        let rows: Vec<_> = data
                            .rows
                            .iter()
                            .filter(|r| r.group == g && r.period == t)
                            .map(|r| r.covariates())
                            .collect();
                        covariates.push(CovariateDist::empirical(&rows)?);
                        weight = c.n as f64;
                    }
                    None => missing.push((g, t)),
                }
            }
            groups.push(GroupHistory {
                group: g,
                observed,
                covariates,
                weight,
            });
        }
        if !missing.is_empty() {
            let cells: Vec<String> = missing.iter().map(|(g, t)| format!("(group {g}, period {t})")).collect();
            return Err(Error::invalid(format!("missing observed shares for {}", cells.join(", "))));
        }
        Ok(CounterfactualInput { periods, groups })
    }

    /// A single group observed once at `shares`, e.g. at an equilibrium.
    pub fn from_state(x_dist: CovariateDist, shares: ShareVector) -> Self {
        CounterfactualInput {
            periods: vec![1],
            groups: vec![GroupHistory {
                group: 0,
                observed: vec![shares],
                covariates: vec![x_dist],
                weight: 1.0,
            }],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.periods.len();
        if t == 0 || self.groups.is_empty() {
            return Err(Error::invalid("counterfactual input has no periods or groups"));
        }
        for g in &self.groups {
            if g.observed.len() != t || g.covariates.len() != t {
                return Err(Error::DimensionMismatch {
                    what: "group history",
                    expected: t,
                    got: g.observed.len().min(g.covariates.len()),
                });
            }
            if !(g.weight >= 0.0) {
                return Err(Error::invalid("group weights must be nonnegative"));
            }
        }
        if !(self.groups.iter().map(|g| g.weight).sum::<f64>() > 0.0) {
            return Err(Error::invalid("group weights sum to zero"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CounterfactualOptions {
    /// Iterate the baseline from the observed shares of the previous period
    /// for `t <= T` instead of from its own previous value.
    pub reanchor: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonDelta {
    pub h: u32,
    pub delta: ShareVector,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupPath {
    pub group: u32,
    /// Periods `1..=T+H`.
    pub baseline: Vec<ShareVector>,
    /// Periods `T..=T+H`; the first entry equals the baseline at `T`.
    pub policy: Vec<ShareVector>,
    pub deltas: Vec<HorizonDelta>,
}

impl GroupPath {
    /// Policy share at `t = T + h`.
    pub fn policy_at(&self, h: u32) -> ShareVector {
        self.policy[h as usize]
    }

    /// Baseline share at `t = T + h`.
    pub fn baseline_at(&self, h: u32) -> ShareVector {
        self.baseline[self.baseline.len() - self.policy.len() + h as usize]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualPath {
    pub periods: Vec<u32>,
    pub theta_policy: Theta,
    pub groups: Vec<GroupPath>,
    /// Normalized aggregation weights, in group order.
    pub weights: Vec<f64>,
    /// Weighted average of the group deltas.
    pub deltas: Vec<HorizonDelta>,
}

fn iterate(map: &BestResponse, start: ShareVector, steps: u32) -> Result<Vec<ShareVector>> {
    let mut out = Vec::with_capacity(steps as usize + 1);
    out.push(start);
    for _ in 0..steps {
        let next = map.eval(out.last().expect("nonempty"))?;
        out.push(next);
    }
    Ok(out)
}

fn group_path(
    g: &GroupHistory,
    theta: &Theta,
    theta_pol: &Theta,
    rule: &ProbabilityRule,
    horizons: &[u32],
    opts: &CounterfactualOptions,
) -> Result<GroupPath> {
    let t_obs = g.observed.len();
    let max_h = *horizons.last().expect("validated");
    let mut baseline = vec![g.observed[0]];
    for t in 1..t_obs {
        let map = BestResponse::with_rule(theta, &g.covariates[t], rule)?;
        let prev = if opts.reanchor { g.observed[t - 1] } else { baseline[t - 1] };
        baseline.push(map.eval(&prev)?);
    }
    let last = &g.covariates[t_obs - 1];
    let base_map = BestResponse::with_rule(theta, last, rule)?;
    let pol_map = BestResponse::with_rule(theta_pol, last, rule)?;
    let anchor = baseline[t_obs - 1];
    baseline.extend(iterate(&base_map, anchor, max_h)?.into_iter().skip(1));
    let policy = iterate(&pol_map, anchor, max_h)?;
    let mut path = GroupPath {
        group: g.group,
        baseline,
        policy,
        deltas: Vec::new(),
    };
    path.deltas = horizons
        .iter()
        .map(|&h| HorizonDelta {
            h,
            delta: path.policy_at(h).sub(&path.baseline_at(h)),
        })
        .collect();
    Ok(path)
}

/// Baseline and policy paths with smoothed probabilities.
pub fn run_counterfactual(
    input: &CounterfactualInput,
    theta: &Theta,
    policy: &PolicySpec,
    quad: &QuadratureSpec,
    opts: &CounterfactualOptions,
) -> Result<CounterfactualPath> {
    run_counterfactual_with(input, theta, policy, &ProbabilityRule::Smoothed(*quad), opts)
}

/// As [`run_counterfactual`] with an arbitrary probability rule.
pub fn run_counterfactual_with(
    input: &CounterfactualInput,
    theta: &Theta,
    policy: &PolicySpec,
    rule: &ProbabilityRule,
    opts: &CounterfactualOptions,
) -> Result<CounterfactualPath> {
    input.validate()?;
    theta.validate()?;
    let theta_pol = policy.apply(theta)?;
    let groups = input
        .groups
        .par_iter()
        .map(|g| group_path(g, theta, &theta_pol, rule, &policy.horizons, opts))
        .collect::<Result<Vec<_>>>()?;
    let total: f64 = input.groups.iter().map(|g| g.weight).sum();
    let weights: Vec<f64> = input.groups.iter().map(|g| g.weight / total).collect();
    let deltas = policy
        .horizons
        .iter()
        .enumerate()
        .map(|(i, &h)| {
            let mut acc = [0.0; 3];
            for (gp, w) in groups.iter().zip(&weights) {
                for (a, d) in acc.iter_mut().zip(gp.deltas[i].delta.to_array()) {
                    *a += w * d;
                }
            }
            HorizonDelta {
                h,
                delta: ShareVector::from_array(acc),
            }
        })
        .collect();
    Ok(CounterfactualPath {
        periods: input.periods.clone(),
        theta_policy: theta_pol,
        groups,
        weights,
        deltas,
    })
}

impl CounterfactualPath {
    /// Period label of path index `i` (zero-based from the first period).
    pub fn period_label(&self, i: usize) -> u32 {
        let t = self.periods.len();
        if i < t {
            self.periods[i]
        } else {
            self.periods[t - 1] + (i + 1 - t) as u32
        }
    }

    /// Long-format records `(group, period, scenario, shares)`: the baseline
    /// over all periods when `with_baseline`, then the policy path from `T`.
    pub fn long_records(&self, label: &str, with_baseline: bool) -> Vec<(u32, u32, String, ShareVector)> {
        let t_obs = self.periods.len();
        let mut out = Vec::new();
        for g in &self.groups {
            if with_baseline {
                out.extend(g.baseline.iter().enumerate().map(|(i, s)| (g.group, self.period_label(i), "baseline".to_string(), *s)));
            }
            out.extend(g.policy.iter().enumerate().map(|(i, s)| (g.group, self.period_label(t_obs - 1 + i), label.to_string(), *s)));
        }
        out
    }

    /// Long-format CSV: `group,period,scenario,p_A,p_B,p_AB`.
    pub fn write_long_csv<W: Write>(&self, out: W) -> Result<()> {
        write_long_csv(&self.long_records("policy", true), out)
    }
}

pub fn write_long_csv<W: Write>(records: &[(u32, u32, String, ShareVector)], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(["group", "period", "scenario", "p_A", "p_B", "p_AB"])?;
    for (g, t, scenario, s) in records {
        w.write_record([
            g.to_string(),
            t.to_string(),
            scenario.clone(),
            s.p_a.to_string(),
            s.p_b.to_string(),
            s.p_ab.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
