//! Sandwich variance for the smoothed MLE with estimated lagged shares.
//!
//! The lag shares are themselves sample means, so the score is stacked with
//! the cell moments `m_it = y_it - q_c` and the moment correction
//! `-A_θq A_qq^{-1} m_it` is added to each row's score before forming the
//! meat of the sandwich.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::dgp::PanelDataset;
use crate::error::{Error, Result};
use crate::estimation::{cell_scores, FitConfig, FitResult, LagTable, Likelihood, LikelihoodData, ParamKind, ParamMap};
use crate::kernel::ShockGrid;
use crate::model::ShareVector;

/// Condition number of `A_θθ` above which a warning is issued.
pub const CONDITION_WARN: f64 = 1e8;

/// Condition number treated as numerically singular.
pub const CONDITION_SINGULAR: f64 = 1e14;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceOptions {
    /// Relative step for differencing the mean score in the parameters.
    pub theta_step: f64,
    /// Step for perturbing a lag cell's shares.
    pub q_step: f64,
    /// Include the generated-regressor correction.
    pub correct_lags: bool,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        InferenceOptions {
            theta_step: 1e-5,
            q_step: 1e-5,
            correct_lags: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaldTest {
    pub statistic: f64,
    pub p_value: f64,
}

/// t-statistics of coefficients on columns excluded from the other norm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelevanceCheck {
    pub t_stats: Vec<(String, f64)>,
    pub weak: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub param_names: Vec<String>,
    pub estimates: Vec<f64>,
    pub se: Vec<f64>,
    pub vcov: Vec<Vec<f64>>,
    pub se_uncorrected: Vec<f64>,
    pub vcov_uncorrected: Vec<Vec<f64>>,
    /// H0: s_AB = s_A + s_B. Absent when additivity is imposed in the fit.
    pub wald_additivity: Option<WaldTest>,
    pub condition_number: f64,
    /// Frobenius norm of the correction's contribution relative to `vcov`.
    pub correction_share: f64,
    pub clipped_eigenvalues: usize,
    pub relevance: Option<RelevanceCheck>,
    pub warnings: Vec<String>,
}

impl InferenceResult {
    pub fn se_of(&self, name: &str) -> Option<f64> {
        self.param_names.iter().position(|n| n == name).map(|i| self.se[i])
    }
}

/// Diagonal value of each `A_qq` block, `-(n_c / N)`, in lag-table order.
pub fn a_qq_blocks(lags: &LagTable, n_total: usize) -> Vec<f64> {
    lags.cells.iter().map(|c| -(c.n as f64) / n_total as f64).collect()
}

/// `m_it = y_it - q̂_c` for every row of `data`, in row order.
pub fn moment_residuals(data: &PanelDataset, lags: &LagTable) -> Result<Vec<[f64; 3]>> {
    data.rows
        .iter()
        .map(|r| {
            let cell = lags
                .get(r.group, r.period)
                .ok_or_else(|| Error::invalid(format!("no lag-table cell for group {} period {}", r.group, r.period)))?;
            let y = r.choice.indicator();
            let q = cell.shares.to_array();
            Ok([y[0] - q[0], y[1] - q[1], y[2] - q[2]])
        })
        .collect()
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Sum of `counts[v] * grad[v]` over the given cells evaluated with `lag`.
fn score_sum(
    lik: &Likelihood,
    phi: &[f64],
    grid: &ShockGrid,
    cells: &[usize],
    lag: &ShareVector,
) -> Result<DVector<f64>> {
    let theta = lik.map.theta(phi);
    let mut acc = DVector::zeros(phi.len());
    for &ci in cells {
        let c = &lik.data.cells[ci];
        let s = cell_scores(lik.map, phi, &theta, grid, &c.x, lag, true)?;
        for v in 0..4 {
            if c.counts[v] > 0.0 {
                acc += DVector::from_column_slice(&s.grad[v]) * c.counts[v];
            }
        }
    }
    Ok(acc)
}

/// `A_θθ`: central differences of the mean score, symmetrized.
fn a_theta_theta(lik: &Likelihood, phi: &[f64], n_total: f64, step: f64) -> Result<DMatrix<f64>> {
    let k = phi.len();
    let cols: Vec<DVector<f64>> = (0..k)
        .into_par_iter()
        .map(|j| {
            let h = step * phi[j].abs().max(1.0);
            let (mut up, mut dn) = (phi.to_vec(), phi.to_vec());
            up[j] += h;
            dn[j] -= h;
            let gu = lik.loglik_grad(&up)?.1;
            let gd = lik.loglik_grad(&dn)?.1;
            Ok(DVector::from_iterator(k, gu.iter().zip(&gd).map(|(a, b)| (a - b) / (2.0 * h * n_total))))
        })
        .collect::<Result<_>>()?;
    let a = DMatrix::from_columns(&cols);
    Ok((&a + a.transpose()) * 0.5)
}

/// `A_θq` columns for each lag cell and share component, keyed by lag cell.
fn a_theta_q(
    lik: &Likelihood,
    phi: &[f64],
    n_total: f64,
    step: f64,
    warnings: &mut Vec<String>,
) -> Result<BTreeMap<usize, [DVector<f64>; 3]>> {
    let theta = lik.map.theta(phi);
    let grid = ShockGrid::with_rho_derivative(lik.quad, theta.rho)?;
    let mut users: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (ci, c) in lik.data.cells.iter().enumerate() {
        users.entry(c.lag_cell).or_default().push(ci);
    }
    let jobs: Vec<(usize, Vec<usize>)> = users.into_iter().collect();
    let cols = jobs
        .par_iter()
        .map(|(lc, cells)| {
            let q = lik.data.lags.cells[*lc].shares;
            let mut out: [DVector<f64>; 3] = std::array::from_fn(|_| DVector::zeros(phi.len()));
            let mut degenerate = false;
            for (r, col) in out.iter_mut().enumerate() {
                let mut base = q.to_array();
                let slack = 1.0 - base.iter().sum::<f64>();
                let hi = base[r] + step.min(slack.max(0.0));
                let lo = (base[r] - step).max(0.0);
                if !(hi > lo) {
                    degenerate = true;
                    continue;
                }
                base[r] = hi;
                let su = score_sum(lik, phi, &grid, cells, &ShareVector::from_array(base))?;
                base[r] = lo;
                let sd = score_sum(lik, phi, &grid, cells, &ShareVector::from_array(base))?;
                *col = (su - sd) / ((hi - lo) * n_total);
            }
            Ok((*lc, out, degenerate))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut map = BTreeMap::new();
    for (lc, out, degenerate) in cols {
        if degenerate {
            let c = &lik.data.lags.cells[lc];
            warnings.push(format!(
                "lag cell (group {}, period {}) cannot be perturbed; its column is zero",
                c.group, c.period
            ));
        }
        map.insert(lc, out);
    }
    Ok(map)
}

fn condition_number(a: &DMatrix<f64>) -> f64 {
    let sv = a.singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

/// Clips negative eigenvalues to zero. Returns the number clipped.
fn clip_psd(v: &mut DMatrix<f64>) -> usize {
    let sym = (&*v + v.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    let clipped = eig.eigenvalues.iter().filter(|&&l| l < 0.0).count();
    if clipped == 0 {
        *v = sym;
        return 0;
    }
    for &l in eig.eigenvalues.iter().filter(|&&l| l < -1e-10) {
        log::warn!("clipping variance eigenvalue {l:e}");
    }
    let lambda = eig.eigenvalues.map(|l| l.max(0.0));
    *v = &eig.eigenvectors * DMatrix::from_diagonal(&lambda) * eig.eigenvectors.transpose();
    clipped
}

fn wald(map: &ParamMap, estimates: &[f64], vcov: &DMatrix<f64>) -> Option<WaldTest> {
    let (sab, sa, sb) = (
        map.index_of(ParamKind::SAB)?,
        map.index_of(ParamKind::SA)?,
        map.index_of(ParamKind::SB)?,
    );
    let mut c = DVector::zeros(map.len());
    c[sab] = 1.0;
    c[sa] = -1.0;
    c[sb] = -1.0;
    let gap = estimates[sab] - estimates[sa] - estimates[sb];
    let var = (c.transpose() * vcov * &c)[(0, 0)];
    let statistic = if var > 0.0 { gap * gap / var } else { f64::INFINITY };
    let chi = ChiSquared::new(1.0).expect("one degree of freedom");
    Some(WaldTest {
        statistic,
        p_value: if statistic.is_finite() { chi.sf(statistic) } else { 0.0 },
    })
}

fn relevance(map: &ParamMap, cfg: &FitConfig, estimates: &[f64], se: &[f64]) -> Option<RelevanceCheck> {
    let ex = &cfg.exclusion;
    let mut t_stats = Vec::new();
    for &j in ex.idx_a.difference(&ex.idx_b) {
        if let Some(k) = map.index_of(ParamKind::BetaB(j)) {
            t_stats.push((map.names[k].clone(), estimates[k] / se[k]));
        }
    }
    for &j in ex.idx_b.difference(&ex.idx_a) {
        if let Some(k) = map.index_of(ParamKind::BetaA(j)) {
            t_stats.push((map.names[k].clone(), estimates[k] / se[k]));
        }
    }
    if t_stats.is_empty() {
        return None;
    }
    let weak = t_stats.iter().all(|(_, t)| !(t.abs() >= 1.96));
    Some(RelevanceCheck { t_stats, weak })
}

/// Sandwich variance of the fitted free parameters on the natural scale.
pub fn sandwich(data: &PanelDataset, fit: &FitResult, cfg: &FitConfig, opts: &InferenceOptions) -> Result<InferenceResult> {
    if !fit.converged {
        return Err(Error::invalid("inference needs a converged fit"));
    }
    let lik_data = LikelihoodData::with_lags(data, fit.lagged_share_table.clone())?;
    let map = cfg.param_map(&data.covariate_names)?;
    if map.names != fit.param_names {
        return Err(Error::invalid("fit does not match the configuration's parameter layout"));
    }
    let lik = Likelihood::new(&lik_data, &map, cfg.quad);
    let phi = &fit.phi_hat;
    let k = phi.len();
    let n_total = lik_data.n_total as f64;
    let mut warnings = Vec::new();

    let a = a_theta_theta(&lik, phi, n_total, opts.theta_step)?;
    let condition = condition_number(&a);
    if !(condition < CONDITION_SINGULAR) {
        return Err(Error::NonInvertibleInformation { condition });
    }
    if condition > CONDITION_WARN {
        warnings.push(format!("information matrix condition number {condition:.3e} exceeds {CONDITION_WARN:e}"));
    }
    let a_inv = a
        .clone()
        .try_inverse()
        .ok_or(Error::NonInvertibleInformation { condition })?;

    let a_tq = if opts.correct_lags {
        a_theta_q(&lik, phi, n_total, opts.q_step, &mut warnings)?
    } else {
        BTreeMap::new()
    };

    // Row classes sharing score and moment: (group, period, x, choice).
    let scores = lik.cell_scores(phi, true)?;
    let mut lik_index: BTreeMap<(u32, u32, Vec<u64>), usize> = BTreeMap::new();
    for (ci, c) in lik_data.cells.iter().enumerate() {
        lik_index.insert((c.group, c.period, c.x.iter().map(|v| v.to_bits()).collect()), ci);
    }
    let mut classes: BTreeMap<(u32, u32, Vec<u64>, usize), f64> = BTreeMap::new();
    for r in &data.rows {
        let key = (r.group, r.period, r.x.iter().map(|v| v.to_bits()).collect(), r.choice as usize);
        *classes.entry(key).or_default() += 1.0;
    }
    let mut meat = DMatrix::zeros(k, k);
    let mut meat_unc = DMatrix::zeros(k, k);
    for ((g, t, xb, v), count) in classes {
        let s = match lik_index.get(&(g, t, xb)) {
            Some(&ci) => DVector::from_column_slice(&scores[ci].grad[v]),
            None => DVector::zeros(k),
        };
        meat_unc += &s * s.transpose() * count;
        let mut adj = s;
        let lc = lik_data.lags.position(g, t).expect("every row's cell is in the lag table");
        if let Some(cols) = a_tq.get(&lc) {
            let cell = &lik_data.lags.cells[lc];
            let y = crate::model::Bundle::from_code(v as u8).expect("choice code").indicator();
            let q = cell.shares.to_array();
            let scale = n_total / cell.n as f64;
            for r in 0..3 {
                adj += &cols[r] * (scale * (y[r] - q[r]));
            }
        }
        meat += &adj * adj.transpose() * count;
    }
    meat /= n_total;
    meat_unc /= n_total;

    let d = DMatrix::from_diagonal(&DVector::from_vec(map.natural_jacobian(phi)));
    let natural = |b: &DMatrix<f64>| {
        let v = &a_inv * b * a_inv.transpose() / n_total;
        &d * v * &d
    };
    let mut vcov = natural(&meat);
    let mut vcov_unc = natural(&meat_unc);
    let correction_share = (&vcov - &vcov_unc).norm() / vcov.norm().max(f64::MIN_POSITIVE);
    let clipped = clip_psd(&mut vcov) + clip_psd(&mut vcov_unc);
    if clipped > 0 {
        warnings.push(format!("{clipped} negative variance eigenvalues clipped to zero"));
    }

    let estimates = map.natural(phi);
    let se: Vec<f64> = (0..k).map(|i| vcov[(i, i)].max(0.0).sqrt()).collect();
    let se_unc: Vec<f64> = (0..k).map(|i| vcov_unc[(i, i)].max(0.0).sqrt()).collect();
    let wald_additivity = wald(&map, &estimates, &vcov);
    let relevance = relevance(&map, cfg, &estimates, &se);
    if let Some(r) = &relevance {
        if r.weak {
            warnings.push("excluded covariates are jointly weak: every |t| < 1.96".into());
        }
    }
    let small = lik_data.lags.small_cells();
    if !small.is_empty() {
        warnings.push(format!("{} small lag cells; lag-share noise may be understated", small.len()));
    }

    Ok(InferenceResult {
        param_names: map.names.clone(),
        estimates,
        se,
        vcov: to_rows(&vcov),
        se_uncorrected: se_unc,
        vcov_uncorrected: to_rows(&vcov_unc),
        wald_additivity,
        condition_number: condition,
        correction_share,
        clipped_eigenvalues: clipped,
        relevance,
        warnings,
    })
}
