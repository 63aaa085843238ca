//! Lagged-share table and the cell-aggregated smoothed likelihood.
//!
//! Rows sharing a group, period and covariate vector have identical choice
//! probabilities, so the likelihood is a sum over such cells weighted by the
//! choice counts. With discrete covariates this makes its cost independent of
//! the sample size.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::params::ParamMap;
use crate::dgp::PanelDataset;
use crate::error::{Error, Result};
use crate::kernel::{QuadratureSpec, ShockGrid};
use crate::model::{utility_index, ShareVector, Theta};

/// Cells with fewer observations than this are flagged.
pub const MIN_CELL_SIZE: usize = 15;

/// Defensive floor on probabilities inside the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Empirical shares of one (group, period) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellShares {
    pub group: u32,
    pub period: u32,
    pub n: usize,
    pub shares: ShareVector,
    pub small: bool,
}

/// Estimated shares `q̂_{g,t}` for every populated cell, sorted by
/// (group, period).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LagTable {
    pub min_cell_size: usize,
    pub cells: Vec<CellShares>,
}

impl LagTable {
    pub fn position(&self, group: u32, period: u32) -> Option<usize> {
        self.cells
            .binary_search_by(|c| (c.group, c.period).cmp(&(group, period)))
            .ok()
    }

    pub fn get(&self, group: u32, period: u32) -> Option<&CellShares> {
        self.position(group, period).map(|i| &self.cells[i])
    }

    pub fn small_cells(&self) -> Vec<(u32, u32)> {
        self.cells.iter().filter(|c| c.small).map(|c| (c.group, c.period)).collect()
    }
}

/// Cell shares with the default minimum cell size.
pub fn compute_lagged_shares(data: &PanelDataset) -> Result<LagTable> {
    compute_lagged_shares_with(data, MIN_CELL_SIZE)
}

/// Cell shares of `data`. Every populated cell after a group's first period
/// needs its predecessor; missing predecessors are reported together.
pub fn compute_lagged_shares_with(data: &PanelDataset, min_cell_size: usize) -> Result<LagTable> {
    let mut counts: BTreeMap<(u32, u32), [usize; 4]> = BTreeMap::new();
    for r in &data.rows {
        counts.entry((r.group, r.period)).or_default()[r.choice as usize] += 1;
    }
    let mut missing = Vec::new();
    let mut first: BTreeMap<u32, u32> = BTreeMap::new();
    for &(g, t) in counts.keys() {
        first.entry(g).or_insert(t);
    }
    for &(g, t) in counts.keys() {
        if t > first[&g] && !counts.contains_key(&(g, t - 1)) {
            missing.push((g, t - 1));
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingLag { cells: missing });
    }
    let cells = counts
        .into_iter()
        .map(|((group, period), c)| {
            let n: usize = c.iter().sum();
            let nf = n as f64;
            CellShares {
                group,
                period,
                n,
                shares: ShareVector::raw(c[1] as f64 / nf, c[2] as f64 / nf, c[3] as f64 / nf),
                small: n < min_cell_size,
            }
        })
        .collect();
    Ok(LagTable { min_cell_size, cells })
}

/// Rows with a common (group, period, x) and their choice counts.
#[derive(Clone, Debug, PartialEq)]
pub struct LikelihoodCell {
    pub group: u32,
    pub period: u32,
    /// Index of the lag cell `(group, period - 1)` in the [`LagTable`].
    pub lag_cell: usize,
    pub x: Vec<f64>,
    pub counts: [f64; 4],
}

/// Data in the form the likelihood consumes.
#[derive(Clone, Debug, PartialEq)]
pub struct LikelihoodData {
    pub cells: Vec<LikelihoodCell>,
    pub lags: LagTable,
    /// Rows entering the likelihood (first periods excluded).
    pub n_obs: usize,
    /// All rows, including those that only supply lags.
    pub n_total: usize,
}

impl LikelihoodData {
    pub fn new(data: &PanelDataset) -> Result<Self> {
        Self::with_lags(data, compute_lagged_shares(data)?)
    }

    pub fn with_lags(data: &PanelDataset, lags: LagTable) -> Result<Self> {
        let mut first: BTreeMap<u32, u32> = BTreeMap::new();
        for r in &data.rows {
            let e = first.entry(r.group).or_insert(r.period);
            *e = (*e).min(r.period);
        }
        let mut agg: BTreeMap<(u32, u32, Vec<u64>), [f64; 4]> = BTreeMap::new();
        let mut missing = Vec::new();
        let mut n_obs = 0;
        for r in &data.rows {
            if r.period == first[&r.group] {
                continue;
            }
            if lags.get(r.group, r.period - 1).is_none() {
                missing.push((r.group, r.period - 1));
                continue;
            }
            let key = (r.group, r.period, r.x.iter().map(|v| v.to_bits()).collect());
            agg.entry(key).or_default()[r.choice as usize] += 1.0;
            n_obs += 1;
        }
        if !missing.is_empty() {
            missing.sort_unstable();
            missing.dedup();
            return Err(Error::MissingLag { cells: missing });
        }
        let cells = agg
            .into_iter()
            .map(|((group, period, bits), counts)| LikelihoodCell {
                group,
                period,
                lag_cell: lags.position(group, period - 1).expect("checked above"),
                x: bits.into_iter().map(f64::from_bits).collect(),
                counts,
            })
            .collect();
        Ok(LikelihoodData {
            cells,
            lags,
            n_obs,
            n_total: data.len(),
        })
    }

    pub fn lag(&self, cell: &LikelihoodCell) -> ShareVector {
        self.lags.cells[cell.lag_cell].shares
    }

    /// Bundles never chosen in the likelihood sample.
    pub fn absent_bundles(&self) -> Vec<usize> {
        (0..4)
            .filter(|&v| self.cells.iter().all(|c| c.counts[v] == 0.0))
            .collect()
    }
}

/// Log-probabilities of the four bundles and their gradients with respect to
/// the free coordinates, for one covariate cell.
#[derive(Clone, Debug)]
pub struct CellScores {
    pub log_probs: [f64; 4],
    /// `grad[v][k] = ∂ log p_v / ∂phi_k`.
    pub grad: [Vec<f64>; 4],
}

/// Evaluates one cell at lag `lag`.
pub fn cell_scores(
    map: &ParamMap,
    phi: &[f64],
    theta: &Theta,
    grid: &ShockGrid,
    x: &[f64],
    lag: &ShareVector,
    with_grad: bool,
) -> Result<CellScores> {
    let idx = utility_index(theta, x, lag)?;
    let eval = grid.evaluate(&idx, with_grad)?;
    let mut log_probs = [0.0; 4];
    let mut grad: [Vec<f64>; 4] = Default::default();
    let jac = if with_grad { map.index_jacobian(phi, x, lag) } else { Vec::new() };
    for v in 0..4 {
        let p = eval.probs[v];
        log_probs[v] = p.max(PROB_FLOOR).ln();
        if with_grad {
            grad[v] = if p > PROB_FLOOR {
                jac.iter()
                    .map(|j| (0..4).map(|c| eval.d_probs[v][c] * j[c]).sum::<f64>() / p)
                    .collect()
            } else {
                vec![0.0; map.len()]
            };
        }
    }
    Ok(CellScores { log_probs, grad })
}

/// Objective evaluator over a prepared data set.
pub struct Likelihood<'a> {
    pub data: &'a LikelihoodData,
    pub map: &'a ParamMap,
    pub quad: QuadratureSpec,
}

impl<'a> Likelihood<'a> {
    pub fn new(data: &'a LikelihoodData, map: &'a ParamMap, quad: QuadratureSpec) -> Self {
        Likelihood { data, map, quad }
    }

    fn grid(&self, theta: &Theta, with_grad: bool) -> Result<ShockGrid> {
        if with_grad {
            ShockGrid::with_rho_derivative(self.quad, theta.rho)
        } else {
            ShockGrid::new(self.quad, theta.rho)
        }
    }

    /// Scores of every covariate cell, in cell order.
    pub fn cell_scores(&self, phi: &[f64], with_grad: bool) -> Result<Vec<CellScores>> {
        let theta = self.map.theta(phi);
        let grid = self.grid(&theta, with_grad)?;
        self.data
            .cells
            .par_iter()
            .map(|c| cell_scores(self.map, phi, &theta, &grid, &c.x, &self.data.lag(c), with_grad))
            .collect()
    }

    /// Total log-likelihood.
    pub fn loglik(&self, phi: &[f64]) -> Result<f64> {
        let scores = self.cell_scores(phi, false)?;
        Ok(self.data.cells.iter().zip(&scores).map(|(c, s)| dot4(&c.counts, &s.log_probs)).sum())
    }

    /// Total log-likelihood and its analytic gradient.
    pub fn loglik_grad(&self, phi: &[f64]) -> Result<(f64, Vec<f64>)> {
        let scores = self.cell_scores(phi, true)?;
        let mut ll = 0.0;
        let mut g = vec![0.0; self.map.len()];
        for (c, s) in self.data.cells.iter().zip(&scores) {
            ll += dot4(&c.counts, &s.log_probs);
            for v in 0..4 {
                if c.counts[v] > 0.0 {
                    for (gk, sk) in g.iter_mut().zip(&s.grad[v]) {
                        *gk += c.counts[v] * sk;
                    }
                }
            }
        }
        Ok((ll, g))
    }

    /// Central-difference gradient with step `1e-6 max(1, |phi_k|)`.
    pub fn loglik_grad_fd(&self, phi: &[f64]) -> Result<(f64, Vec<f64>)> {
        let ll = self.loglik(phi)?;
        let mut g = Vec::with_capacity(phi.len());
        for k in 0..phi.len() {
            let h = 1e-6 * phi[k].abs().max(1.0);
            let (mut up, mut dn) = (phi.to_vec(), phi.to_vec());
            up[k] += h;
            dn[k] -= h;
            g.push((self.loglik(&up)? - self.loglik(&dn)?) / (2.0 * h));
        }
        Ok((ll, g))
    }
}

fn dot4(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
