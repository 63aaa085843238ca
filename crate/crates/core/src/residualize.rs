//! Descriptive residualized period shares.
//!
//! Regresses a bundle indicator on an intercept, fixed-effect dummies,
//! covariates and a post-cutoff dummy by OLS. The residualized share of
//! period `t` is the mean residual of its rows plus `1{t >= cutoff} * tau`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dgp::PanelDataset;
use crate::error::{Error, Result};
use crate::model::Bundle;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    AOnly,
    BOnly,
    #[serde(rename = "ab")]
    AB,
    Any,
}

impl Outcome {
    pub fn indicator(self, b: Bundle) -> f64 {
        let hit = match self {
            Outcome::AOnly => b == Bundle::A,
            Outcome::BOnly => b == Bundle::B,
            Outcome::AB => b == Bundle::AB,
            Outcome::Any => b != Bundle::Empty,
        };
        if hit {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualizeSpec {
    pub outcome: Outcome,
    /// Categorical columns; `group` refers to the group identifier.
    #[serde(default)]
    pub fe_columns: Vec<String>,
    #[serde(default)]
    pub covariate_columns: Vec<String>,
    pub cutoff_period: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Residualized {
    pub periods: Vec<u32>,
    pub n: Vec<usize>,
    pub raw_share: Vec<f64>,
    pub residualized: Vec<f64>,
    pub tau: f64,
    /// Heteroskedasticity-robust (HC1) standard error of `tau`.
    pub tau_se: f64,
    pub regressors: Vec<String>,
    pub coefficients: Vec<f64>,
    pub residuals: Vec<f64>,
}

struct Design {
    names: Vec<String>,
    x: DMatrix<f64>,
}

fn column(data: &PanelDataset, name: &str) -> Result<Vec<f64>> {
    if name == "group" {
        return Ok(data.rows.iter().map(|r| r.group as f64).collect());
    }
    let j = data
        .column_index(name)
        .ok_or_else(|| Error::invalid(format!("column '{name}' not in the data")))?;
    Ok(data.rows.iter().map(|r| r.x[j]).collect())
}

fn design(data: &PanelDataset, spec: &ResidualizeSpec) -> Result<Design> {
    let n = data.len();
    let mut names = vec!["intercept".to_string()];
    let mut cols = vec![vec![1.0; n]];
    for fe in &spec.fe_columns {
        let v = column(data, fe)?;
        let mut levels = v.clone();
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        for &l in levels.iter().skip(1) {
            names.push(format!("{fe}={l}"));
            cols.push(v.iter().map(|&x| if x == l { 1.0 } else { 0.0 }).collect());
        }
    }
    for c in &spec.covariate_columns {
        names.push(c.clone());
        cols.push(column(data, c)?);
    }
    names.push("post".to_string());
    cols.push(data.rows.iter().map(|r| if r.period >= spec.cutoff_period { 1.0 } else { 0.0 }).collect());
    let x = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
    Ok(Design { names, x })
}

/// Finds columns that are linear combinations of earlier ones by
/// Gram-Schmidt; reports each such column with the columns it loads on.
fn collinear_columns(d: &Design) -> Vec<String> {
    let k = d.x.ncols();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut owners: Vec<usize> = Vec::new();
    let mut out = Vec::new();
    for j in 0..k {
        let orig = d.x.column(j).into_owned();
        let scale = orig.norm();
        let mut v = orig.clone();
        let mut loads = Vec::new();
        for (q, &o) in basis.iter().zip(&owners) {
            let c = q.dot(&v);
            v -= q * c;
            if c.abs() > 1e-8 * scale.max(1.0) {
                loads.push(o);
            }
        }
        let r = v.norm();
        if scale == 0.0 || r <= 1e-9 * scale {
            let mut group: Vec<String> = loads.iter().map(|&o| d.names[o].clone()).collect();
            group.push(d.names[j].clone());
            out.push(group.join(" ~ "));
        } else {
            basis.push(v / r);
            owners.push(j);
        }
    }
    out
}

pub fn residualize_cohort_shares(data: &PanelDataset, spec: &ResidualizeSpec) -> Result<Residualized> {
    let d = design(data, spec)?;
    let (n, k) = d.x.shape();
    if n <= k {
        return Err(Error::invalid(format!("{n} rows for {k} regressors")));
    }
    let bad = collinear_columns(&d);
    if !bad.is_empty() {
        return Err(Error::RankDeficient { columns: bad });
    }
    let y = DVector::from_iterator(n, data.rows.iter().map(|r| spec.outcome.indicator(r.choice)));
    let qr = d.x.clone().qr();
    let r = qr.r();
    let mut qty = y.clone();
    qr.q_tr_mul(&mut qty);
    let beta = r
        .solve_upper_triangular(&qty.rows(0, k).into_owned())
        .ok_or_else(|| Error::RankDeficient { columns: d.names.clone() })?;
    let resid = &y - &d.x * &beta;

    // (X'X)^{-1} = R^{-1} R^{-T}
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| Error::RankDeficient { columns: d.names.clone() })?;
    let bread = &r_inv * r_inv.transpose();
    let mut meat = DMatrix::zeros(k, k);
    for i in 0..n {
        let xi = d.x.row(i);
        meat += xi.transpose() * xi * resid[i].powi(2);
    }
    let vcov = &bread * meat * &bread * (n as f64 / (n - k) as f64);
    let tau = beta[k - 1];
    let tau_se = vcov[(k - 1, k - 1)].max(0.0).sqrt();

    let periods = data.periods();
    let mut count = vec![0usize; periods.len()];
    let mut sum_e = vec![0.0; periods.len()];
    let mut sum_y = vec![0.0; periods.len()];
    for (i, row) in data.rows.iter().enumerate() {
        let t = periods.binary_search(&row.period).expect("period listed");
        count[t] += 1;
        sum_e[t] += resid[i];
        sum_y[t] += y[i];
    }
    let residualized = periods
        .iter()
        .enumerate()
        .map(|(t, &p)| sum_e[t] / count[t] as f64 + if p >= spec.cutoff_period { tau } else { 0.0 })
        .collect();
    let raw_share = sum_y.iter().zip(&count).map(|(s, &c)| s / c as f64).collect();
    Ok(Residualized {
        periods,
        n: count,
        raw_share,
        residualized,
        tau,
        tau_se,
        regressors: d.names,
        coefficients: beta.iter().copied().collect(),
        residuals: resid.iter().copied().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::PanelRow;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn synthetic(n: usize, seed: u64) -> PanelDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..n)
            .map(|i| {
                let period = rng.random_range(1..=8u32);
                let region = rng.random_range(0..4u32) as f64;
                let edu: f64 = rng.random_range(0.0..12.0);
                let urban = if rng.random_bool(0.4) { 1.0 } else { 0.0 };
                let u: f64 = rng.random();
                let choice = Bundle::from_code((u * 4.0 + 0.1 * edu - 0.3 * urban).clamp(0.0, 3.0) as u8).unwrap();
                PanelRow {
                    id: i as u64,
                    period,
                    group: rng.random_range(0..3),
                    choice,
                    x: vec![1.0, region, edu, urban],
                }
            })
            .collect();
        PanelDataset::new(vec!["const".into(), "region".into(), "edu".into(), "urban".into()], rows).unwrap()
    }

    fn spec(outcome: Outcome) -> ResidualizeSpec {
        ResidualizeSpec {
            outcome,
            fe_columns: vec!["region".into(), "group".into()],
            covariate_columns: vec!["edu".into(), "urban".into()],
            cutoff_period: 5,
        }
    }

    #[test]
    fn intercept_and_post_only_is_the_demeaned_share() {
        let data = synthetic(600, 1);
        let s = ResidualizeSpec {
            outcome: Outcome::Any,
            fe_columns: vec![],
            covariate_columns: vec![],
            cutoff_period: 5,
        };
        let r = residualize_cohort_shares(&data, &s).unwrap();
        let pre: Vec<f64> = data
            .rows
            .iter()
            .filter(|r| r.period < 5)
            .map(|r| Outcome::Any.indicator(r.choice))
            .collect();
        let pre_mean = pre.iter().sum::<f64>() / pre.len() as f64;
        for t in 0..r.periods.len() {
            assert!((r.residualized[t] - (r.raw_share[t] - pre_mean)).abs() < 1e-12);
        }
    }

    #[test]
    fn residuals_are_orthogonal_to_regressors() {
        let data = synthetic(1000, 2);
        for outcome in [Outcome::AOnly, Outcome::BOnly, Outcome::AB, Outcome::Any] {
            let s = spec(outcome);
            let r = residualize_cohort_shares(&data, &s).unwrap();
            let d = design(&data, &s).unwrap();
            let e = DVector::from_vec(r.residuals.clone());
            let g = d.x.transpose() * e;
            assert!(g.amax() < 1e-8, "{outcome:?}: {}", g.amax());
        }
    }

    /// Normal equations solved by Gauss-Jordan elimination with partial pivoting.
    fn textbook_ols(x: &[Vec<f64>], y: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let k = x[0].len();
        let mut a = vec![vec![0.0; 2 * k + 1]; k];
        for (row, &yi) in x.iter().zip(y) {
            for i in 0..k {
                for j in 0..k {
                    a[i][j] += row[i] * row[j];
                }
                a[i][2 * k] += row[i] * yi;
            }
        }
        for i in 0..k {
            a[i][k + i] = 1.0;
        }
        for c in 0..k {
            let p = (c..k).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
            a.swap(c, p);
            let piv = a[c][c];
            a[c].iter_mut().for_each(|v| *v /= piv);
            for r in 0..k {
                if r != c {
                    let f = a[r][c];
                    let pivot_row = a[c].clone();
                    a[r].iter_mut().zip(&pivot_row).for_each(|(v, p)| *v -= f * p);
                }
            }
        }
        let beta = a.iter().map(|r| r[2 * k]).collect();
        let inv = a.iter().map(|r| r[k..2 * k].to_vec()).collect();
        (beta, inv)
    }

    #[test]
    fn matches_textbook_ols() {
        let data = synthetic(1000, 3);
        let s = spec(Outcome::AB);
        let r = residualize_cohort_shares(&data, &s).unwrap();
        let d = design(&data, &s).unwrap();
        let (n, k) = d.x.shape();
        let x: Vec<Vec<f64>> = (0..n).map(|i| (0..k).map(|j| d.x[(i, j)]).collect()).collect();
        let y: Vec<f64> = data.rows.iter().map(|r| Outcome::AB.indicator(r.choice)).collect();
        let (beta, inv) = textbook_ols(&x, &y);
        for (a, b) in r.coefficients.iter().zip(&beta) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
        let e: Vec<f64> = x.iter().zip(&y).map(|(row, yi)| yi - row.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>()).collect();
        let last = k - 1;
        let mut v = 0.0;
        for (row, ei) in x.iter().zip(&e) {
            let w: f64 = (0..k).map(|j| inv[last][j] * row[j]).sum();
            v += w * w * ei * ei;
        }
        let se = (v * n as f64 / (n - k) as f64).sqrt();
        assert!((r.tau_se - se).abs() < 1e-10, "{} vs {se}", r.tau_se);
        let periods = data.periods();
        for (t, &p) in periods.iter().enumerate() {
            let idx: Vec<usize> = (0..n).filter(|&i| data.rows[i].period == p).collect();
            let m = idx.iter().map(|&i| e[i]).sum::<f64>() / idx.len() as f64;
            let expect = m + if p >= 5 { beta[last] } else { 0.0 };
            assert!((r.residualized[t] - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn collinear_design_names_columns() {
        let data = synthetic(300, 4);
        let s = ResidualizeSpec {
            outcome: Outcome::Any,
            fe_columns: vec![],
            covariate_columns: vec!["const".into(), "edu".into()],
            cutoff_period: 5,
        };
        match residualize_cohort_shares(&data, &s) {
            Err(Error::RankDeficient { columns }) => assert_eq!(columns, vec!["intercept ~ const".to_string()]),
            other => panic!("{other:?}"),
        }
        let s = ResidualizeSpec {
            covariate_columns: vec!["nope".into()],
            ..s
        };
        assert!(matches!(residualize_cohort_shares(&data, &s), Err(Error::InvalidInput(_))));
    }
}
