//! Box-constrained quasi-Newton minimization.
//!
//! Projected BFGS: the inverse-Hessian approximation acts on the coordinates
//! not held at a bound, and trial points are projected back onto the box
//! before the Armijo test.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerOptions {
    pub max_iter: usize,
    /// Convergence when the projected gradient's sup-norm falls below this.
    pub gradient_tol: f64,
    /// Stall detection on the step length, relative to `1 + |x|`.
    pub step_tol: f64,
    /// A stalled line search still counts as converged when the projected
    /// gradient is below this. Objectives built on a hard max over grid nodes
    /// are only piecewise smooth, which puts a floor under the reachable gradient.
    pub stall_gradient_tol: f64,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        OptimizerOptions {
            max_iter: 500,
            gradient_tol: 1e-6,
            step_tol: 1e-12,
            stall_gradient_tol: 1e-5,
        }
    }
}

impl OptimizerOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.gradient_tol > 0.0) || !(self.step_tol >= 0.0) || self.max_iter == 0 {
            return Err(Error::invalid("optimizer needs gradient_tol > 0, step_tol >= 0, max_iter >= 1"));
        }
        if !(self.stall_gradient_tol >= self.gradient_tol) {
            return Err(Error::invalid("stall_gradient_tol must be at least gradient_tol"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub projected_gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, &l), &u) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(l, u);
    }
}

/// Gradient with components that would push through an active bound removed.
pub fn projected_gradient(x: &[f64], g: &[f64], lower: &[f64], upper: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            if (x[i] <= lower[i] && g[i] > 0.0) || (x[i] >= upper[i] && g[i] < 0.0) {
                0.0
            } else {
                g[i]
            }
        })
        .collect()
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `f` over the box `[lower, upper]`. `f` returns the value and the
/// gradient; evaluation errors during the line search count as `+inf`.
pub fn minimize_box<F>(f: F, x0: &[f64], lower: &[f64], upper: &[f64], opts: &OptimizerOptions) -> Result<Minimum>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    opts.validate()?;
    let n = x0.len();
    if lower.len() != n || upper.len() != n {
        return Err(Error::DimensionMismatch {
            what: "bounds",
            expected: n,
            got: lower.len().min(upper.len()),
        });
    }
    if lower.iter().zip(upper).any(|(l, u)| !(l <= u)) {
        return Err(Error::invalid("lower bound exceeds upper bound"));
    }
    let mut x = x0.to_vec();
    project(&mut x, lower, upper);
    let (mut fx, mut g) = f(&x)?;
    if !fx.is_finite() {
        return Err(Error::NumericOverflow {
            utility: "objective at start",
            value: fx,
        });
    }
    let identity = |h: &mut Vec<f64>, scale: f64| {
        h.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            h[i * n + i] = scale;
        }
    };
    let mut h = vec![0.0; n * n];
    identity(&mut h, 1.0);
    let mut fresh = true;
    let mut iterations = 0;

    loop {
        let pg = projected_gradient(&x, &g, lower, upper);
        let pg_norm = sup(&pg);
        if pg_norm <= opts.gradient_tol {
            return Ok(Minimum {
                x,
                value: fx,
                gradient: g,
                projected_gradient_norm: pg_norm,
                iterations,
                converged: true,
            });
        }
        if iterations >= opts.max_iter {
            return Ok(Minimum {
                x,
                value: fx,
                gradient: g,
                projected_gradient_norm: pg_norm,
                iterations,
                converged: false,
            });
        }
        iterations += 1;

        let free: Vec<bool> = pg.iter().zip(&g).map(|(p, g)| *p != 0.0 || *g == 0.0).collect();
        let mut d = vec![0.0; n];
        for i in (0..n).filter(|&i| free[i]) {
            d[i] = -(0..n).filter(|&j| free[j]).map(|j| h[i * n + j] * g[j]).sum::<f64>();
        }
        if !(dot(&d, &g) < 0.0) {
            identity(&mut h, 1.0);
            fresh = true;
            d = pg.iter().map(|v| -v).collect();
        }
        if fresh {
            // Keep the first trial step modest when no curvature is known.
            let scale = 1.0 / sup(&d).max(1.0);
            d.iter_mut().for_each(|v| *v *= scale);
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut xn: Vec<f64> = x.iter().zip(&d).map(|(x, d)| x + alpha * d).collect();
            project(&mut xn, lower, upper);
            let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
            if sup(&s) == 0.0 {
                break;
            }
            if let Ok((fnew, gnew)) = f(&xn) {
                if fnew.is_finite() && fnew <= fx + 1e-4 * dot(&g, &s) {
                    accepted = Some((xn, s, fnew, gnew));
                    break;
                }
            }
            alpha *= 0.5;
        }

        let Some((xn, s, fnew, gnew)) = accepted else {
            if !fresh {
                identity(&mut h, 1.0);
                fresh = true;
                continue;
            }
            return Ok(Minimum {
                x,
                value: fx,
                gradient: g,
                projected_gradient_norm: pg_norm,
                iterations,
                converged: pg_norm <= opts.stall_gradient_tol,
            });
        };

        let y: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let yy = dot(&y, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * yy.sqrt() {
            if fresh {
                identity(&mut h, sy / yy);
                fresh = false;
            }
            // H <- (I - r s y') H (I - r y s') + r s s'
            let r = 1.0 / sy;
            let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i * n + j] * y[j]).sum()).collect();
            let yhy = dot(&y, &hy);
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] += -r * (s[i] * hy[j] + hy[i] * s[j]) + (r * r * yhy + r) * s[i] * s[j];
                }
            }
        }

        let small_step = sup(&s) <= opts.step_tol * (1.0 + sup(&x));
        let flat = (fx - fnew).abs() <= 1e-15 * (1.0 + fx.abs());
        x = xn;
        fx = fnew;
        g = gnew;
        if small_step && flat {
            let pg = projected_gradient(&x, &g, lower, upper);
            let pg_norm = sup(&pg);
            return Ok(Minimum {
                x,
                value: fx,
                gradient: g,
                projected_gradient_norm: pg_norm,
                iterations,
                converged: pg_norm <= opts.stall_gradient_tol,
            });
        }
    }
}
