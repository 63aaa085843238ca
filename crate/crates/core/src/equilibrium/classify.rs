//! Complements/substitutes classification of a norm pair.

use serde::{Deserialize, Serialize};

use super::{default_starts, solve_equilibrium, solve_equilibrium_with, CovariateDist, SolverOptions};
use crate::error::{Error, Result};
use crate::kernel::{ProbabilityRule, QuadratureSpec};
use crate::model::{ShareVector, Theta};

/// Zero test applied to `Γ` and `s_AB - s_A - s_B`.
pub const TAU_ZERO: f64 = 1e-9;

/// Dead-band on `∂Q_A/∂δ_B` inside which the sign is reported as zero.
pub const TAU_SIGN: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TheoremBranch {
    Complements,
    Independent,
    Substitutes,
    Indeterminate,
}

impl TheoremBranch {
    pub fn label(self) -> &'static str {
        match self {
            TheoremBranch::Complements => "complements",
            TheoremBranch::Independent => "independent",
            TheoremBranch::Substitutes => "substitutes",
            TheoremBranch::Indeterminate => "indeterminate",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NumericalSign {
    Positive,
    Zero,
    Negative,
}

impl NumericalSign {
    pub fn of(value: f64, tau: f64) -> Self {
        if value > tau {
            NumericalSign::Positive
        } else if value < -tau {
            NumericalSign::Negative
        } else {
            NumericalSign::Zero
        }
    }
}

/// Verdict at one stable equilibrium.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationVerdict {
    pub p_star: ShareVector,
    pub theorem_branch: TheoremBranch,
    pub numerical_sign: NumericalSign,
    pub d_qa_d_delta_b: f64,
    /// Whether the numerical sign is the one the branch predicts. The
    /// indeterminate branch predicts nothing and always agrees.
    pub agree: bool,
}

/// Branch predicted from the signs of `Γ` and `s_AB - s_A - s_B`.
pub fn theorem_branch(theta: &Theta, tau_zero: f64) -> TheoremBranch {
    let sign = |v: f64| {
        if v > tau_zero {
            1
        } else if v < -tau_zero {
            -1
        } else {
            0
        }
    };
    match (sign(theta.gamma), sign(theta.sanction_gap())) {
        (1, 0 | 1) | (0, 1) => TheoremBranch::Complements,
        (0, 0) => TheoremBranch::Independent,
        (-1, 0 | -1) | (0, -1) => TheoremBranch::Substitutes,
        _ => TheoremBranch::Indeterminate,
    }
}

fn agrees(branch: TheoremBranch, sign: NumericalSign) -> bool {
    match branch {
        TheoremBranch::Complements => sign == NumericalSign::Positive,
        TheoremBranch::Independent => sign == NumericalSign::Zero,
        TheoremBranch::Substitutes => sign == NumericalSign::Negative,
        TheoremBranch::Indeterminate => true,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifyOptions {
    pub starts: Vec<ShareVector>,
    pub solver: SolverOptions,
    /// When set, equilibria located with the smoothed quadrature are re-solved
    /// from those points under this rule, and derivatives are taken there.
    pub refine: Option<ProbabilityRule>,
    pub tau_zero: f64,
    pub tau_sign: f64,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        ClassifyOptions {
            starts: default_starts(),
            solver: SolverOptions::default(),
            refine: None,
            tau_zero: TAU_ZERO,
            tau_sign: TAU_SIGN,
        }
    }
}

/// Classifies the norm pair at every stable equilibrium reachable from the
/// configured starts.
pub fn classify(
    theta: &Theta,
    x_dist: &CovariateDist,
    quad: &QuadratureSpec,
    opts: &ClassifyOptions,
) -> Result<Vec<ClassificationVerdict>> {
    let mut set = solve_equilibrium(theta, x_dist, quad, &opts.starts, &opts.solver)?;
    if let Some(rule) = &opts.refine {
        let pts: Vec<ShareVector> = set.equilibria.iter().map(|e| e.p_star).collect();
        if pts.is_empty() {
            return Err(Error::ClassificationUnavailable);
        }
        set = solve_equilibrium_with(theta, x_dist, rule, &pts, &opts.solver)?;
    }
    let branch = theorem_branch(theta, opts.tau_zero);
    let mut verdicts = Vec::new();
    for eq in set.stable() {
        let d = match eq.d_qa_d_delta_b {
            Some(d) => d,
            None => {
                return Err(Error::SingularEquilibrium {
                    det: eq.det_i_minus_jacobian,
                })
            }
        };
        let sign = NumericalSign::of(d, opts.tau_sign);
        verdicts.push(ClassificationVerdict {
            p_star: eq.p_star,
            theorem_branch: branch,
            numerical_sign: sign,
            d_qa_d_delta_b: d,
            agree: agrees(branch, sign),
        });
    }
    if verdicts.is_empty() {
        return Err(Error::ClassificationUnavailable);
    }
    Ok(verdicts)
}
