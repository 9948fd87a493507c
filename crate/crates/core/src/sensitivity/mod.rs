//! Sensitivity analysis for the counterfactual failure probability
//! `ψ_t(s; γ) = P(Y(t) ≤ s)` under a log-odds-ratio bias parameter `γ`.

pub mod estimate;
pub mod induced;
pub mod influence;
pub mod pava;
pub mod tilt;

use thiserror::Error;

use crate::cox::CoxError;
use crate::data::{Arm, DataError};
use crate::propensity::PropensityError;
use crate::stats::Z_975;

pub use estimate::{analyze, estimate_psi, Analysis, CensoringSpec, CrossFit, EstimatorConfig, PsiEstimate, TreatmentSpec};
pub use induced::{CellInfluence, DifferenceCell, InducedSurvival};
pub use pava::pava_monotonize;
pub use tilt::{bayes_odds_ratio, tilt_cdf, JointTable};

#[derive(Debug, Error)]
pub enum SensitivityError {
    #[error("fold {fold} has no failures in arm {arm} of its training set")]
    FoldWithoutEvents { fold: usize, arm: Arm },
    #[error("no usable weight mass for arm {arm} at s = {s}")]
    AllWeightsTruncated { arm: Arm, s: f64 },
    #[error("arm frequency {0} leaves no subjects in the other arm")]
    DegenerateArmFrequency(f64),
    #[error("joint probability table has an empty cell")]
    ZeroCell,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Cox(#[from] CoxError),
    #[error(transparent)]
    Propensity(#[from] PropensityError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// 95% interval built on the logit scale and mapped back.
/// Returns `(lo, hi, degenerate)`; the interval is `[ψ, ψ]` when `ψ` sits
/// on a boundary or `σ = 0`.
pub fn logit_wald(psi: f64, sigma: f64) -> (f64, f64, bool) {
    if psi <= 0.0 || psi >= 1.0 || sigma <= 0.0 || !sigma.is_finite() {
        return (psi, psi, true);
    }
    let l = crate::stats::logit(psi);
    let se = sigma / (psi * (1.0 - psi));
    (crate::stats::sigmoid(l - Z_975 * se), crate::stats::sigmoid(l + Z_975 * se), false)
}
