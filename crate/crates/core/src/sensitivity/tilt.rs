//! Exponential tilting of conditional CDFs and the plug-in functional.

use crate::cox::CoxFit;
use crate::data::Arm;
use crate::propensity::TreatmentModel;

use super::SensitivityError;

/// `F·e^γ / (1 − F + F·e^γ)`: the CDF whose odds are `e^γ` times those of `F`.
#[inline]
pub fn tilt_cdf(f: f64, gamma: f64) -> f64 {
    if f <= 0.0 {
        return 0.0;
    }
    if f >= 1.0 {
        return 1.0;
    }
    if gamma > 0.0 {
        f / ((1.0 - f) * (-gamma).exp() + f)
    } else {
        let e = gamma.exp();
        f * e / (1.0 - f + f * e)
    }
}

/// Joint distribution of `(T, I(Y(t) ≤ s))` given `x`, indexed relative to
/// the arm of interest: `same` is `T = t`, `other` is `T = 1 − t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointTable {
    pub le_other: f64,
    pub le_same: f64,
    pub gt_other: f64,
    pub gt_same: f64,
}

impl JointTable {
    /// Joint table implied by `F_t(s|x) = f`, `π_t(x) = pi_same` and tilt `γ`.
    pub fn tilted(f: f64, pi_same: f64, gamma: f64) -> JointTable {
        let ft = tilt_cdf(f, gamma);
        let pi_other = 1.0 - pi_same;
        JointTable {
            le_other: pi_other * ft,
            le_same: pi_same * f,
            gt_other: pi_other * (1.0 - ft),
            gt_same: pi_same * (1.0 - f),
        }
    }
}

/// Odds of receiving the other arm among `Y(t) ≤ s` divided by the same odds
/// among `Y(t) > s`.
pub fn bayes_odds_ratio(j: &JointTable) -> Result<f64, SensitivityError> {
    let cells = [j.le_other, j.le_same, j.gt_other, j.gt_same];
    if cells.iter().any(|&c| !(c > 0.0)) {
        return Err(SensitivityError::ZeroCell);
    }
    Ok((j.le_other / j.le_same) / (j.gt_other / j.gt_same))
}

/// Sample average of `F̂_t(s|x)·π̂_t(x) + tilt(F̂_t(s|x), γ)·π̂_{1−t}(x)`.
pub fn psi_plugin<'a, I>(
    failure: &CoxFit,
    treatment: &TreatmentModel,
    rows: I,
    s: f64,
    gamma: f64,
    arm: Arm,
) -> Result<f64, SensitivityError>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut total = 0.0;
    let mut n = 0usize;
    for x in rows {
        let f = failure.predict_cdf(s, x)?;
        let pi = treatment.predict(x, arm)?;
        total += f * pi + tilt_cdf(f, gamma) * (1.0 - pi);
        n += 1;
    }
    Ok(if n == 0 { f64::NAN } else { total / n as f64 })
}
