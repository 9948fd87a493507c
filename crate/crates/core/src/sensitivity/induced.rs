//! Induced counterfactual survival among the other arm, and the paired
//! survival-difference table over `(γ₁, γ₀)`.

use serde::Serialize;

use super::SensitivityError;
use crate::stats::Z_975;

/// `P[Y(t) > s | T = 1 − t]` together with a clipping flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InducedSurvival {
    pub value: f64,
    /// Value before clipping to `[0, 1]`.
    pub raw: f64,
    pub clipped: bool,
}

/// `(P[Y(t)>s] − P[Y(t)>s | T=t]·P[T=t]) / P[T=1−t]`.
pub fn induced_counterfactual_surv(
    marginal_surv: f64,
    same_arm_surv: f64,
    p_same: f64,
) -> Result<InducedSurvival, SensitivityError> {
    let p_other = 1.0 - p_same;
    if !(p_other > 0.0) || !(p_same >= 0.0) {
        return Err(SensitivityError::DegenerateArmFrequency(p_same));
    }
    let raw = (marginal_surv - same_arm_surv * p_same) / p_other;
    let value = raw.clamp(0.0, 1.0);
    Ok(InducedSurvival { value, raw, clipped: value != raw })
}

/// One cell of the survival-difference table `S₁(s) − S₀(s)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DifferenceCell {
    pub s: f64,
    pub gamma1: f64,
    pub gamma0: f64,
    pub diff: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// Influence contributions of one estimated cell, kept for covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct CellInfluence {
    pub psi: f64,
    pub sum_h: f64,
    /// `g_i − h_i ψ̂` in subject order.
    pub resid: Vec<f64>,
}

/// Covariance of two cell estimates from paired influence contributions.
pub fn paired_covariance(a: &CellInfluence, b: &CellInfluence) -> f64 {
    let cross: f64 = a.resid.iter().zip(&b.resid).map(|(x, y)| x * y).sum();
    cross / (a.sum_h * b.sum_h)
}

/// Survival difference `(1 − ψ₁) − (1 − ψ₀)` with a Wald interval.
pub fn difference_cell(
    s: f64,
    gamma1: f64,
    gamma0: f64,
    treated: (&CellInfluence, f64),
    control: (&CellInfluence, f64),
) -> DifferenceCell {
    let (inf1, psi1) = treated;
    let (inf0, psi0) = control;
    let v1 = paired_covariance(inf1, inf1);
    let v0 = paired_covariance(inf0, inf0);
    let c = paired_covariance(inf1, inf0);
    let se = (v1 + v0 - 2.0 * c).max(0.0).sqrt();
    let diff = psi0 - psi1;
    DifferenceCell {
        s,
        gamma1,
        gamma0,
        diff,
        se,
        ci_lo: (diff - Z_975 * se).max(-1.0),
        ci_hi: (diff + Z_975 * se).min(1.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_arithmetic() {
        let r = induced_counterfactual_surv(0.9, 0.93, 0.5).unwrap();
        assert!((r.value - 0.87).abs() < 1e-12);
        assert!(!r.clipped);
    }

    #[test]
    fn mixture_identity() {
        let r = induced_counterfactual_surv(0.8, 0.8, 0.37).unwrap();
        assert!((r.value - 0.8).abs() < 1e-12);
    }

    #[test]
    fn clips_and_flags() {
        let r = induced_counterfactual_surv(0.2, 0.9, 0.5).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.clipped && r.raw < 0.0);
        assert!(matches!(induced_counterfactual_surv(0.5, 0.5, 1.0), Err(SensitivityError::DegenerateArmFrequency(_))));
    }

    #[test]
    fn difference_variance_uses_pairing() {
        let a = CellInfluence { psi: 0.2, sum_h: 4.0, resid: vec![1.0, -1.0, 0.5, -0.5] };
        let same = difference_cell(60.0, 0.0, 0.0, (&a, 0.2), (&a, 0.2));
        assert_eq!(same.diff, 0.0);
        assert!(same.se.abs() < 1e-12);
    }
}
