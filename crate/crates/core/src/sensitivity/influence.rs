//! Direct, per-record evaluation of the influence-function pieces.
//!
//! This is the readable reference: every quantity is computed from the
//! fitted nuisances at the point where it is needed. The cross-fitted
//! estimator uses an algebraically identical but precomputed route.

use serde::Serialize;

use super::tilt::tilt_cdf;
use super::SensitivityError;
use crate::cox::{midpoint_grid, CoxFit};
use crate::data::{Arm, SurvivalRecord};
use crate::propensity::TreatmentModel;

/// Nuisance models fitted on one fold complement, plus the midpoint grid.
#[derive(Debug, Clone, Serialize)]
pub struct NuisanceBundle {
    /// Failure models indexed by [`Arm::index`].
    pub failure: [CoxFit; 2],
    /// Censoring models indexed by [`Arm::index`].
    pub censoring: [CoxFit; 2],
    pub treatment: TreatmentModel,
    pub grid: Vec<f64>,
    pub du: f64,
}

impl NuisanceBundle {
    pub fn new(failure: [CoxFit; 2], censoring: [CoxFit; 2], treatment: TreatmentModel, tau_dagger: f64, m: usize) -> Self {
        NuisanceBundle { failure, censoring, treatment, grid: midpoint_grid(tau_dagger, m), du: tau_dagger / m as f64 }
    }

    /// `F̂_t(u|x)`.
    pub fn cdf(&self, t: Arm, u: f64, x: &[f64]) -> f64 {
        let f = &self.failure[t.index()];
        -(-f.cumhaz(u) * f.risk(x)).exp_m1()
    }

    /// `Ĝ_a(u|x)`.
    pub fn cens_surv(&self, a: Arm, u: f64, x: &[f64]) -> f64 {
        let c = &self.censoring[a.index()];
        (-c.cumhaz(u) * c.risk(x)).exp()
    }

    /// `λ̂_a(u|x)` for censoring.
    pub fn cens_hazard(&self, a: Arm, u: f64, x: &[f64]) -> f64 {
        let c = &self.censoring[a.index()];
        c.hazard(u) * c.risk(x)
    }

    pub fn propensity(&self, x: &[f64], arm: Arm) -> Result<f64, SensitivityError> {
        Ok(self.treatment.predict(x, arm)?)
    }
}

/// Upper limits on inverse weights for one evaluation time `s`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightCaps {
    pub inv_pi: [f64; 2],
    pub inv_g_y: [f64; 2],
    pub inv_g_s: [f64; 2],
    /// `1/Ĝ` at the integration grid points, per arm.
    pub inv_g_grid: [f64; 2],
}

impl WeightCaps {
    pub fn none() -> WeightCaps {
        WeightCaps {
            inv_pi: [f64::INFINITY; 2],
            inv_g_y: [f64::INFINITY; 2],
            inv_g_s: [f64::INFINITY; 2],
            inv_g_grid: [f64::INFINITY; 2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhiComponents {
    pub phi1: f64,
    pub phi2: f64,
    pub phi3: f64,
}

impl PhiComponents {
    pub fn total(&self) -> f64 {
        self.phi1 + self.phi2 + self.phi3
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LTerms {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    /// `1 − F̂_t(u⁻|X)` was below `1e-12`, so `l1` was set to zero.
    pub degenerate: bool,
}

impl LTerms {
    pub fn total(&self) -> f64 {
        self.l1 + self.l2 + self.l3
    }
}

/// Numerator and denominator contributions of one subject.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IfRow {
    pub g: f64,
    pub h: f64,
}

/// Ratio weight `A = (π_{1−t}/π_t)·e^γ / D²` with `D = 1 − F + F e^γ`.
fn weight_factor(b: &NuisanceBundle, caps: &WeightCaps, x: &[f64], f: f64, gamma: f64, t: Arm) -> Result<f64, SensitivityError> {
    let pi_t = b.propensity(x, t)?;
    let inv_pi = (1.0 / pi_t).min(caps.inv_pi[t.index()]);
    let e = gamma.exp();
    let d = 1.0 - f + f * e;
    Ok((1.0 - pi_t) * inv_pi * e / (d * d))
}

/// The three uncensored influence components for target arm `t`, with the
/// event time taken as the observed follow-up time.
pub fn phi_components(
    rec: &SurvivalRecord,
    b: &NuisanceBundle,
    caps: &WeightCaps,
    s: f64,
    gamma: f64,
    t: Arm,
) -> Result<PhiComponents, SensitivityError> {
    let x = &rec.covariates;
    let f = b.cdf(t, s, x);
    if rec.treatment == t {
        let a = weight_factor(b, caps, x, f, gamma, t)?;
        let failed_by_s = rec.event && rec.time <= s;
        Ok(PhiComponents { phi1: if failed_by_s { 1.0 + a } else { 0.0 }, phi2: -a * f, phi3: 0.0 })
    } else {
        Ok(PhiComponents { phi1: 0.0, phi2: 0.0, phi3: tilt_cdf(f, gamma) })
    }
}

/// Conditional expectations of the components given survival to `u`.
pub fn l_terms(
    u: f64,
    rec: &SurvivalRecord,
    b: &NuisanceBundle,
    caps: &WeightCaps,
    s: f64,
    gamma: f64,
    t: Arm,
) -> Result<LTerms, SensitivityError> {
    let phi = phi_components(rec, b, caps, s, gamma, t)?;
    let before_s = u < s;
    let mut out = LTerms {
        l1: 0.0,
        l2: if before_s { phi.phi2 } else { 0.0 },
        l3: if before_s { phi.phi3 } else { 0.0 },
        degenerate: false,
    };
    if rec.treatment == t && u <= s {
        let x = &rec.covariates;
        let f = b.cdf(t, s, x);
        let fu = b.cdf(t, u, x);
        let surv_u = 1.0 - fu;
        if surv_u < 1e-12 {
            out.degenerate = true;
        } else {
            let a = weight_factor(b, caps, x, f, gamma, t)?;
            out.l1 = (f - fu) / surv_u * (1.0 + a);
        }
    }
    Ok(out)
}

/// Observed-data contributions `g` and `h` for one subject.
pub fn if_row(
    rec: &SurvivalRecord,
    b: &NuisanceBundle,
    caps: &WeightCaps,
    s: f64,
    gamma: f64,
    t: Arm,
) -> Result<IfRow, SensitivityError> {
    let x = &rec.covariates;
    let own = rec.treatment;
    let ai = own.index();
    let y = rec.time;
    let xi = rec.event || y >= s;

    let inv_g_y = (1.0 / b.cens_surv(own, y, x)).min(caps.inv_g_y[ai]);
    let ipcw = if !xi {
        0.0
    } else if y < s {
        inv_g_y
    } else {
        (1.0 / b.cens_surv(own, s, x)).min(caps.inv_g_s[ai])
    };
    let cens = if rec.event { 0.0 } else { inv_g_y };

    let phi = phi_components(rec, b, caps, s, gamma, t)?.total();
    let l_y = l_terms(y, rec, b, caps, s, gamma, t)?.total();

    let mut g = ipcw * phi + cens * l_y;
    let mut h = ipcw + if y < s { cens } else { 0.0 };
    for &u in b.grid.iter().take_while(|&&u| u <= y) {
        let w = (1.0 / b.cens_surv(own, u, x)).min(caps.inv_g_grid[ai]) * b.cens_hazard(own, u, x) * b.du;
        g -= l_terms(u, rec, b, caps, s, gamma, t)?.total() * w;
        if u < s {
            h -= w;
        }
    }
    Ok(IfRow { g, h })
}
