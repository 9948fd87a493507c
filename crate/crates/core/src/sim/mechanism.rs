//! Data-generating mechanisms: a covariate pool plus per-arm failure,
//! censoring and treatment models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::SimError;
use crate::cox::CoxFit;
use crate::data::{
    Arm, ColumnGroup, CovariateColumn, CovariateSpec, DesignSpec, Encoder, Encoding, RawData, SurvivalRecord,
};
use crate::propensity::TreatmentModel;
use crate::sensitivity::tilt_cdf;
use crate::stats;

/// Weibull proportional-hazards model `Λ(t|x) = (t/scale)^shape · e^{lp}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeibullPh {
    pub shape: f64,
    pub scale: f64,
}

impl WeibullPh {
    pub fn new(shape: f64, scale: f64) -> Result<WeibullPh, SimError> {
        if !(shape > 0.0 && scale > 0.0 && shape.is_finite()) {
            return Err(SimError::InvalidWeibull { shape, scale });
        }
        Ok(WeibullPh { shape, scale })
    }

    pub fn cumhaz(&self, t: f64, lp: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        (t / self.scale).powf(self.shape) * lp.exp()
    }

    pub fn cdf(&self, t: f64, lp: f64) -> f64 {
        -(-self.cumhaz(t, lp)).exp_m1()
    }

    /// Inverse-CDF draw from a uniform `u ∈ (0, 1)`.
    pub fn sample(&self, u: f64, lp: f64) -> f64 {
        self.scale * (-u.ln() * (-lp).exp()).powf(1.0 / self.shape)
    }
}

/// A time-to-event law with proportional covariate effects.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeModel {
    Weibull(WeibullPh),
    /// Step cumulative baseline hazard: `(time, cumulative)` at each jump.
    Step { jumps: Vec<(f64, f64)> },
}

impl TimeModel {
    /// Breslow baseline of a fitted Cox model. The baseline sits at the
    /// fit's covariate means, so linear predictors must be centred the same
    /// way (as [`CoxFit::linear_predictor`] does).
    pub fn from_cox(fit: &CoxFit) -> TimeModel {
        let mut cum = 0.0;
        let jumps = fit
            .baseline_steps
            .iter()
            .map(|&(t, d)| {
                cum += d;
                (t, cum)
            })
            .collect();
        TimeModel::Step { jumps }
    }

    pub fn cumhaz(&self, t: f64, lp: f64) -> f64 {
        match self {
            TimeModel::Weibull(w) => w.cumhaz(t, lp),
            TimeModel::Step { jumps } => {
                let k = jumps.partition_point(|&(u, _)| u <= t);
                if k == 0 {
                    0.0
                } else {
                    jumps[k - 1].1 * lp.exp()
                }
            }
        }
    }

    pub fn cdf(&self, t: f64, lp: f64) -> f64 {
        -(-self.cumhaz(t, lp)).exp_m1()
    }

    /// Inverse-CDF draw; infinite when the target exceeds the total mass.
    pub fn sample(&self, u: f64, lp: f64) -> f64 {
        match self {
            TimeModel::Weibull(w) => w.sample(u, lp),
            TimeModel::Step { jumps } => {
                let target = -u.ln() * (-lp).exp();
                let k = jumps.partition_point(|&(_, c)| c < target);
                jumps.get(k).map_or(f64::INFINITY, |&(t, _)| t)
            }
        }
    }
}

/// One covariate pattern with its true linear predictors and propensity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoolRow {
    /// Encoded design row handed to the estimator.
    pub x: Vec<f64>,
    pub lp_fail: [f64; 2],
    pub lp_cens: [f64; 2],
    /// `P(T = 1 | x)`.
    pub pi1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratingMechanism {
    pub pool: Vec<PoolRow>,
    pub failure: [TimeModel; 2],
    pub censoring: [TimeModel; 2],
    pub tau: f64,
    pub tau_dagger: f64,
    /// Column groups of the encoded design, for the propensity smoother.
    pub groups: Vec<ColumnGroup>,
    pub column_names: Vec<String>,
}

/// Raw synthetic covariates, one entry per pool row.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCovariates {
    pub age: Vec<f64>,
    pub log_psa: Vec<f64>,
    pub race: Vec<&'static str>,
    pub insurance: Vec<&'static str>,
    pub charlson: Vec<&'static str>,
    pub gleason: Vec<&'static str>,
    pub stage: Vec<&'static str>,
}

impl SyntheticCovariates {
    /// Draw a prostate-cancer-like cohort: age and PSA roughly match the
    /// pooled cohort's mean and spread; categorical margins are close to
    /// the pooled percentages.
    pub fn draw(n: usize, seed: u64) -> SyntheticCovariates {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = SyntheticCovariates {
            age: Vec::with_capacity(n),
            log_psa: Vec::with_capacity(n),
            race: Vec::with_capacity(n),
            insurance: Vec::with_capacity(n),
            charlson: Vec::with_capacity(n),
            gleason: Vec::with_capacity(n),
            stage: Vec::with_capacity(n),
        };
        for _ in 0..n {
            let z1 = std_normal(&mut rng);
            let z2 = std_normal(&mut rng);
            let [a, b, c, d, e]: [f64; 5] = std::array::from_fn(|_| rng.gen());
            // Clamped tails keep any single row from dominating a risk set.
            let age = 65.5 + 8.4 * z1.clamp(-2.4, 2.4);
            out.age.push(age);
            // Lognormal with mean 22.5 and standard deviation 23.6.
            out.log_psa.push(2.743 + 0.861 * z2.clamp(-2.3, 2.3));
            out.race.push(if a < 0.195 { "nonwhite" } else { "white" });
            let p_medicare = if age >= 65.0 { 0.85 } else { 0.08 };
            out.insurance.push(if b < p_medicare {
                "medicare"
            } else if b < p_medicare + 0.09 {
                "other"
            } else {
                "private"
            });
            out.charlson.push(if c < 0.173 { "1+" } else { "0" });
            out.gleason.push(if d < 0.269 {
                "<=7"
            } else if d < 0.71 {
                "8"
            } else {
                "9+"
            });
            out.stage.push(if e < 0.161 { "T3+" } else { "<=T2" });
        }
        out
    }

    pub fn len(&self) -> usize {
        self.age.len()
    }

    pub fn is_empty(&self) -> bool {
        self.age.is_empty()
    }

    /// Design specification used to encode the pool.
    pub fn design_spec() -> DesignSpec {
        let cat = |name: &str, reference: &str| CovariateSpec {
            name: name.into(),
            encoding: Encoding::Categorical { reference: Some(reference.into()) },
        };
        DesignSpec {
            time: "time".into(),
            event: "event".into(),
            treatment: "treatment".into(),
            covariates: vec![
                CovariateSpec { name: "age".into(), encoding: Encoding::Identity },
                CovariateSpec { name: "log_psa".into(), encoding: Encoding::Identity },
                cat("race", "white"),
                cat("insurance", "private"),
                cat("charlson", "0"),
                cat("gleason", "<=7"),
                cat("stage", "<=T2"),
            ],
        }
    }

    pub fn to_raw(&self) -> RawData {
        let n = self.len();
        let levels = |v: &[&str]| CovariateColumn::Levels(v.iter().map(|s| s.to_string()).collect());
        RawData {
            time: vec![1.0; n],
            event: vec![false; n],
            treatment: vec![Arm::Control; n],
            covariates: vec![
                ("age".into(), CovariateColumn::Numeric(self.age.clone())),
                ("log_psa".into(), CovariateColumn::Numeric(self.log_psa.clone())),
                ("race".into(), levels(&self.race)),
                ("insurance".into(), levels(&self.insurance)),
                ("charlson".into(), levels(&self.charlson)),
                ("gleason".into(), levels(&self.gleason)),
                ("stage".into(), levels(&self.stage)),
            ],
        }
    }
}

/// Parameters of the synthetic prostate mechanism.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyntheticParams {
    pub pool_size: usize,
    pub pool_seed: u64,
    /// Failure laws indexed by arm: EBRT plus AD (0) and prostatectomy (1).
    pub failure: [WeibullPh; 2],
    pub censoring: [WeibullPh; 2],
    pub tau: f64,
    pub tau_dagger: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        SyntheticParams {
            pool_size: 5000,
            pool_seed: 20_240_101,
            failure: [WeibullPh { shape: 1.3, scale: 257.0 }, WeibullPh { shape: 1.3, scale: 451.0 }],
            censoring: [WeibullPh { shape: 2.5, scale: 115.0 }, WeibullPh { shape: 2.5, scale: 120.0 }],
            tau: 130.0,
            tau_dagger: 150.0,
        }
    }
}

impl GeneratingMechanism {
    /// Synthetic cohort with Weibull failure and censoring and a logistic
    /// treatment model favouring younger, privately insured patients with
    /// lower Gleason scores for surgery. Times are in months.
    pub fn synthetic_prostate(params: &SyntheticParams) -> Result<GeneratingMechanism, SimError> {
        for w in params.failure.iter().chain(&params.censoring) {
            WeibullPh::new(w.shape, w.scale)?;
        }
        let cov = SyntheticCovariates::draw(params.pool_size, params.pool_seed);
        if cov.is_empty() {
            return Err(SimError::EmptyPool);
        }
        let spec = SyntheticCovariates::design_spec();
        let raw = cov.to_raw();
        let encoder = Encoder::fit(&spec, &raw)?;
        let encoded = encoder.encode(&raw)?;

        let ind = |v: &[&str], level: &str| v.iter().map(|s| f64::from(u8::from(*s == level))).collect::<Vec<f64>>();
        let nonwhite = ind(&cov.race, "nonwhite");
        let medicare = ind(&cov.insurance, "medicare");
        let other = ind(&cov.insurance, "other");
        let charlson = ind(&cov.charlson, "1+");
        let g8 = ind(&cov.gleason, "8");
        let g9 = ind(&cov.gleason, "9+");
        let t3 = ind(&cov.stage, "T3+");
        let centered = |v: &[f64]| {
            let m = stats::mean(v);
            v.iter().map(|x| x - m).collect::<Vec<f64>>()
        };
        let (c_age, c_psa) = (centered(&cov.age), centered(&cov.log_psa));
        let (c_nw, c_med, c_oth) = (centered(&nonwhite), centered(&medicare), centered(&other));
        let (c_ch, c_g8, c_g9, c_t3) = (centered(&charlson), centered(&g8), centered(&g9), centered(&t3));

        let pool = (0..cov.len())
            .map(|i| {
                let lp_fail = 0.05 * c_age[i]
                    + 0.2 * c_psa[i]
                    + 0.2 * c_nw[i]
                    + 0.1 * c_med[i]
                    + 0.3 * c_oth[i]
                    + 0.4 * c_ch[i]
                    + 0.3 * c_g8[i]
                    + 0.6 * c_g9[i]
                    + 0.3 * c_t3[i];
                let lp_cens = 0.01 * c_age[i] + 0.1 * c_med[i];
                let z = c_age[i] / 8.4;
                let eta = 0.3 - 0.85 * z - 0.3 * medicare[i] - 0.2 * other[i] - 0.2 * nonwhite[i]
                    - 0.3 * g9[i]
                    + 0.2 * charlson[i];
                PoolRow {
                    x: encoded[i].covariates.clone(),
                    lp_fail: [lp_fail; 2],
                    lp_cens: [lp_cens; 2],
                    pi1: stats::sigmoid(eta),
                }
            })
            .collect();
        Ok(GeneratingMechanism {
            pool,
            failure: params.failure.map(TimeModel::Weibull),
            censoring: params.censoring.map(TimeModel::Weibull),
            tau: params.tau,
            tau_dagger: params.tau_dagger,
            groups: encoder.groups(),
            column_names: encoder.column_names(),
        })
    }

    /// Mechanism implied by fitted nuisance models, with the observed
    /// covariate rows as the pool.
    pub fn from_fits(
        rows: &[&[f64]],
        failure: [&CoxFit; 2],
        censoring: [&CoxFit; 2],
        treatment: &TreatmentModel,
        groups: Vec<ColumnGroup>,
        tau: f64,
        tau_dagger: f64,
    ) -> Result<GeneratingMechanism, SimError> {
        if rows.is_empty() {
            return Err(SimError::EmptyPool);
        }
        let pool = rows
            .iter()
            .map(|x| {
                Ok(PoolRow {
                    x: x.to_vec(),
                    lp_fail: [failure[0].linear_predictor(x), failure[1].linear_predictor(x)],
                    lp_cens: [censoring[0].linear_predictor(x), censoring[1].linear_predictor(x)],
                    pi1: treatment.predict(x, Arm::Treated)?,
                })
            })
            .collect::<Result<Vec<_>, SimError>>()?;
        let names = (0..rows[0].len()).map(|j| format!("x{j}")).collect();
        Ok(GeneratingMechanism {
            pool,
            failure: failure.map(TimeModel::from_cox),
            censoring: censoring.map(TimeModel::from_cox),
            tau,
            tau_dagger,
            groups,
            column_names: names,
        })
    }

    /// `F_t(s|x)` for pool row `i`.
    pub fn failure_cdf(&self, t: Arm, s: f64, i: usize) -> f64 {
        let r = &self.pool[i];
        self.failure[t.index()].cdf(s, r.lp_fail[t.index()])
    }

    pub fn propensity(&self, t: Arm, i: usize) -> f64 {
        match t {
            Arm::Treated => self.pool[i].pi1,
            Arm::Control => 1.0 - self.pool[i].pi1,
        }
    }

    /// Marginal probability of assignment to `t` over the pool.
    pub fn arm_probability(&self, t: Arm) -> f64 {
        (0..self.pool.len()).map(|i| self.propensity(t, i)).sum::<f64>() / self.pool.len() as f64
    }
}

/// Simulate `n` subjects. Deterministic in `seed`.
pub fn generate_dataset(mech: &GeneratingMechanism, n: usize, seed: u64) -> Vec<SurvivalRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let i = rng.gen_range(0..mech.pool.len());
            let row = &mech.pool[i];
            let arm = if rng.gen::<f64>() < row.pi1 { Arm::Treated } else { Arm::Control };
            let a = arm.index();
            let y = mech.failure[a].sample(open_unit(&mut rng), row.lp_fail[a]);
            let c = mech.censoring[a].sample(open_unit(&mut rng), row.lp_cens[a]);
            let end = c.min(mech.tau_dagger);
            SurvivalRecord { covariates: row.x.clone(), treatment: arm, time: y.min(end), event: y <= end }
        })
        .collect()
}

fn std_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1 = open_unit(rng);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn open_unit(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u: f64 = rng.gen();
        if u > 0.0 {
            return u;
        }
    }
}

/// `ψ_t(s; γ)` under the mechanism: the pool average of
/// `F_t(s|x) π_t(x) + tilt(F_t(s|x), γ) π_{1−t}(x)`.
pub fn true_psi(mech: &GeneratingMechanism, arm: Arm, s: f64, gamma: f64) -> f64 {
    let total: f64 = (0..mech.pool.len())
        .map(|i| {
            let f = mech.failure_cdf(arm, s, i);
            let p = mech.propensity(arm, i);
            f * p + tilt_cdf(f, gamma) * (1.0 - p)
        })
        .sum();
    total / mech.pool.len() as f64
}
