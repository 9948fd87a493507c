//! Cross-fitted estimation of `ψ_t(s; γ)` over an `(arm, s, γ)` grid.
//!
//! Nuisance models are fitted on each fold complement and evaluated on the
//! held-out fold. Everything that does not depend on `γ` (inverse weights,
//! grid sums of the augmentation integrals) is computed once per subject,
//! so each cell costs one pass over the sample.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::induced::{difference_cell, induced_counterfactual_surv, CellInfluence, DifferenceCell, InducedSurvival};
use super::influence::{NuisanceBundle, WeightCaps};
use super::pava::pava_monotonize;
use super::tilt::tilt_cdf;
use super::{logit_wald, SensitivityError};
use crate::cox::{fit_cox_indexed, Bandwidth, CoxError, CoxFit, CoxOptions, OutcomeRole};
use crate::data::{assign_folds, Arm, ColumnGroup, FoldAssignment, StudyConfig, SurvivalRecord};
use crate::propensity::{fit_propensity_records, PropensityOptions, TreatmentModel};
use crate::stats;

/// How the censoring distribution is modelled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CensoringSpec {
    /// Proportional hazards in the full design.
    Cox,
    /// Proportional hazards with no covariates.
    CovariateFree,
}

/// How the treatment probability is modelled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreatmentSpec {
    Gam,
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorConfig {
    pub folds: usize,
    pub grid_size: usize,
    pub tau: f64,
    pub tau_dagger: f64,
    pub trunc_percentile: f64,
    pub bandwidth: Bandwidth,
    pub propensity: PropensityOptions,
    pub censoring: CensoringSpec,
    pub treatment: TreatmentSpec,
    /// Seed for the fold split.
    pub seed: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            folds: 5,
            grid_size: 200,
            tau: 130.0,
            tau_dagger: 150.0,
            trunc_percentile: 0.995,
            bandwidth: Bandwidth::Scaled { c: 1.0 },
            propensity: PropensityOptions::default(),
            censoring: CensoringSpec::Cox,
            treatment: TreatmentSpec::Gam,
            seed: 1,
        }
    }
}

impl EstimatorConfig {
    pub fn from_study(c: &StudyConfig) -> EstimatorConfig {
        EstimatorConfig {
            folds: c.folds,
            grid_size: c.grid_size,
            tau: c.tau,
            tau_dagger: c.tau_dagger,
            trunc_percentile: c.trunc_percentile,
            bandwidth: c.bandwidth.map_or(Bandwidth::Scaled { c: 1.0 }, Bandwidth::Fixed),
            propensity: PropensityOptions { floor: c.propensity_floor, ..PropensityOptions::default() },
            seed: c.seed,
            ..EstimatorConfig::default()
        }
    }

    pub fn cox_options(&self) -> CoxOptions {
        CoxOptions { bandwidth: self.bandwidth, tau_dagger: self.tau_dagger, grid_size: self.grid_size, ..CoxOptions::default() }
    }
}

/// Cutoff applied to one family of inverse weights.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilyCutoff {
    pub family: String,
    pub arm: Arm,
    pub cutoff: f64,
    pub n_used: usize,
    pub n_truncated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruncationReport {
    pub percentile: f64,
    pub families: Vec<FamilyCutoff>,
    /// Subjects with at least one truncated weight.
    pub subjects_truncated: usize,
}

/// Cutoffs for every weight family across all evaluation times.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilyCaps {
    pub inv_pi: [f64; 2],
    pub inv_g_y: [f64; 2],
    pub inv_g_s: [Vec<f64>; 2],
    pub inv_g_grid: [f64; 2],
}

impl FamilyCaps {
    pub fn for_s(&self, j: usize) -> WeightCaps {
        WeightCaps {
            inv_pi: self.inv_pi,
            inv_g_y: self.inv_g_y,
            inv_g_s: [self.inv_g_s[0][j], self.inv_g_s[1][j]],
            inv_g_grid: self.inv_g_grid,
        }
    }
}

/// One `(arm, s, γ)` result.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PsiEstimate {
    pub arm: Arm,
    pub s: f64,
    pub gamma: f64,
    /// Final estimate: monotonised over `s` and clipped to `[0, 1]`.
    pub psi: f64,
    /// `Σg / Σh` before monotonisation and clipping.
    pub psi_raw: f64,
    pub sigma: f64,
    pub sigma_boot: Option<f64>,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub boot_ci_lo: Option<f64>,
    pub boot_ci_hi: Option<f64>,
    pub n_truncated: usize,
    /// The monotonised value was outside `[0, 1]`.
    pub clipped: bool,
    /// The interval collapsed to a point.
    pub degenerate: bool,
}

impl PsiEstimate {
    /// Attach a bootstrap standard deviation and its logit interval.
    pub fn set_bootstrap(&mut self, sigma_boot: f64) {
        let (lo, hi, _) = logit_wald(self.psi, sigma_boot);
        self.sigma_boot = Some(sigma_boot);
        self.boot_ci_lo = Some(lo);
        self.boot_ci_hi = Some(hi);
    }
}

/// Per-subject summary for one evaluation time.
#[derive(Debug, Clone, Copy, Default)]
struct TimeSummary {
    /// `ξ / Ĝ(min(Ỹ, s))`, truncated.
    ipcw: f64,
    h: f64,
    /// `Σ w_m` over grid points `u_m ≤ Ỹ`, `u_m < s`.
    w: f64,
    /// Same sum restricted to points where `1 − F̂(u_m) ≥ 1e-12`.
    w1: f64,
    /// `Σ w_m / (1 − F̂(u_m))` over those points.
    r: f64,
}

#[derive(Debug, Clone)]
struct Subject {
    arm: Arm,
    event: bool,
    y: f64,
    /// `π̂_{T}(X)` (clipped) and its truncated inverse.
    pi_own: f64,
    inv_pi: f64,
    /// `F̂_t(s_j|X)` for each arm `t`.
    f_s: [Vec<f64>; 2],
    /// `1 − F̂_T(Ỹ|X)`.
    surv_y: f64,
    /// `(1 − Δ) / Ĝ_T(Ỹ|X)`, truncated.
    cens_y: f64,
    times: Vec<TimeSummary>,
    /// Some weight used at every evaluation time was truncated.
    truncated_always: bool,
    /// Some weight used at evaluation time `j` was truncated.
    truncated_at: Vec<bool>,
}

/// Quantities computed from the nuisances before truncation.
struct RawSubject {
    arm: Arm,
    event: bool,
    y: f64,
    pi_own: f64,
    f_s: [Vec<f64>; 2],
    surv_y: f64,
    inv_g_y: f64,
    inv_g_s: Vec<f64>,
    inv_g_grid: Vec<f64>,
    lam_du: Vec<f64>,
    surv_grid: Vec<f64>,
}

/// Nuisances fitted per fold and the per-subject summaries they imply.
pub struct CrossFit {
    pub folds: FoldAssignment,
    pub bundles: Vec<NuisanceBundle>,
    pub s_grid: Vec<f64>,
    pub caps: FamilyCaps,
    pub truncation: TruncationReport,
    subjects: Vec<Subject>,
}

fn fit_bundle(
    records: &[SurvivalRecord],
    train: &[usize],
    fold: usize,
    groups: &[ColumnGroup],
    cfg: &EstimatorConfig,
) -> Result<NuisanceBundle, SensitivityError> {
    let opts = cfg.cox_options();
    let p = records.first().map_or(0, |r| r.covariates.len());
    let mut failure = Vec::with_capacity(2);
    let mut censoring = Vec::with_capacity(2);
    for arm in Arm::BOTH {
        let idx: Vec<usize> = train.iter().copied().filter(|&i| records[i].treatment == arm).collect();
        let f = fit_cox_indexed(records, &idx, OutcomeRole::Failure, &opts).map_err(|e| match e {
            CoxError::NoEvents(_) => SensitivityError::FoldWithoutEvents { fold, arm },
            other => SensitivityError::Cox(other),
        })?;
        failure.push(f);
        let c = match cfg.censoring {
            CensoringSpec::Cox => fit_cox_indexed(records, &idx, OutcomeRole::Censoring, &opts),
            CensoringSpec::CovariateFree => {
                let bare: Vec<SurvivalRecord> = idx
                    .iter()
                    .map(|&i| SurvivalRecord { covariates: Vec::new(), ..records[i].clone() })
                    .collect();
                let all: Vec<usize> = (0..bare.len()).collect();
                fit_cox_indexed(&bare, &all, OutcomeRole::Censoring, &opts)
            }
        };
        let c = match c {
            Ok(c) => c,
            Err(CoxError::NoEvents(_)) => {
                let dim = if cfg.censoring == CensoringSpec::Cox { p } else { 0 };
                CoxFit::zero_hazard(dim, OutcomeRole::Censoring, &opts)
            }
            Err(e) => return Err(e.into()),
        };
        censoring.push(c);
    }
    let treatment = match cfg.treatment {
        TreatmentSpec::Gam => TreatmentModel::Gam(fit_propensity_records(records, train, groups, &cfg.propensity)?),
        TreatmentSpec::Constant(p) => TreatmentModel::Constant { p, floor: cfg.propensity.floor },
    };
    let mut c = censoring.into_iter();
    let mut f = failure.into_iter();
    Ok(NuisanceBundle::new(
        [f.next().unwrap(), f.next().unwrap()],
        [c.next().unwrap(), c.next().unwrap()],
        treatment,
        cfg.tau_dagger,
        cfg.grid_size,
    ))
}

/// Baseline curves of one bundle tabulated where they are needed.
struct Tabulated {
    cum_f_grid: [Vec<f64>; 2],
    cum_c_grid: [Vec<f64>; 2],
    haz_c_grid: [Vec<f64>; 2],
    cum_f_s: [Vec<f64>; 2],
    cum_c_s: [Vec<f64>; 2],
}

impl Tabulated {
    fn new(b: &NuisanceBundle, s_grid: &[f64]) -> Tabulated {
        let tab = |fit: &CoxFit, pts: &[f64], f: fn(&CoxFit, f64) -> f64| pts.iter().map(|&u| f(fit, u)).collect::<Vec<_>>();
        let both = |fits: &[CoxFit; 2], pts: &[f64], f: fn(&CoxFit, f64) -> f64| [tab(&fits[0], pts, f), tab(&fits[1], pts, f)];
        Tabulated {
            cum_f_grid: both(&b.failure, &b.grid, CoxFit::cumhaz),
            cum_c_grid: both(&b.censoring, &b.grid, CoxFit::cumhaz),
            haz_c_grid: both(&b.censoring, &b.grid, CoxFit::hazard),
            cum_f_s: both(&b.failure, s_grid, CoxFit::cumhaz),
            cum_c_s: both(&b.censoring, s_grid, CoxFit::cumhaz),
        }
    }
}

fn raw_subject(rec: &SurvivalRecord, b: &NuisanceBundle, tab: &Tabulated) -> Result<RawSubject, SensitivityError> {
    let x = &rec.covariates;
    let a = rec.treatment.index();
    let rf = [b.failure[0].risk(x), b.failure[1].risk(x)];
    let rc = b.censoring[a].risk(x);
    let pi_own = b.treatment.predict(x, rec.treatment)?;
    let f_s = [0, 1].map(|t| tab.cum_f_s[t].iter().map(|&c| -(-c * rf[t]).exp_m1()).collect::<Vec<_>>());
    let y = rec.time;
    let surv_y = (-b.failure[a].cumhaz(y) * rf[a]).exp();
    let inv_g_y = (b.censoring[a].cumhaz(y) * rc).exp();
    let inv_g_s = tab.cum_c_s[a].iter().map(|&c| (c * rc).exp()).collect();
    let n_grid = b.grid.partition_point(|&u| u <= y);
    let mut inv_g_grid = Vec::with_capacity(n_grid);
    let mut lam_du = Vec::with_capacity(n_grid);
    let mut surv_grid = Vec::with_capacity(n_grid);
    for m in 0..n_grid {
        inv_g_grid.push((tab.cum_c_grid[a][m] * rc).exp());
        lam_du.push(tab.haz_c_grid[a][m] * rc * b.du);
        surv_grid.push((-tab.cum_f_grid[a][m] * rf[a]).exp());
    }
    Ok(RawSubject { arm: rec.treatment, event: rec.event, y, pi_own, f_s, surv_y, inv_g_y, inv_g_s, inv_g_grid, lam_du, surv_grid })
}

/// Percentile cutoff of a family and the number of values above it.
fn cutoff(values: &mut [f64], p: f64) -> (f64, usize) {
    if values.is_empty() || p >= 1.0 {
        return (f64::INFINITY, 0);
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let c = stats::quantile_sorted(values, p);
    let n = values.len() - values.partition_point(|&v| v <= c);
    (c, n)
}

impl CrossFit {
    /// Fit nuisances on every fold complement and summarise each held-out
    /// subject at the evaluation times `s_grid`.
    pub fn fit(
        records: &[SurvivalRecord],
        groups: &[ColumnGroup],
        folds: &FoldAssignment,
        s_grid: &[f64],
        cfg: &EstimatorConfig,
    ) -> Result<CrossFit, SensitivityError> {
        if folds.len() != records.len() {
            return Err(SensitivityError::InvalidInput(format!(
                "fold assignment covers {} subjects, data has {}",
                folds.len(),
                records.len()
            )));
        }
        if s_grid.iter().any(|&s| !(0.0..=cfg.tau).contains(&s)) || s_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SensitivityError::InvalidInput(format!("evaluation times must be ascending within [0, {}]", cfg.tau)));
        }
        if let Some(r) = records.iter().find(|r| r.time > cfg.tau_dagger || r.time < 0.0) {
            return Err(SensitivityError::InvalidInput(format!(
                "follow-up time {} outside [0, {}]",
                r.time, cfg.tau_dagger
            )));
        }
        let bundles: Vec<NuisanceBundle> = (0..folds.k)
            .into_par_iter()
            .map(|k| fit_bundle(records, &folds.complement(k), k, groups, cfg))
            .collect::<Result<_, _>>()?;
        let tabs: Vec<Tabulated> = bundles.iter().map(|b| Tabulated::new(b, s_grid)).collect();
        let raw: Vec<RawSubject> = records
            .par_iter()
            .enumerate()
            .map(|(i, r)| {
                let k = folds.fold_of[i];
                raw_subject(r, &bundles[k], &tabs[k])
            })
            .collect::<Result<_, _>>()?;

        let ns = s_grid.len();
        let p = cfg.trunc_percentile;
        let mut families = Vec::new();
        let mut inv_pi = [f64::INFINITY; 2];
        let mut inv_g_y = [f64::INFINITY; 2];
        let mut inv_g_s = [vec![f64::INFINITY; ns], vec![f64::INFINITY; ns]];
        let mut inv_g_grid = [f64::INFINITY; 2];
        for arm in Arm::BOTH {
            let a = arm.index();
            let mine: Vec<&RawSubject> = raw.iter().filter(|r| r.arm == arm).collect();
            let mut push = |family: String, mut vals: Vec<f64>| {
                let (c, n) = cutoff(&mut vals, p);
                families.push(FamilyCutoff { family, arm, cutoff: c, n_used: vals.len(), n_truncated: n });
                c
            };
            inv_pi[a] = push("inv_pi".into(), mine.iter().map(|r| 1.0 / r.pi_own).collect());
            inv_g_y[a] = push("inv_g_y".into(), mine.iter().map(|r| r.inv_g_y).collect());
            for (j, s) in s_grid.iter().enumerate() {
                inv_g_s[a][j] = push(format!("inv_g_s[{s}]"), mine.iter().map(|r| r.inv_g_s[j]).collect());
            }
            inv_g_grid[a] = push("inv_g_grid".into(), mine.iter().flat_map(|r| r.inv_g_grid.iter().copied()).collect());
        }
        let caps = FamilyCaps { inv_pi, inv_g_y, inv_g_s, inv_g_grid };

        let grid = &bundles[0].grid;
        let before: Vec<usize> = s_grid.iter().map(|&s| grid.partition_point(|&u| u < s)).collect();
        let subjects: Vec<Subject> = raw
            .into_iter()
            .map(|r| summarise(r, &caps, s_grid, &before))
            .collect();
        let subjects_truncated =
            subjects.iter().filter(|s| s.truncated_always || s.truncated_at.iter().any(|&t| t)).count();
        let truncation = TruncationReport { percentile: p, families, subjects_truncated };
        Ok(CrossFit {
            folds: folds.clone(),
            bundles,
            s_grid: s_grid.to_vec(),
            caps,
            truncation,
            subjects,
        })
    }

    pub fn n(&self) -> usize {
        self.subjects.len()
    }

    /// Subjects with a truncated weight among those used at `s_j`.
    fn n_truncated(&self, j: usize) -> usize {
        self.subjects.iter().filter(|s| s.truncated_always || s.truncated_at[j]).count()
    }

    /// Per-subject `(g, h)` for target arm `t`, time index `j` and `γ`.
    pub fn contributions(&self, t: Arm, j: usize, gamma: f64) -> (Vec<f64>, Vec<f64>) {
        let s = self.s_grid[j];
        let e = gamma.exp();
        let ti = t.index();
        let mut g = Vec::with_capacity(self.subjects.len());
        let mut h = Vec::with_capacity(self.subjects.len());
        for sub in &self.subjects {
            let ts = &sub.times[j];
            let f = sub.f_s[ti][j];
            let before = sub.y < s;
            let gi = if sub.arm == t {
                let d = 1.0 - f + f * e;
                let a = (1.0 - sub.pi_own) * sub.inv_pi * e / (d * d);
                let phi = if sub.event && sub.y <= s { 1.0 + a } else { 0.0 } - a * f;
                let mut l_y = if before { -a * f } else { 0.0 };
                if sub.y <= s && sub.surv_y >= 1e-12 {
                    l_y += (1.0 - (1.0 - f) / sub.surv_y) * (1.0 + a);
                }
                let integral = (1.0 + a) * (ts.w1 - (1.0 - f) * ts.r) - a * f * ts.w;
                ts.ipcw * phi + sub.cens_y * l_y - integral
            } else {
                let tau3 = tilt_cdf(f, gamma);
                let l_y = if before { tau3 } else { 0.0 };
                ts.ipcw * tau3 + sub.cens_y * l_y - tau3 * ts.w
            };
            g.push(gi);
            h.push(ts.h);
        }
        (g, h)
    }

    /// `ψ̂ = Σg / Σh` with its influence residuals.
    pub fn cell(&self, t: Arm, j: usize, gamma: f64) -> Result<CellInfluence, SensitivityError> {
        let (g, h) = self.contributions(t, j, gamma);
        let sum_g: f64 = g.iter().sum();
        let sum_h: f64 = h.iter().sum();
        if !(sum_h > 0.0 && sum_h.is_finite() && sum_g.is_finite()) {
            return Err(SensitivityError::AllWeightsTruncated { arm: t, s: self.s_grid[j] });
        }
        let psi = sum_g / sum_h;
        let resid = g.iter().zip(&h).map(|(gi, hi)| gi - hi * psi).collect();
        Ok(CellInfluence { psi, sum_h, resid })
    }

    /// Estimates for every `s` in the grid and every `γ` of each arm.
    /// Returns the estimates (ordered by arm, γ, s) and their influences.
    pub fn sweep(&self, gammas: [&[f64]; 2]) -> Result<(Vec<PsiEstimate>, Vec<CellInfluence>), SensitivityError> {
        let mut estimates = Vec::new();
        let mut influences = Vec::new();
        for t in Arm::BOTH {
            for &gamma in gammas[t.index()] {
                let cells: Vec<CellInfluence> =
                    (0..self.s_grid.len()).map(|j| self.cell(t, j, gamma)).collect::<Result<_, _>>()?;
                let raw: Vec<f64> = cells.iter().map(|c| c.psi).collect();
                let mono = pava_monotonize(&raw);
                for (j, cell) in cells.into_iter().enumerate() {
                    let sigma = (cell.resid.iter().map(|r| r * r).sum::<f64>()).sqrt() / cell.sum_h;
                    let psi = mono[j].clamp(0.0, 1.0);
                    let (ci_lo, ci_hi, degenerate) = logit_wald(psi, sigma);
                    estimates.push(PsiEstimate {
                        arm: t,
                        s: self.s_grid[j],
                        gamma,
                        psi,
                        psi_raw: cell.psi,
                        sigma,
                        sigma_boot: None,
                        ci_lo,
                        ci_hi,
                        boot_ci_lo: None,
                        boot_ci_hi: None,
                        n_truncated: self.n_truncated(j),
                        clipped: psi != mono[j],
                        degenerate,
                    });
                    influences.push(cell);
                }
            }
        }
        Ok((estimates, influences))
    }

    /// Mean of `1 − F̂_t(s_j|X)` over subjects who received `t`.
    pub fn same_arm_survival(&self, t: Arm, j: usize) -> f64 {
        let vals: Vec<f64> = self.subjects.iter().filter(|s| s.arm == t).map(|s| 1.0 - s.f_s[t.index()][j]).collect();
        stats::mean(&vals)
    }

    /// Observed proportion receiving `t`.
    pub fn arm_frequency(&self, t: Arm) -> f64 {
        self.subjects.iter().filter(|s| s.arm == t).count() as f64 / self.subjects.len() as f64
    }

    /// Number of subjects whose fitted propensity sat at a clip bound.
    pub fn propensity_clipped(&self) -> usize {
        self.subjects
            .iter()
            .filter(|s| {
                let floor = match &self.bundles[0].treatment {
                    TreatmentModel::Gam(f) => f.floor,
                    TreatmentModel::Constant { floor, .. } => *floor,
                };
                s.pi_own <= floor || s.pi_own >= 1.0 - floor
            })
            .count()
    }
}

fn summarise(r: RawSubject, caps: &FamilyCaps, s_grid: &[f64], before: &[usize]) -> Subject {
    let a = r.arm.index();
    let n_grid = r.inv_g_grid.len();
    // Prefix sums up to each cut point min(#grid ≤ Ỹ, #grid < s).
    let cuts: Vec<usize> = before.iter().map(|&b| b.min(n_grid)).collect();
    let mut w = vec![0.0; s_grid.len()];
    let mut w1 = vec![0.0; s_grid.len()];
    let mut rr = vec![0.0; s_grid.len()];
    let (mut sw, mut sw1, mut sr) = (0.0, 0.0, 0.0);
    let max_cut = cuts.iter().copied().max().unwrap_or(0);
    let mut next = 0;
    for m in 0..=max_cut {
        while next < cuts.len() && cuts[next] == m {
            w[next] = sw;
            w1[next] = sw1;
            rr[next] = sr;
            next += 1;
        }
        if m == max_cut {
            break;
        }
        let wm = r.inv_g_grid[m].min(caps.inv_g_grid[a]) * r.lam_du[m];
        sw += wm;
        if r.surv_grid[m] >= 1e-12 {
            sw1 += wm;
            sr += wm / r.surv_grid[m];
        }
    }
    // Cuts are nondecreasing in s, but guard against any left unset.
    while next < cuts.len() {
        w[next] = sw;
        w1[next] = sw1;
        rr[next] = sr;
        next += 1;
    }
    let inv_g_y = r.inv_g_y.min(caps.inv_g_y[a]);
    let first_grid_cut = r.inv_g_grid.iter().position(|&v| v > caps.inv_g_grid[a]).unwrap_or(usize::MAX);
    let truncated_always = 1.0 / r.pi_own > caps.inv_pi[a] || r.inv_g_y > caps.inv_g_y[a];
    let truncated_at = (0..s_grid.len()).map(|j| first_grid_cut < cuts[j] || r.inv_g_s[j] > caps.inv_g_s[a][j]).collect();
    let cens_y = if r.event { 0.0 } else { inv_g_y };
    let times = s_grid
        .iter()
        .enumerate()
        .map(|(j, &s)| {
            let xi = r.event || r.y >= s;
            let ipcw = if !xi {
                0.0
            } else if r.y < s {
                inv_g_y
            } else {
                r.inv_g_s[j].min(caps.inv_g_s[a][j])
            };
            let h = ipcw + if r.y < s { cens_y } else { 0.0 } - w[j];
            TimeSummary { ipcw, h, w: w[j], w1: w1[j], r: rr[j] }
        })
        .collect();
    Subject {
        arm: r.arm,
        event: r.event,
        y: r.y,
        pi_own: r.pi_own,
        inv_pi: (1.0 / r.pi_own).min(caps.inv_pi[a]),
        f_s: r.f_s,
        surv_y: r.surv_y,
        cens_y,
        times,
        truncated_always,
        truncated_at,
    }
}

/// Induced survival of `Y(t)` among those who received `1 − t`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InducedRow {
    pub arm: Arm,
    pub s: f64,
    pub gamma: f64,
    pub marginal_surv: f64,
    pub same_arm_surv: f64,
    pub induced: InducedSurvival,
}

/// Full analysis output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Analysis {
    pub n: usize,
    pub estimates: Vec<PsiEstimate>,
    pub induced: Vec<InducedRow>,
    pub contour: Vec<DifferenceCell>,
    pub truncation: TruncationReport,
    pub propensity_clipped: usize,
    pub bandwidths: Vec<[f64; 4]>,
}

/// Cross-fit, sweep the `(arm, s, γ)` grid, and derive induced curves and
/// the survival-difference table.
pub fn analyze(
    records: &[SurvivalRecord],
    groups: &[ColumnGroup],
    cfg: &EstimatorConfig,
    s_grid: &[f64],
    gammas: [&[f64]; 2],
) -> Result<Analysis, SensitivityError> {
    let folds = assign_folds(records.len(), cfg.folds, cfg.seed)?;
    let cf = CrossFit::fit(records, groups, &folds, s_grid, cfg)?;
    let (estimates, influences) = cf.sweep(gammas)?;

    let mut induced = Vec::new();
    for e in &estimates {
        let j = s_grid.iter().position(|&s| s == e.s).unwrap();
        let same = cf.same_arm_survival(e.arm, j);
        let ind = induced_counterfactual_surv(1.0 - e.psi, same, cf.arm_frequency(e.arm))?;
        induced.push(InducedRow { arm: e.arm, s: e.s, gamma: e.gamma, marginal_surv: 1.0 - e.psi, same_arm_surv: same, induced: ind });
    }

    let ns = s_grid.len();
    let locate = |t: Arm, gi: usize, j: usize| {
        let offset = if t == Arm::Treated { gammas[0].len() * ns } else { 0 };
        offset + gi * ns + j
    };
    let mut contour = Vec::new();
    for (j, &s) in s_grid.iter().enumerate() {
        for (g1i, &g1) in gammas[1].iter().enumerate() {
            for (g0i, &g0) in gammas[0].iter().enumerate() {
                let c1 = locate(Arm::Treated, g1i, j);
                let c0 = locate(Arm::Control, g0i, j);
                contour.push(difference_cell(
                    s,
                    g1,
                    g0,
                    (&influences[c1], estimates[c1].psi),
                    (&influences[c0], estimates[c0].psi),
                ));
            }
        }
    }
    let bandwidths = cf
        .bundles
        .iter()
        .map(|b| [b.failure[0].bandwidth(), b.failure[1].bandwidth(), b.censoring[0].bandwidth(), b.censoring[1].bandwidth()])
        .collect();
    Ok(Analysis {
        n: records.len(),
        estimates,
        induced,
        contour,
        truncation: cf.truncation.clone(),
        propensity_clipped: cf.propensity_clipped(),
        bandwidths,
    })
}

/// Estimate a single `(arm, s, γ)` cell.
pub fn estimate_psi(
    records: &[SurvivalRecord],
    groups: &[ColumnGroup],
    cfg: &EstimatorConfig,
    s: f64,
    gamma: f64,
    arm: Arm,
) -> Result<PsiEstimate, SensitivityError> {
    let folds = assign_folds(records.len(), cfg.folds, cfg.seed)?;
    let cf = CrossFit::fit(records, groups, &folds, &[s], cfg)?;
    let mut gammas: [&[f64]; 2] = [&[], &[]];
    let g = [gamma];
    gammas[arm.index()] = &g;
    let (mut est, _) = cf.sweep(gammas)?;
    Ok(est.remove(0))
}
