//! Monte Carlo bias and coverage study.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mechanism::{generate_dataset, true_psi, GeneratingMechanism};
use super::SimError;
use crate::bootstrap::{derive_seed, fitted_mechanism, parametric_bootstrap, BootstrapPlan};
use crate::data::{assign_folds, Arm};
use crate::sensitivity::{CensoringSpec, CrossFit, EstimatorConfig, PsiEstimate, TreatmentSpec};
use crate::stats;

/// Study design. `gammas` are magnitudes: the treated arm is tilted by
/// `+|γ|` and the control arm by `−|γ|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimStudyConfig {
    pub gammas: Vec<f64>,
    pub sample_sizes: Vec<usize>,
    pub replicates: usize,
    pub s_points: Vec<f64>,
    pub seed: u64,
    /// Bootstrap replicates per simulated dataset; `None` skips bootstrap
    /// intervals.
    pub bootstrap: Option<usize>,
    /// Replace the estimator by the truth, as a check of the harness.
    pub oracle_self_test: bool,
    pub folds: usize,
    pub grid_size: usize,
    pub trunc_percentile: f64,
    /// Working censoring model; the covariate-free choice is misspecified
    /// under the synthetic mechanism.
    pub censoring: CensoringSpec,
    /// Working treatment model; a constant is misspecified likewise.
    pub treatment: TreatmentSpec,
}

impl Default for SimStudyConfig {
    fn default() -> Self {
        SimStudyConfig {
            gammas: vec![0.0, 1.0, 2.0, 3.0],
            sample_sizes: vec![1000, 3000, 5000],
            replicates: 200,
            s_points: vec![24.0, 60.0, 120.0],
            seed: 1,
            bootstrap: None,
            oracle_self_test: false,
            folds: 5,
            grid_size: 200,
            trunc_percentile: 0.995,
            censoring: CensoringSpec::Cox,
            treatment: TreatmentSpec::Gam,
        }
    }
}

impl SimStudyConfig {
    pub fn validate(&self, mech: &GeneratingMechanism) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        if self.replicates == 0 {
            return bad("replicate count must be positive");
        }
        if self.gammas.is_empty() || self.sample_sizes.is_empty() || self.s_points.is_empty() {
            return bad("gammas, sample sizes and evaluation times must be nonempty");
        }
        if self.gammas.iter().any(|g| !g.is_finite()) {
            return bad("gammas must be finite");
        }
        if self.s_points.windows(2).any(|w| w[0] >= w[1]) || self.s_points.iter().any(|&s| !(0.0..=mech.tau).contains(&s)) {
            return bad("evaluation times must be ascending within [0, tau]");
        }
        if self.sample_sizes.iter().any(|&n| n < 2 * self.folds) {
            return bad("each sample must hold at least two subjects per fold");
        }
        Ok(())
    }

    pub fn estimator(&self, mech: &GeneratingMechanism) -> EstimatorConfig {
        EstimatorConfig {
            folds: self.folds,
            grid_size: self.grid_size,
            tau: mech.tau,
            tau_dagger: mech.tau_dagger,
            trunc_percentile: self.trunc_percentile,
            censoring: self.censoring,
            treatment: self.treatment,
            ..EstimatorConfig::default()
        }
    }

    /// Signed gammas per arm.
    pub fn arm_gammas(&self) -> [Vec<f64>; 2] {
        [self.gammas.iter().map(|g| 0.0 - g.abs()).collect(), self.gammas.iter().map(|g| g.abs()).collect()]
    }
}

/// Summary of one `(n, arm, γ, s)` cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimCell {
    pub n: usize,
    pub arm: Arm,
    pub gamma: f64,
    pub s: f64,
    pub true_psi: f64,
    pub mean_psi: f64,
    /// `mean(ψ̂) − ψ`.
    pub bias: f64,
    /// Monte Carlo standard error of the bias.
    pub mc_se: f64,
    /// `None` when fewer than two replicates succeeded.
    pub wald_coverage: Option<f64>,
    pub boot_coverage: Option<f64>,
    pub replicates: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimStudyResult {
    pub cells: Vec<SimCell>,
}

impl SimStudyResult {
    pub fn cell(&self, n: usize, arm: Arm, gamma: f64, s: f64) -> Option<&SimCell> {
        self.cells.iter().find(|c| c.n == n && c.arm == arm && c.gamma == gamma && c.s == s)
    }
}

fn replicate(
    mech: &GeneratingMechanism,
    cfg: &SimStudyConfig,
    est_cfg: &EstimatorConfig,
    n: usize,
    seed: u64,
    gammas: [&[f64]; 2],
    truth: &[f64],
) -> Result<Vec<PsiEstimate>, String> {
    let data = generate_dataset(mech, n, seed);
    if cfg.oracle_self_test {
        let mut k = 0;
        let mut out = Vec::new();
        for arm in Arm::BOTH {
            for &gamma in gammas[arm.index()] {
                for &s in &cfg.s_points {
                    let psi = truth[k];
                    k += 1;
                    out.push(PsiEstimate {
                        arm,
                        s,
                        gamma,
                        psi,
                        psi_raw: psi,
                        sigma: 0.0,
                        sigma_boot: cfg.bootstrap.map(|_| 0.0),
                        ci_lo: psi,
                        ci_hi: psi,
                        boot_ci_lo: cfg.bootstrap.map(|_| psi),
                        boot_ci_hi: cfg.bootstrap.map(|_| psi),
                        n_truncated: 0,
                        clipped: false,
                        degenerate: true,
                    });
                }
            }
        }
        return Ok(out);
    }
    let est_cfg = EstimatorConfig { seed, ..est_cfg.clone() };
    let folds = assign_folds(n, est_cfg.folds, seed).map_err(|e| e.to_string())?;
    let cf = CrossFit::fit(&data, &mech.groups, &folds, &cfg.s_points, &est_cfg).map_err(|e| e.to_string())?;
    let (mut est, _) = cf.sweep(gammas).map_err(|e| e.to_string())?;
    if let Some(b) = cfg.bootstrap {
        let fitted = fitted_mechanism(&data, &mech.groups, &est_cfg).map_err(|e| e.to_string())?;
        let plan = BootstrapPlan::new(b, derive_seed(seed, u64::MAX)).map_err(|e| e.to_string())?;
        let boot = parametric_bootstrap(&fitted, n, &plan, &est_cfg, &cfg.s_points, gammas).map_err(|e| e.to_string())?;
        for (e, v) in est.iter_mut().zip(&boot.variance) {
            e.set_bootstrap(v.sqrt());
        }
    }
    Ok(est)
}

fn covers(lo: f64, hi: f64, truth: f64) -> bool {
    lo <= truth && truth <= hi
}

/// Run every `(n, replicate)` combination and summarise per cell.
/// Replicates run in parallel with seeds derived from `(seed, n, index)`.
pub fn run_study(mech: &GeneratingMechanism, cfg: &SimStudyConfig) -> Result<SimStudyResult, SimError> {
    cfg.validate(mech)?;
    let est_cfg = cfg.estimator(mech);
    let signed = cfg.arm_gammas();
    let gammas = [signed[0].as_slice(), signed[1].as_slice()];
    let mut keys = Vec::new();
    for arm in Arm::BOTH {
        for &g in gammas[arm.index()] {
            for &s in &cfg.s_points {
                keys.push((arm, g, s, true_psi(mech, arm, s, g)));
            }
        }
    }
    let truth: Vec<f64> = keys.iter().map(|k| k.3).collect();
    let mut cells = Vec::new();
    for &n in &cfg.sample_sizes {
        let base = derive_seed(cfg.seed, n as u64);
        let runs: Vec<Result<Vec<PsiEstimate>, String>> = (0..cfg.replicates)
            .into_par_iter()
            .map(|r| replicate(mech, cfg, &est_cfg, n, derive_seed(base, r as u64), gammas, &truth))
            .collect();
        let ok: Vec<&Vec<PsiEstimate>> = runs.iter().filter_map(|r| r.as_ref().ok()).collect();
        let failures = runs.len() - ok.len();
        for (k, &(arm, gamma, s, truth)) in keys.iter().enumerate() {
            let psis: Vec<f64> = ok.iter().map(|e| e[k].psi).collect();
            let r = psis.len();
            let mean_psi = if r > 0 { stats::mean(&psis) } else { f64::NAN };
            let mc_se = if r > 1 { stats::std_dev(&psis) / (r as f64).sqrt() } else { f64::NAN };
            let rate = |hit: &dyn Fn(&PsiEstimate) -> bool| {
                (r >= 2).then(|| ok.iter().filter(|e| hit(&e[k])).count() as f64 / r as f64)
            };
            let wald_coverage = rate(&|e| covers(e.ci_lo, e.ci_hi, truth));
            let boot_coverage = if cfg.bootstrap.is_some() {
                rate(&|e| matches!((e.boot_ci_lo, e.boot_ci_hi), (Some(lo), Some(hi)) if covers(lo, hi, truth)))
            } else {
                None
            };
            cells.push(SimCell {
                n,
                arm,
                gamma,
                s,
                true_psi: truth,
                mean_psi,
                bias: mean_psi - truth,
                mc_se,
                wald_coverage,
                boot_coverage,
                replicates: r,
                failures,
            });
        }
    }
    Ok(SimStudyResult { cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::SyntheticParams;

    fn mech() -> GeneratingMechanism {
        GeneratingMechanism::synthetic_prostate(&SyntheticParams { pool_size: 400, ..Default::default() }).unwrap()
    }

    fn small(replicates: usize) -> SimStudyConfig {
        SimStudyConfig {
            gammas: vec![0.0, 1.0],
            sample_sizes: vec![600],
            replicates,
            s_points: vec![24.0, 60.0],
            folds: 3,
            grid_size: 60,
            ..SimStudyConfig::default()
        }
    }

    #[test]
    fn oracle_self_test_has_no_bias_and_full_coverage() {
        let cfg = SimStudyConfig { oracle_self_test: true, bootstrap: Some(50), ..small(5) };
        let res = run_study(&mech(), &cfg).unwrap();
        assert_eq!(res.cells.len(), 2 * 2 * 2);
        for c in &res.cells {
            assert_eq!(c.bias, 0.0);
            assert_eq!(c.wald_coverage, Some(1.0));
            assert_eq!(c.boot_coverage, Some(1.0));
        }
    }

    #[test]
    fn single_replicate_has_no_coverage() {
        let res = run_study(&mech(), &small(1)).unwrap();
        assert!(res.cells.iter().all(|c| c.wald_coverage.is_none() && c.replicates + c.failures == 1));
    }

    #[test]
    fn control_arm_gets_negative_tilt() {
        let res = run_study(&mech(), &SimStudyConfig { oracle_self_test: true, ..small(2) }).unwrap();
        assert!(res.cell(600, Arm::Control, -1.0, 24.0).is_some());
        assert!(res.cell(600, Arm::Treated, 1.0, 60.0).is_some());
        let zero = res.cell(600, Arm::Control, 0.0, 24.0).unwrap();
        assert!(zero.gamma.is_sign_positive());
    }

    #[test]
    fn studies_are_reproducible() {
        let m = mech();
        let a = run_study(&m, &small(3)).unwrap();
        let b = run_study(&m, &small(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_designs() {
        let m = mech();
        for cfg in [
            SimStudyConfig { replicates: 0, ..small(1) },
            SimStudyConfig { s_points: vec![60.0, 24.0], ..small(1) },
            SimStudyConfig { s_points: vec![200.0], ..small(1) },
            SimStudyConfig { sample_sizes: vec![4], ..small(1) },
            SimStudyConfig { gammas: vec![], ..small(1) },
        ] {
            assert!(matches!(run_study(&m, &cfg), Err(SimError::InvalidConfig(_))));
        }
    }
}
