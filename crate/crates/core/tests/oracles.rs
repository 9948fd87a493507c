//! Nuisance fits and the estimator checked against independent routes.

mod common;

use common::{cox_loglik, logistic_loglik, maximize, record};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sensurv::cox::{fit_cox, CoxOptions, OutcomeRole};
use sensurv::data::{assign_folds, Arm, ColumnGroup, SurvivalRecord};
use sensurv::propensity::{fit_propensity, PropensityOptions};
use sensurv::sensitivity::{CrossFit, EstimatorConfig};
use sensurv::sim::{generate_dataset, true_psi, GeneratingMechanism, SyntheticParams};

fn exp_draw(rng: &mut ChaCha8Rng, rate: f64) -> f64 {
    -(1.0 - rng.gen::<f64>()).ln() / rate
}

fn opts(tau_dagger: f64) -> CoxOptions {
    CoxOptions { tau_dagger, tol: 1e-12, max_iter: 50, ..CoxOptions::default() }
}

#[test]
fn cox_binary_effect_matches_direct_maximizer() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let data: Vec<SurvivalRecord> = (0..5000)
        .map(|_| {
            let x = f64::from(u8::from(rng.gen::<bool>()));
            let y = exp_draw(&mut rng, 0.1 * (0.7 * x).exp());
            let c = exp_draw(&mut rng, 0.05);
            record(vec![x], Arm::Control, y.min(c).min(100.0), y <= c.min(100.0))
        })
        .collect();
    let fit = fit_cox(&data, OutcomeRole::Failure, &opts(100.0)).unwrap();
    let beta = maximize(|b| cox_loglik(&data, b), vec![0.0], 1e-7)[0];
    assert!((fit.coefficients[0] - beta).abs() < 1e-6, "{} vs {beta}", fit.coefficients[0]);
    let h = 1e-4;
    let curv = (cox_loglik(&data, &[beta + h]) - 2.0 * cox_loglik(&data, &[beta]) + cox_loglik(&data, &[beta - h])) / (h * h);
    let se = (-1.0 / curv).sqrt();
    assert!((beta - 0.7).abs() < 3.0 * se, "{beta} ± {se}");
}

#[test]
fn breslow_without_covariates_is_nelson_aalen() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    // Integer times force ties.
    let data: Vec<SurvivalRecord> =
        (0..300).map(|_| record(vec![], Arm::Treated, f64::from(rng.gen_range(1..40u8)), rng.gen_bool(0.7))).collect();
    let fit = fit_cox(&data, OutcomeRole::Failure, &opts(50.0)).unwrap();
    let mut times: Vec<f64> = data.iter().filter(|r| r.event).map(|r| r.time).collect();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    times.dedup();
    let expected: Vec<(f64, f64)> = times
        .iter()
        .map(|&t| {
            let d = data.iter().filter(|r| r.event && r.time == t).count();
            let at_risk = data.iter().filter(|r| r.time >= t).count();
            (t, d as f64 / at_risk as f64)
        })
        .collect();
    assert_eq!(fit.baseline_steps, expected);
}

#[test]
fn smoothed_cdf_recovers_exponential() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let data: Vec<SurvivalRecord> =
        (0..10_000).map(|_| record(vec![], Arm::Treated, exp_draw(&mut rng, 0.1), true).truncated(50.0)).collect();
    let fit = fit_cox(&data, OutcomeRole::Failure, &opts(50.0)).unwrap();
    let f = fit.predict_cdf(5.0, &[]).unwrap();
    assert!((f - (1.0 - (-0.5f64).exp())).abs() < 0.02, "{f}");
}

#[test]
fn logistic_linear_matches_direct_maximizer() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let x: Vec<Vec<f64>> = (0..2000).map(|_| vec![rng.gen::<f64>() * 4.0 - 2.0]).collect();
    let treated: Vec<bool> = x.iter().map(|r| rng.gen::<f64>() < 1.0 / (1.0 + (0.3 - 0.8 * r[0]).exp())).collect();
    let rows: Vec<&[f64]> = x.iter().map(|r| r.as_slice()).collect();
    let opts = PropensityOptions { tol: 1e-12, max_sweeps: 500, ..PropensityOptions::default() };
    let fit = fit_propensity(&rows, &treated, &ColumnGroup::per_column(1), &opts).unwrap();
    let coef = maximize(|c| logistic_loglik(&x, &treated, c), vec![0.0, 0.0], 1e-8);
    for r in &x {
        let p_oracle = 1.0 / (1.0 + (-(coef[0] + coef[1] * r[0])).exp());
        let p = fit.predict(r, Arm::Treated).unwrap();
        assert!((p - p_oracle).abs() < 1e-6, "{p} vs {p_oracle}");
    }
}

#[test]
fn residuals_at_truth_have_mean_zero() {
    let mech = GeneratingMechanism::synthetic_prostate(&SyntheticParams::default()).unwrap();
    let n = 20_000;
    let data = generate_dataset(&mech, n, 15);
    let cfg = EstimatorConfig::default();
    let folds = assign_folds(n, cfg.folds, 15).unwrap();
    let s = [60.0];
    let cf = CrossFit::fit(&data, &mech.groups, &folds, &s, &cfg).unwrap();
    for (t, gamma) in [(Arm::Treated, 1.0), (Arm::Control, -1.0)] {
        let truth = true_psi(&mech, t, s[0], gamma);
        let (g, h) = cf.contributions(t, 0, gamma);
        let d: Vec<f64> = g.iter().zip(&h).map(|(g, h)| g - h * truth).collect();
        let mean = d.iter().sum::<f64>() / n as f64;
        let sd = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        let se = sd / (n as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "{t:?}: mean {mean}, se {se}");
    }
}
