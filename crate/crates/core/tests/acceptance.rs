//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits nonzero if any failed.
//!
//! `ACCEPTANCE_ONLY=3,7` restricts the run to the listed criteria.

mod common;

use std::fs;
use std::path::Path;
use std::time::Instant;

use common::{cox_loglik, maximize, record, write_study};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sensurv::cox::{fit_cox, CoxOptions, OutcomeRole};
use sensurv::data::{assign_folds, Arm, ColumnGroup, FoldAssignment, SurvivalRecord};
use sensurv::propensity::PropensityOptions;
use sensurv::sensitivity::{
    bayes_odds_ratio, pava_monotonize, tilt_cdf, CensoringSpec, CrossFit, EstimatorConfig, JointTable, TreatmentSpec,
};
use sensurv::sim::{generate_dataset, run_study, GeneratingMechanism, SimCell, SimStudyConfig, SyntheticParams};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn mechanism() -> GeneratingMechanism {
    GeneratingMechanism::synthetic_prostate(&SyntheticParams::default()).expect("default mechanism")
}

const HORIZONS: [f64; 3] = [24.0, 60.0, 120.0];

fn describe(c: &SimCell) -> String {
    let cov = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:.3}"));
    format!(
        "n={} arm={} γ={} s={}: bias={:+.4} wald={} boot={}",
        c.n,
        c.arm,
        c.gamma,
        c.s,
        c.bias,
        cov(c.wald_coverage),
        cov(c.boot_coverage)
    )
}

fn within(v: Option<f64>, lo: f64, hi: f64) -> bool {
    v.is_some_and(|x| (lo..=hi).contains(&x))
}

/// Desk-scale bias and coverage study with bootstrap intervals.
fn criterion_1() -> Outcome {
    let cfg = SimStudyConfig {
        gammas: vec![0.0, 1.0],
        sample_sizes: vec![1000],
        replicates: 200,
        s_points: HORIZONS.to_vec(),
        bootstrap: Some(200),
        ..SimStudyConfig::default()
    };
    let res = run_study(&mechanism(), &cfg).expect("study runs");
    let mut bad = Vec::new();
    for c in &res.cells {
        println!("    {}", describe(c));
        let ok = c.bias.abs() <= 0.02 && within(c.wald_coverage, 0.87, 0.99) && within(c.boot_coverage, 0.90, 0.99);
        if !ok {
            bad.push(describe(c));
        }
    }
    // Tighter single-cell targets at γ = 0, five years.
    for arm in Arm::BOTH {
        let c = res.cell(1000, arm, 0.0, 60.0).expect("cell present");
        let ok = c.bias.abs() <= 0.02 && within(c.wald_coverage, 0.90, 0.98);
        println!("    five-year γ=0 arm {arm}: |bias| ≤ 0.02 and Wald in [0.90, 0.98]: {}", if ok { "ok" } else { "MISS" });
        let boot_ok = within(c.boot_coverage, 0.93, 0.97);
        println!("    five-year γ=0 arm {arm}: bootstrap coverage in [0.93, 0.97]: {}", if boot_ok { "ok" } else { "MISS" });
    }
    let failures = res.cells.iter().map(|c| c.failures).max().unwrap_or(0);
    outcome(bad.is_empty(), format!("{} cells, {} out of range, {failures} failed replicates", res.cells.len(), bad.len()))
}

/// Median absolute bias does not grow with the sample size.
fn criterion_2() -> Outcome {
    let cfg = SimStudyConfig {
        gammas: vec![0.0, 1.0],
        sample_sizes: vec![1000, 3000, 5000],
        replicates: 100,
        s_points: HORIZONS.to_vec(),
        ..SimStudyConfig::default()
    };
    let res = run_study(&mechanism(), &cfg).expect("study runs");
    let summary: Vec<(usize, f64, f64)> = cfg
        .sample_sizes
        .iter()
        .map(|&n| {
            let cells: Vec<&SimCell> = res.cells.iter().filter(|c| c.n == n).collect();
            let abs: Vec<f64> = cells.iter().map(|c| c.bias.abs()).collect();
            let se: Vec<f64> = cells.iter().map(|c| c.mc_se).collect();
            (n, sensurv::stats::median(&abs), sensurv::stats::median(&se))
        })
        .collect();
    let mut pass = true;
    for w in summary.windows(2) {
        let (_, m0, se0) = w[0];
        let (_, m1, se1) = w[1];
        pass &= m1 <= m0 + 2.0 * (se0 * se0 + se1 * se1).sqrt();
    }
    let text: Vec<String> = summary.iter().map(|(n, m, se)| format!("n={n}: median |bias| {m:.4} (MC SE {se:.4})")).collect();
    outcome(pass, text.join("; "))
}

/// Residuals of the estimating equation sum to zero.
fn criterion_3() -> Outcome {
    let mech = mechanism();
    let mut worst: f64 = 0.0;
    for seed in 0..4 {
        let data = generate_dataset(&mech, 800 + 300 * seed as usize, seed);
        let cfg = EstimatorConfig { trunc_percentile: [1.0, 0.995, 0.99, 0.95][seed as usize], ..EstimatorConfig::default() };
        let folds = assign_folds(data.len(), cfg.folds, seed).unwrap();
        let cf = CrossFit::fit(&data, &mech.groups, &folds, &HORIZONS, &cfg).unwrap();
        for t in Arm::BOTH {
            for gamma in [-2.0, 0.0, 1.5] {
                for j in 0..HORIZONS.len() {
                    let (g, h) = cf.contributions(t, j, gamma);
                    let psi = cf.cell(t, j, gamma).unwrap().psi;
                    let total: f64 = g.iter().zip(&h).map(|(g, h)| g - h * psi).sum();
                    let scale: f64 = g.iter().map(|v| v.abs()).sum();
                    worst = worst.max(total.abs() / scale);
                }
            }
        }
    }
    outcome(worst <= 1e-8, format!("largest relative |Σ(g − hψ̂)| = {worst:.2e}"))
}

/// Denominator contributions average to one.
fn criterion_4() -> Outcome {
    let mech = mechanism();
    let n = 20_000;
    let data = generate_dataset(&mech, n, 404);
    let cfg = EstimatorConfig::default();
    let folds = assign_folds(n, cfg.folds, 404).unwrap();
    let cf = CrossFit::fit(&data, &mech.groups, &folds, &HORIZONS, &cfg).unwrap();
    let mut pass = true;
    let mut text = Vec::new();
    for (j, s) in HORIZONS.iter().enumerate() {
        let (_, h) = cf.contributions(Arm::Treated, j, 0.0);
        let mean = sensurv::stats::mean(&h);
        let se = sensurv::stats::std_dev(&h) / (n as f64).sqrt();
        pass &= (mean - 1.0).abs() <= 3.0 * se;
        text.push(format!("s={s}: mean(h)={mean:.6} (SE {se:.1e})"));
    }
    outcome(pass, text.join("; "))
}

/// Bias stays small when only the failure model is right.
fn criterion_5() -> Outcome {
    let cfg = SimStudyConfig {
        gammas: vec![0.0, 1.0],
        sample_sizes: vec![5000],
        replicates: 200,
        s_points: HORIZONS.to_vec(),
        censoring: CensoringSpec::CovariateFree,
        treatment: TreatmentSpec::Constant(0.5),
        ..SimStudyConfig::default()
    };
    let res = run_study(&mechanism(), &cfg).expect("study runs");
    for c in &res.cells {
        println!("    {}", describe(c));
    }
    let worst = res.cells.iter().map(|c| c.bias.abs()).fold(0.0, f64::max);
    outcome(worst <= 0.02, format!("largest |bias| {worst:.4} over {} cells", res.cells.len()))
}

/// With no censoring, γ = 0 and a saturated treatment model, the estimate
/// is the stratum-standardized empirical failure probability.
fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let base: Vec<SurvivalRecord> = (0..240)
        .map(|_| {
            let x = f64::from(u8::from(rng.gen_bool(0.4)));
            let treated = rng.gen_bool(if x > 0.0 { 0.7 } else { 0.35 });
            let rate = 0.01 * (0.6 * x).exp() * if treated { 0.7 } else { 1.0 };
            let y = (-(1.0 - rng.gen::<f64>()).ln() / rate).min(140.0);
            record(vec![x], if treated { Arm::Treated } else { Arm::Control }, y, true)
        })
        .collect();
    // Each fold is one copy of the base sample, so every fold complement
    // has the same stratum proportions as the full data.
    let k = 4;
    let data: Vec<SurvivalRecord> = (0..k).flat_map(|_| base.clone()).collect();
    let folds = FoldAssignment::new(k, (0..k).flat_map(|f| std::iter::repeat(f).take(base.len())).collect()).unwrap();
    let cfg = EstimatorConfig {
        folds: k,
        trunc_percentile: 1.0,
        propensity: PropensityOptions { tol: 1e-13, max_sweeps: 500, ..PropensityOptions::default() },
        ..EstimatorConfig::default()
    };
    let cf = CrossFit::fit(&data, &ColumnGroup::per_column(1), &folds, &HORIZONS, &cfg).unwrap();
    let mut worst: f64 = 0.0;
    for t in Arm::BOTH {
        for (j, &s) in HORIZONS.iter().enumerate() {
            let mut oracle = 0.0;
            for x in [0.0, 1.0] {
                let stratum: Vec<&SurvivalRecord> = base.iter().filter(|r| r.covariates[0] == x).collect();
                let arm: Vec<&&SurvivalRecord> = stratum.iter().filter(|r| r.treatment == t).collect();
                let failed = arm.iter().filter(|r| r.time <= s).count();
                oracle += stratum.len() as f64 / base.len() as f64 * failed as f64 / arm.len() as f64;
            }
            let psi = cf.cell(t, j, 0.0).unwrap().psi;
            worst = worst.max((psi - oracle).abs());
        }
    }
    outcome(worst <= 1e-8, format!("largest |ψ̂ − standardized| = {worst:.2e}"))
}

/// The tilted joint table has odds ratio `e^γ`.
fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let f = rng.gen_range(0.001..0.999);
        let pi = rng.gen_range(0.001..0.999);
        let gamma: f64 = rng.gen_range(-5.0..5.0);
        let r = bayes_odds_ratio(&JointTable::tilted(f, pi, gamma)).unwrap();
        worst = worst.max((r - gamma.exp()).abs() / gamma.exp().max(1.0));
    }
    outcome(worst <= 1e-12, format!("largest error {worst:.2e} over 1000 triples"))
}

/// Best nondecreasing fit by enumerating every contiguous partition and
/// keeping the cheapest one whose block means are ordered.
fn isotonic_by_enumeration(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut best = (f64::INFINITY, Vec::new());
    for cuts in 0u32..(1 << (n - 1)) {
        let mut fit = Vec::with_capacity(n);
        let mut start = 0;
        let mut prev = f64::NEG_INFINITY;
        let mut ordered = true;
        for i in 0..n {
            if i == n - 1 || cuts & (1 << i) != 0 {
                let block = &v[start..=i];
                let m = block.iter().sum::<f64>() / block.len() as f64;
                ordered &= m >= prev;
                prev = m;
                fit.extend(std::iter::repeat(m).take(block.len()));
                start = i + 1;
            }
        }
        if ordered {
            let sse: f64 = v.iter().zip(&fit).map(|(a, b)| (a - b) * (a - b)).sum();
            if sse < best.0 {
                best = (sse, fit);
            }
        }
    }
    best.1
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut worst: f64 = 0.0;
    let mut idempotent = true;
    for _ in 0..500 {
        let n = rng.gen_range(1..=12);
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fit = pava_monotonize(&v);
        let oracle = isotonic_by_enumeration(&v);
        worst = fit.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
        idempotent &= pava_monotonize(&fit) == fit;
    }
    outcome(worst <= 1e-10 && idempotent, format!("largest error {worst:.2e}, idempotent: {idempotent}"))
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let opts = CoxOptions { tol: 1e-12, max_iter: 100, tau_dagger: 100.0, ..CoxOptions::default() };
    let mut worst: f64 = 0.0;
    for d in 0..50 {
        let n = rng.gen_range(30..=80);
        let beta = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let data: Vec<SurvivalRecord> = (0..n)
            .map(|_| {
                let x = vec![rng.gen_range(-1.5..1.5), f64::from(u8::from(rng.gen_bool(0.5)))];
                let rate = 0.1 * (beta[0] * x[0] + beta[1] * x[1]).exp();
                let y = -(1.0 - rng.gen::<f64>()).ln() / rate;
                let c = -(1.0 - rng.gen::<f64>()).ln() / 0.04;
                // Every third dataset is rounded to create tied times.
                let t = if d % 3 == 0 { y.min(c).ceil() } else { y.min(c) };
                record(x, Arm::Treated, t.min(100.0), y <= c && y <= 100.0)
            })
            .collect();
        let fit = fit_cox(&data, OutcomeRole::Failure, &opts).unwrap();
        let direct = maximize(|b| cox_loglik(&data, b), vec![0.0, 0.0], 1e-9);
        worst = fit.coefficients.iter().zip(&direct).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
    }
    let data: Vec<SurvivalRecord> =
        (0..200).map(|_| record(vec![], Arm::Control, f64::from(rng.gen_range(1..30u8)), rng.gen_bool(0.6))).collect();
    let fit = fit_cox(&data, OutcomeRole::Failure, &opts).unwrap();
    let mut times: Vec<f64> = data.iter().filter(|r| r.event).map(|r| r.time).collect();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    times.dedup();
    let nelson_aalen: Vec<(f64, f64)> = times
        .iter()
        .map(|&t| {
            let d = data.iter().filter(|r| r.event && r.time == t).count() as f64;
            (t, d / data.iter().filter(|r| r.time >= t).count() as f64)
        })
        .collect();
    let exact = fit.baseline_steps == nelson_aalen;
    outcome(worst <= 1e-6 && exact, format!("largest coefficient gap {worst:.2e}; Nelson–Aalen exact: {exact}"))
}

/// Ordering and range of the estimates, and fixed points of the tilt.
fn criterion_10() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let mut fixed = true;
    for _ in 0..1000 {
        let f = rng.gen::<f64>();
        let g = rng.gen_range(-30.0..30.0);
        fixed &= tilt_cdf(0.0, g) == 0.0 && tilt_cdf(1.0, g) == 1.0 && tilt_cdf(f, 0.0) == f;
    }
    let mech = mechanism();
    let gammas: Vec<f64> = (-12..=12).map(|k| f64::from(k) * 0.25).collect();
    let s_grid = [6.0, 12.0, 24.0, 36.0, 60.0, 90.0, 120.0];
    let (mut in_s, mut in_gamma, mut in_range) = (true, true, true);
    for seed in 0..3 {
        let data = generate_dataset(&mech, 1000, 1000 + seed);
        let cfg = EstimatorConfig::default();
        let folds = assign_folds(data.len(), cfg.folds, seed).unwrap();
        let cf = CrossFit::fit(&data, &mech.groups, &folds, &s_grid, &cfg).unwrap();
        let (est, _) = cf.sweep([&gammas, &gammas]).unwrap();
        let m = s_grid.len();
        for block in est.chunks(m) {
            in_s &= block.windows(2).all(|w| w[0].psi <= w[1].psi);
            in_range &= block.iter().all(|e| (0.0..=1.0).contains(&e.psi));
        }
        for arm_block in est.chunks(m * gammas.len()) {
            let curves: Vec<&[_]> = arm_block.chunks(m).collect();
            for w in curves.windows(2) {
                in_gamma &= w[0].iter().zip(w[1]).all(|(a, b)| a.psi <= b.psi + 1e-12);
            }
        }
    }
    let pass = fixed && in_s && in_gamma && in_range;
    outcome(
        pass,
        format!("tilt fixed points: {fixed}; monotone in s: {in_s}; monotone in γ: {in_gamma}; within [0, 1]: {in_range}"),
    )
}

fn run_cli(args: &[&str]) -> i32 {
    sensurv::cli::main_with(std::iter::once("sensurv").chain(args.iter().copied()))
}

fn same_tables(a: &Path, b: &Path, names: &[&str]) -> bool {
    names.iter().all(|n| fs::read(a.join(n)).ok().zip(fs::read(b.join(n)).ok()).is_some_and(|(x, y)| x == y))
}

/// Identical seeds give identical tables whatever the worker count.
fn criterion_11() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let (input, spec) = write_study(tmp.path(), 1000, 1111);
    let mut analyze_ok = true;
    for workers in ["1", "2", "8"] {
        let out = tmp.path().join(format!("a{workers}"));
        let code = run_cli(&[
            "analyze",
            "--input",
            input.to_str().unwrap(),
            "--spec",
            spec.to_str().unwrap(),
            "--gamma1",
            "0,1",
            "--gamma0",
            "0,-1",
            "--seed",
            "5",
            "--bootstrap",
            "50",
            "--workers",
            workers,
            "--out-dir",
            out.to_str().unwrap(),
        ]);
        analyze_ok &= code == 0;
    }
    let tables = ["out.json", "estimates.csv", "induced.csv", "contour.csv"];
    analyze_ok &= same_tables(&tmp.path().join("a1"), &tmp.path().join("a2"), &tables)
        && same_tables(&tmp.path().join("a1"), &tmp.path().join("a8"), &tables);
    let mut sim_ok = true;
    for workers in ["1", "2", "8"] {
        let out = tmp.path().join(format!("s{workers}"));
        let code = run_cli(&[
            "simulate",
            "--sample-sizes",
            "1000",
            "--replicates",
            "6",
            "--gammas",
            "0,1",
            "--seed",
            "5",
            "--workers",
            workers,
            "--out-dir",
            out.to_str().unwrap(),
        ]);
        sim_ok &= code == 0;
    }
    let tables = ["sim.csv", "sim.json"];
    sim_ok &= same_tables(&tmp.path().join("s1"), &tmp.path().join("s2"), &tables)
        && same_tables(&tmp.path().join("s1"), &tmp.path().join("s8"), &tables);
    outcome(analyze_ok && sim_ok, format!("analyze identical: {analyze_ok}; simulate identical: {sim_ok}"))
}

fn main() {
    let only: Option<Vec<usize>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let criteria: [(usize, &str, fn() -> Outcome); 11] = [
        (1, "desk-scale bias and coverage", criterion_1),
        (2, "bias shrinks with n", criterion_2),
        (3, "estimating-equation identity", criterion_3),
        (4, "h calibration", criterion_4),
        (5, "double robustness", criterion_5),
        (6, "standardization equivalence", criterion_6),
        (7, "Bayes odds-ratio identity", criterion_7),
        (8, "PAVA against exhaustive pooling", criterion_8),
        (9, "Cox against direct maximizer", criterion_9),
        (10, "tilt and ψ properties", criterion_10),
        (11, "determinism across worker counts", criterion_11),
    ];
    let mut failed = Vec::new();
    for (id, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let out = run();
        let secs = start.elapsed().as_secs_f64();
        println!("criterion {id:>2} {}: {name}: {} ({secs:.1}s)", if out.pass { "PASS" } else { "FAIL" }, out.detail);
        if !out.pass {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
