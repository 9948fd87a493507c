//! Helpers shared by the integration tests: a generic quasi-Newton
//! maximizer and likelihoods written directly from their definitions.

#![allow(dead_code)]

use sensurv::data::{Arm, SurvivalRecord};

/// Central-difference gradient.
pub fn gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    (0..x.len())
        .map(|k| {
            let mut hi = x.to_vec();
            let mut lo = x.to_vec();
            hi[k] += step;
            lo[k] -= step;
            (f(&hi) - f(&lo)) / (2.0 * step)
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Maximize `f` by BFGS with finite-difference gradients and a
/// backtracking line search. Knows nothing about the objective's form.
pub fn maximize(f: impl Fn(&[f64]) -> f64, x0: Vec<f64>, grad_tol: f64) -> Vec<f64> {
    let neg = |x: &[f64]| -f(x);
    let p = x0.len();
    let mut x = x0;
    let mut h: Vec<Vec<f64>> = (0..p).map(|i| (0..p).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    let mut g = gradient(&neg, &x, 1e-6);
    for _ in 0..1000 {
        if g.iter().map(|v| v * v).sum::<f64>().sqrt() < grad_tol {
            break;
        }
        let d: Vec<f64> = (0..p).map(|i| -dot(&h[i], &g)).collect();
        let slope = dot(&g, &d);
        let fx = neg(&x);
        let mut t = 1.0;
        let mut next = x.clone();
        while t > 1e-16 {
            next = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            if neg(&next) <= fx + 1e-4 * t * slope {
                break;
            }
            t *= 0.5;
        }
        let g_next = gradient(&neg, &next, 1e-6);
        let s: Vec<f64> = next.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_next.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-300 {
            let hy: Vec<f64> = (0..p).map(|i| dot(&h[i], &y)).collect();
            let yhy = dot(&y, &hy);
            for i in 0..p {
                for j in 0..p {
                    h[i][j] += (sy + yhy) * s[i] * s[j] / (sy * sy) - (hy[i] * s[j] + s[i] * hy[j]) / sy;
                }
            }
        }
        if s.iter().all(|v| v.abs() < 1e-15) {
            break;
        }
        x = next;
        g = g_next;
    }
    x
}

/// Breslow log partial likelihood: each event contributes its linear
/// predictor minus the log of the risk-set sum, ties sharing one sum.
pub fn cox_loglik(records: &[SurvivalRecord], beta: &[f64]) -> f64 {
    let lp = |r: &SurvivalRecord| dot(&r.covariates, beta);
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| records[b].time.partial_cmp(&records[a].time).unwrap());
    let mut total = 0.0;
    let mut risk_sum = 0.0;
    let mut k = 0;
    while k < order.len() {
        let t = records[order[k]].time;
        let mut end = k;
        while end < order.len() && records[order[end]].time == t {
            risk_sum += lp(&records[order[end]]).exp();
            end += 1;
        }
        for &i in &order[k..end] {
            if records[i].event {
                total += lp(&records[i]) - risk_sum.ln();
            }
        }
        k = end;
    }
    total
}

/// Bernoulli log-likelihood of a logistic model with intercept.
pub fn logistic_loglik(x: &[Vec<f64>], treated: &[bool], coef: &[f64]) -> f64 {
    x.iter()
        .zip(treated)
        .map(|(row, &t)| {
            let eta = coef[0] + dot(&coef[1..], row);
            let log1p = if eta > 0.0 { eta + (-eta).exp().ln_1p() } else { eta.exp().ln_1p() };
            if t {
                eta - log1p
            } else {
                -log1p
            }
        })
        .sum()
}

pub fn record(x: Vec<f64>, arm: Arm, time: f64, event: bool) -> SurvivalRecord {
    SurvivalRecord { covariates: x, treatment: arm, time, event }
}

/// Write a simulated study as a CSV of design columns plus a matching
/// design specification. Returns `(csv, spec)` paths.
pub fn write_study(dir: &std::path::Path, n: usize, seed: u64) -> (std::path::PathBuf, std::path::PathBuf) {
    use sensurv::data::{CovariateSpec, DesignSpec, Encoding};
    use sensurv::sim::{generate_dataset, GeneratingMechanism, SyntheticParams};
    use std::fmt::Write;

    let mech = GeneratingMechanism::synthetic_prostate(&SyntheticParams { pool_size: 800, ..Default::default() }).unwrap();
    let data = generate_dataset(&mech, n, seed);
    let names: Vec<String> = (0..mech.column_names.len()).map(|j| format!("x{j}")).collect();
    let mut csv = format!("time,event,treatment,{}\n", names.join(","));
    for r in &data {
        let _ = write!(csv, "{},{},{}", r.time, u8::from(r.event), r.treatment.index());
        for v in &r.covariates {
            let _ = write!(csv, ",{v}");
        }
        csv.push('\n');
    }
    let spec = DesignSpec {
        time: "time".into(),
        event: "event".into(),
        treatment: "treatment".into(),
        covariates: names.iter().map(|n| CovariateSpec { name: n.clone(), encoding: Encoding::Identity }).collect(),
    };
    let csv_path = dir.join("d.csv");
    let spec_path = dir.join("spec.json");
    std::fs::write(&csv_path, csv).unwrap();
    std::fs::write(&spec_path, serde_json::to_string(&spec).unwrap()).unwrap();
    (csv_path, spec_path)
}
