//! Additive logistic model for the treatment probability, fitted by local
//! scoring: each IRLS step backfits the working response over covariate
//! components, with penalised natural-spline smoothers for spline groups.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Arm, ColumnGroup, SurvivalRecord};
use crate::spline::curvature_penalty;
use crate::stats::{logit, sigmoid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PropensityError {
    #[error("only one treatment arm is present")]
    SingleArm,
    #[error("backfitting did not converge in {sweeps} sweeps (last change {change:e})")]
    Nonconvergence { sweeps: usize, change: f64 },
    #[error("design row has {got} columns, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityOptions {
    pub max_sweeps: usize,
    /// Convergence threshold on the largest change of the additive predictor.
    pub tol: f64,
    /// Predictions are clipped to `[floor, 1 - floor]`.
    pub floor: f64,
    /// Multiplier of the curvature penalty on spline components.
    pub penalty: f64,
}

impl Default for PropensityOptions {
    fn default() -> Self {
        PropensityOptions { max_sweeps: 100, tol: 1e-6, floor: 0.01, penalty: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub name: String,
    pub start: usize,
    pub len: usize,
    pub smooth: bool,
    /// Column means removed before fitting.
    pub center: Vec<f64>,
    pub coefficients: Vec<f64>,
}

impl Component {
    #[inline]
    fn eval(&self, x: &[f64]) -> f64 {
        let cols = &x[self.start..self.start + self.len];
        cols.iter().zip(&self.center).zip(&self.coefficients).map(|((v, c), b)| (v - c) * b).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityFit {
    pub intercept: f64,
    pub components: Vec<Component>,
    pub width: usize,
    pub floor: f64,
    pub sweeps: usize,
    pub final_change: f64,
    /// Log-likelihood after each accepted sweep.
    pub loglik_trace: Vec<f64>,
    /// Fit stopped because fitted probabilities sat beyond the clip bounds.
    pub separated: bool,
}

impl PropensityFit {
    /// Unclipped additive predictor.
    pub fn linear_predictor(&self, x: &[f64]) -> Result<f64, PropensityError> {
        if x.len() != self.width {
            return Err(PropensityError::DimensionMismatch { expected: self.width, got: x.len() });
        }
        Ok(self.intercept + self.components.iter().map(|c| c.eval(x)).sum::<f64>())
    }

    /// `π̂_arm(x)` clipped to `[ε, 1 − ε]`; the two arms sum to one.
    pub fn predict(&self, x: &[f64], arm: Arm) -> Result<f64, PropensityError> {
        let p1 = sigmoid(self.linear_predictor(x)?).clamp(self.floor, 1.0 - self.floor);
        Ok(match arm {
            Arm::Treated => p1,
            Arm::Control => 1.0 - p1,
        })
    }
}

/// Treatment model used by the estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreatmentModel {
    Gam(PropensityFit),
    /// `P[T = 1] = p` regardless of covariates.
    Constant { p: f64, floor: f64 },
}

impl TreatmentModel {
    pub fn predict(&self, x: &[f64], arm: Arm) -> Result<f64, PropensityError> {
        match self {
            TreatmentModel::Gam(fit) => fit.predict(x, arm),
            TreatmentModel::Constant { p, floor } => {
                let p1 = p.clamp(*floor, 1.0 - floor);
                Ok(if arm == Arm::Treated { p1 } else { 1.0 - p1 })
            }
        }
    }
}

struct Group {
    start: usize,
    len: usize,
    smooth: bool,
    /// Centred columns, row-major `n × len`.
    x: Vec<f64>,
    center: Vec<f64>,
    penalty: Option<DMatrix<f64>>,
    beta: Vec<f64>,
    fitted: Vec<f64>,
}

impl Group {
    fn refresh_fitted(&mut self) {
        let l = self.len;
        for (i, f) in self.fitted.iter_mut().enumerate() {
            *f = self.x[i * l..(i + 1) * l].iter().zip(&self.beta).map(|(a, b)| a * b).sum();
        }
    }
}

fn loglik(y: &[bool], eta: &[f64]) -> f64 {
    y.iter()
        .zip(eta)
        .map(|(&yi, &e)| {
            // log(1 + e^η) computed stably
            let softplus = if e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
            if yi {
                e - softplus
            } else {
                -softplus
            }
        })
        .sum()
}

fn chol_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    if let Some(ch) = a.clone().cholesky() {
        return ch.solve(b);
    }
    let p = a.nrows();
    let scale = (0..p).map(|j| a[(j, j)].abs()).fold(1e-12, f64::max);
    let mut ridge = 1e-10 * scale;
    loop {
        if let Some(ch) = (a + DMatrix::identity(p, p) * ridge).cholesky() {
            return ch.solve(b);
        }
        ridge *= 10.0;
    }
}

const INNER_TOL: f64 = 1e-11;
const INNER_MAX: usize = 500;
const WEIGHT_FLOOR: f64 = 1e-10;

/// Fit the additive logistic model to design rows `x` and treatment
/// indicators `treated`, with components given by `groups`.
pub fn fit_propensity(
    x: &[&[f64]],
    treated: &[bool],
    groups: &[ColumnGroup],
    opts: &PropensityOptions,
) -> Result<PropensityFit, PropensityError> {
    let n = x.len();
    let n1 = treated.iter().filter(|&&t| t).count();
    if n1 == 0 || n1 == n {
        return Err(PropensityError::SingleArm);
    }
    let width = x[0].len();
    if let Some(r) = x.iter().find(|r| r.len() != width) {
        return Err(PropensityError::DimensionMismatch { expected: width, got: r.len() });
    }
    if let Some(g) = groups.iter().find(|g| g.start + g.len > width) {
        return Err(PropensityError::DimensionMismatch { expected: width, got: g.start + g.len });
    }

    let mut comps: Vec<Group> = groups
        .iter()
        .filter(|g| g.len > 0)
        .map(|g| {
            let mut center = vec![0.0; g.len];
            for row in x {
                for (c, v) in center.iter_mut().zip(&row[g.start..g.start + g.len]) {
                    *c += v;
                }
            }
            center.iter_mut().for_each(|c| *c /= n as f64);
            let mut cols = Vec::with_capacity(n * g.len);
            for row in x {
                cols.extend(row[g.start..g.start + g.len].iter().zip(&center).map(|(v, c)| v - c));
            }
            let penalty = match &g.scaled_knots {
                Some(k) if opts.penalty > 0.0 && k.len() == g.len + 1 => curvature_penalty(k)
                    .ok()
                    .map(|om| DMatrix::from_fn(g.len, g.len, |i, j| opts.penalty * om[i][j])),
                _ => None,
            };
            Group {
                start: g.start,
                len: g.len,
                smooth: g.scaled_knots.is_some(),
                x: cols,
                center,
                penalty,
                beta: vec![0.0; g.len],
                fitted: vec![0.0; n],
            }
        })
        .collect();

    let ybar = n1 as f64 / n as f64;
    let mut intercept = logit(ybar);
    let mut eta = vec![intercept; n];
    let mut ll = loglik(treated, &eta);
    let mut trace = vec![ll];
    let floor_eta = logit(1.0 - opts.floor);
    let clip = |e: f64| sigmoid(e).clamp(opts.floor, 1.0 - opts.floor);

    let mut sweeps = 0;
    let mut change = f64::INFINITY;
    let mut separated = false;
    while sweeps < opts.max_sweeps {
        sweeps += 1;
        let mu: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
        let w: Vec<f64> = mu.iter().map(|m| (m * (1.0 - m)).max(WEIGHT_FLOOR)).collect();
        let z: Vec<f64> = (0..n)
            .map(|i| eta[i] + ((if treated[i] { 1.0 } else { 0.0 }) - mu[i]) / w[i])
            .collect();
        let wsum: f64 = w.iter().sum();

        // Per-component weighted Gram matrices are fixed within a sweep.
        let systems: Vec<DMatrix<f64>> = comps
            .iter()
            .map(|g| {
                let l = g.len;
                let mut a = DMatrix::zeros(l, l);
                for i in 0..n {
                    let r = &g.x[i * l..(i + 1) * l];
                    for j in 0..l {
                        let wr = w[i] * r[j];
                        for k in 0..=j {
                            a[(j, k)] += wr * r[k];
                        }
                    }
                }
                for j in 0..l {
                    for k in 0..j {
                        a[(k, j)] = a[(j, k)];
                    }
                }
                if let Some(p) = &g.penalty {
                    a += p;
                }
                a
            })
            .collect();

        let old_beta: Vec<Vec<f64>> = comps.iter().map(|g| g.beta.clone()).collect();
        let old_intercept = intercept;
        let mut total: Vec<f64> = (0..n).map(|i| comps.iter().map(|g| g.fitted[i]).sum()).collect();
        let mut a0 = intercept;
        for _ in 0..INNER_MAX {
            let mut delta: f64 = 0.0;
            let new_a0 = (0..n).map(|i| w[i] * (z[i] - total[i])).sum::<f64>() / wsum;
            delta = delta.max((new_a0 - a0).abs());
            a0 = new_a0;
            for (g, sys) in comps.iter_mut().zip(&systems) {
                let l = g.len;
                let mut rhs = DVector::zeros(l);
                for i in 0..n {
                    let r = z[i] - a0 - (total[i] - g.fitted[i]);
                    let wr = w[i] * r;
                    let row = &g.x[i * l..(i + 1) * l];
                    for j in 0..l {
                        rhs[j] += wr * row[j];
                    }
                }
                let beta = chol_solve(sys, &rhs);
                g.beta = beta.iter().copied().collect();
                for i in 0..n {
                    let f: f64 = g.x[i * l..(i + 1) * l].iter().zip(&g.beta).map(|(a, b)| a * b).sum();
                    delta = delta.max((f - g.fitted[i]).abs());
                    total[i] += f - g.fitted[i];
                    g.fitted[i] = f;
                }
            }
            if delta < INNER_TOL * (1.0 + a0.abs()) {
                break;
            }
        }

        let proposal: Vec<f64> = (0..n).map(|i| a0 + total[i]).collect();
        let new_beta: Vec<Vec<f64>> = comps.iter().map(|g| g.beta.clone()).collect();
        let mut step = 1.0;
        let (new_eta, new_ll) = loop {
            let cand: Vec<f64> = (0..n).map(|i| eta[i] + step * (proposal[i] - eta[i])).collect();
            let cl = loglik(treated, &cand);
            if cl >= ll - 1e-12 * ll.abs() || step < 1e-6 {
                break (cand, cl);
            }
            step *= 0.5;
        };
        intercept = old_intercept + step * (a0 - old_intercept);
        for ((g, ob), nb) in comps.iter_mut().zip(&old_beta).zip(&new_beta) {
            g.beta = ob.iter().zip(nb).map(|(o, b)| o + step * (b - o)).collect();
            g.refresh_fitted();
        }

        change = eta.iter().zip(&new_eta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let clipped_change =
            eta.iter().zip(&new_eta).map(|(&a, &b)| (clip(a) - clip(b)).abs()).fold(0.0, f64::max);
        eta = new_eta;
        ll = new_ll.max(ll);
        trace.push(new_ll);
        if change < opts.tol {
            break;
        }
        if clipped_change < 1e-10 && eta.iter().any(|e| e.abs() > floor_eta) {
            separated = true;
            break;
        }
    }
    if !(change < opts.tol || separated) {
        return Err(PropensityError::Nonconvergence { sweeps, change });
    }

    Ok(PropensityFit {
        intercept,
        components: comps
            .into_iter()
            .zip(groups.iter().filter(|g| g.len > 0))
            .map(|(g, spec)| Component {
                name: spec.name.clone(),
                start: g.start,
                len: g.len,
                smooth: g.smooth,
                center: g.center,
                coefficients: g.beta,
            })
            .collect(),
        width,
        floor: opts.floor,
        sweeps,
        final_change: change,
        loglik_trace: trace,
        separated,
    })
}

/// Fit to `records[idx]` using their treatment labels.
pub fn fit_propensity_records(
    records: &[SurvivalRecord],
    idx: &[usize],
    groups: &[ColumnGroup],
    opts: &PropensityOptions,
) -> Result<PropensityFit, PropensityError> {
    let x: Vec<&[f64]> = idx.iter().map(|&i| records[i].covariates.as_slice()).collect();
    let t: Vec<bool> = idx.iter().map(|&i| records[i].treatment == Arm::Treated).collect();
    fit_propensity(&x, &t, groups, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn intercept_only_is_sample_mean() {
        let rows: Vec<Vec<f64>> = vec![vec![]; 7];
        let x: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let t = [true, false, false, true, true, false, true];
        let fit = fit_propensity(&x, &t, &[], &PropensityOptions::default()).unwrap();
        assert!((fit.predict(&[], Arm::Treated).unwrap() - 4.0 / 7.0).abs() < 1e-10);
    }

    #[test]
    fn saturated_binary_covariate() {
        let mut rows = Vec::new();
        let mut t = Vec::new();
        // stratum 0: 3 of 10 treated; stratum 1: 7 of 9 treated
        for i in 0..10 {
            rows.push(vec![0.0]);
            t.push(i < 3);
        }
        for i in 0..9 {
            rows.push(vec![1.0]);
            t.push(i < 7);
        }
        let x: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let fit = fit_propensity(&x, &t, &ColumnGroup::per_column(1), &PropensityOptions::default()).unwrap();
        assert!((fit.predict(&[0.0], Arm::Treated).unwrap() - 0.3).abs() < 1e-8);
        assert!((fit.predict(&[1.0], Arm::Treated).unwrap() - 7.0 / 9.0).abs() < 1e-8);
    }

    #[test]
    fn loglik_is_monotone_and_arms_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rows: Vec<Vec<f64>> = (0..500).map(|_| vec![rng.gen::<f64>(), rng.gen::<f64>() * 2.0]).collect();
        let t: Vec<bool> = rows.iter().map(|r| rng.gen::<f64>() < sigmoid(-1.0 + 2.0 * r[0] + 0.5 * r[1])).collect();
        let x: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let fit = fit_propensity(&x, &t, &ColumnGroup::per_column(2), &PropensityOptions::default()).unwrap();
        for w in fit.loglik_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9 * w[0].abs());
        }
        for r in &rows {
            let s = fit.predict(r, Arm::Treated).unwrap() + fit.predict(r, Arm::Control).unwrap();
            assert_eq!(s, 1.0);
        }
        assert!(matches!(fit.predict(&[0.0], Arm::Treated), Err(PropensityError::DimensionMismatch { .. })));
    }

    #[test]
    fn separable_data_stops_at_clip() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64 / 40.0]).collect();
        let t: Vec<bool> = (0..40).map(|i| i >= 20).collect();
        let x: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let fit = fit_propensity(&x, &t, &ColumnGroup::per_column(1), &PropensityOptions::default()).unwrap();
        assert!(fit.separated);
        assert_eq!(fit.predict(&[0.0], Arm::Treated).unwrap(), 0.01);
        assert_eq!(fit.predict(&[1.0], Arm::Treated).unwrap(), 0.99);
        assert!(fit.intercept.is_finite());
    }

    #[test]
    fn single_arm_is_rejected() {
        let rows = [vec![1.0], vec![2.0]];
        let x: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        assert_eq!(
            fit_propensity(&x, &[true, true], &ColumnGroup::per_column(1), &PropensityOptions::default()),
            Err(PropensityError::SingleArm)
        );
    }

    #[test]
    fn penalised_spline_component_fits() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let knots = vec![0.0, 0.25, 0.5, 0.75, 1.0];
        let mut rows = Vec::new();
        let mut t = Vec::new();
        for _ in 0..400 {
            let v: f64 = rng.gen();
            let mut row = Vec::new();
            crate::spline::basis_into(v, &knots, &mut row);
            t.push(rng.gen::<f64>() < sigmoid((6.0 * (v - 0.5)).sin()));
            rows.push(row);
        }
        let x: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let groups = vec![ColumnGroup { name: "v".into(), start: 0, len: 4, scaled_knots: Some(knots) }];
        let free = fit_propensity(&x, &t, &groups, &PropensityOptions::default()).unwrap();
        let stiff = fit_propensity(&x, &t, &groups, &PropensityOptions { penalty: 1e3, ..Default::default() }).unwrap();
        assert!(free.components[0].smooth);
        assert!(free.loglik_trace.last() >= stiff.loglik_trace.last());
    }
}
