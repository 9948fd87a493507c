//! Proportional-hazards fits for failure and censoring times.
//!
//! Coefficients maximise the Breslow-ties partial likelihood by Newton's
//! method with step-halving. The Breslow baseline increments are then
//! smoothed with a boundary-renormalised Epanechnikov kernel, and all
//! predictions integrate that smoothed hazard.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::data::SurvivalRecord;
use crate::stats;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoxError {
    #[error("no {0} events in the fitting subset")]
    NoEvents(OutcomeRole),
    #[error("design has rank {rank} but {columns} columns on the fitting subset")]
    RankDeficientDesign { rank: usize, columns: usize },
    #[error("Newton iterations did not converge after {iterations} steps (scaled score norm {gradient_norm:e})")]
    Nonconvergence { iterations: usize, gradient_norm: f64 },
    #[error("time {u} outside [0, {max}]")]
    TimeOutOfRange { u: f64, max: f64 },
    #[error("bandwidth must be positive, got {0}")]
    NonpositiveBandwidth(f64),
    #[error("design row has {got} columns, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Which indicator counts as the event when fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeRole {
    Failure,
    Censoring,
}

impl std::fmt::Display for OutcomeRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OutcomeRole::Failure => "failure",
            OutcomeRole::Censoring => "censoring",
        })
    }
}

impl OutcomeRole {
    #[inline]
    fn is_event(self, r: &SurvivalRecord) -> bool {
        match self {
            OutcomeRole::Failure => r.event,
            OutcomeRole::Censoring => !r.event,
        }
    }
}

/// Kernel bandwidth rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    Fixed(f64),
    /// `c · sd(follow-up) · n^{-1/5}` on the fitting subset.
    Scaled { c: f64 },
}

impl Bandwidth {
    pub fn resolve(&self, times: &[f64], horizon: f64) -> f64 {
        match *self {
            Bandwidth::Fixed(b) => b,
            Bandwidth::Scaled { c } => {
                let sd = stats::std_dev(times);
                let spread = if sd > 0.0 { sd } else { 0.05 * horizon };
                c * spread * (times.len().max(1) as f64).powf(-0.2)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoxOptions {
    pub max_iter: usize,
    /// Tolerance on `‖score‖ / n`.
    pub tol: f64,
    pub bandwidth: Bandwidth,
    /// Upper end of the support; the smoothed hazard lives on `[0, τ†]`.
    pub tau_dagger: f64,
    /// Number of midpoints in the audit grid.
    pub grid_size: usize,
}

impl Default for CoxOptions {
    fn default() -> Self {
        CoxOptions { max_iter: 25, tol: 1e-8, bandwidth: Bandwidth::Scaled { c: 1.0 }, tau_dagger: 150.0, grid_size: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Convergence {
    pub iterations: usize,
    /// `‖score‖ / n` at the returned coefficients.
    pub gradient_norm: f64,
    pub log_partial_likelihood: f64,
}

/// Epanechnikov kernel `K_b(v)`.
#[inline]
pub fn epanechnikov(v: f64, b: f64) -> f64 {
    let z = v / b;
    if z.abs() <= 1.0 {
        0.75 * (1.0 - z * z) / b
    } else {
        0.0
    }
}

/// Distribution function of the unit Epanechnikov kernel.
#[inline]
fn kernel_cdf(z: f64) -> f64 {
    if z <= -1.0 {
        0.0
    } else if z >= 1.0 {
        1.0
    } else {
        0.5 + 0.75 * (z - z * z * z / 3.0)
    }
}

/// Kernel-smoothed hazard built from Breslow increments. Each increment's
/// kernel is rescaled to have unit mass inside `[0, τ†]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmoothedHazard {
    pub bandwidth: f64,
    pub tau_dagger: f64,
    #[serde(skip)]
    times: Vec<f64>,
    #[serde(skip)]
    weight: Vec<f64>,
    #[serde(skip)]
    lower: Vec<f64>,
    #[serde(skip)]
    full_prefix: Vec<f64>,
}

impl SmoothedHazard {
    /// Smooth `(time, increment)` steps sorted by time.
    pub fn new(steps: &[(f64, f64)], bandwidth: f64, tau_dagger: f64) -> Result<SmoothedHazard, CoxError> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(CoxError::NonpositiveBandwidth(bandwidth));
        }
        let b = bandwidth;
        let mut times = Vec::with_capacity(steps.len());
        let mut weight = Vec::with_capacity(steps.len());
        let mut lower = Vec::with_capacity(steps.len());
        let mut full_prefix = Vec::with_capacity(steps.len() + 1);
        full_prefix.push(0.0);
        for &(t, inc) in steps {
            let lo = kernel_cdf(-t / b);
            let mass = kernel_cdf((tau_dagger - t) / b) - lo;
            let w = if mass > 0.0 { inc / mass } else { 0.0 };
            times.push(t);
            weight.push(w);
            lower.push(lo);
            let last = *full_prefix.last().unwrap();
            full_prefix.push(last + w * (1.0 - lo));
        }
        Ok(SmoothedHazard { bandwidth, tau_dagger, times, weight, lower, full_prefix })
    }

    pub fn empty(bandwidth: f64, tau_dagger: f64) -> SmoothedHazard {
        SmoothedHazard::new(&[], bandwidth, tau_dagger).expect("positive bandwidth")
    }

    fn window(&self, u: f64) -> (usize, usize) {
        let b = self.bandwidth;
        let a = self.times.partition_point(|&t| t <= u - b);
        let e = self.times.partition_point(|&t| t < u + b);
        (a, e.max(a))
    }

    /// Smoothed hazard at `u`.
    pub fn hazard(&self, u: f64) -> f64 {
        let (a, e) = self.window(u);
        let mut h = 0.0;
        for j in a..e {
            h += self.weight[j] * epanechnikov(u - self.times[j], self.bandwidth);
        }
        h
    }

    /// Exact integral of the smoothed hazard over `[0, u]`.
    pub fn cumulative(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, self.tau_dagger);
        let (a, e) = self.window(u);
        let mut total = self.full_prefix[a];
        for j in a..e {
            total += self.weight[j] * (kernel_cdf((u - self.times[j]) / self.bandwidth) - self.lower[j]);
        }
        total.max(0.0)
    }
}

/// Midpoints `u_m = (m + ½)·τ†/M`, `m = 0..M`.
pub fn midpoint_grid(tau_dagger: f64, m: usize) -> Vec<f64> {
    let du = tau_dagger / m as f64;
    (0..m).map(|i| (i as f64 + 0.5) * du).collect()
}

/// A fitted proportional-hazards model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoxFit {
    pub role: OutcomeRole,
    pub coefficients: Vec<f64>,
    /// Breslow `(time, increment)` pairs for the baseline at `x = center`.
    pub baseline_steps: Vec<(f64, f64)>,
    /// Covariate means of the fitting sample; linear predictors are
    /// measured from here.
    pub center: Vec<f64>,
    pub smoothed: SmoothedHazard,
    pub grid: Vec<f64>,
    pub grid_hazard: Vec<f64>,
    pub convergence: Convergence,
    pub n_subjects: usize,
    pub n_events: usize,
}

/// Partial-likelihood pieces for one coefficient vector.
struct Evaluation {
    loglik: f64,
    score: DVector<f64>,
    info: DMatrix<f64>,
}

/// Subject data sorted by descending time, with centred covariates.
struct RiskData {
    n: usize,
    p: usize,
    x: Vec<f64>,
    time: Vec<f64>,
    status: Vec<bool>,
    /// `(start, end)` ranges of equal times in the sorted order.
    blocks: Vec<(usize, usize)>,
    center: Vec<f64>,
}

impl RiskData {
    fn new(records: &[SurvivalRecord], idx: &[usize], role: OutcomeRole, p: usize) -> RiskData {
        let mut order: Vec<usize> = idx.to_vec();
        order.sort_by(|&a, &b| records[b].time.partial_cmp(&records[a].time).unwrap().then(a.cmp(&b)));
        let n = order.len();
        let mut center = vec![0.0; p];
        for &i in &order {
            for (c, v) in center.iter_mut().zip(&records[i].covariates) {
                *c += v;
            }
        }
        center.iter_mut().for_each(|c| *c /= n.max(1) as f64);
        let mut x = Vec::with_capacity(n * p);
        let mut time = Vec::with_capacity(n);
        let mut status = Vec::with_capacity(n);
        for &i in &order {
            let r = &records[i];
            x.extend(r.covariates.iter().zip(&center).map(|(v, c)| v - c));
            time.push(r.time);
            status.push(role.is_event(r));
        }
        let mut blocks = Vec::new();
        let mut s = 0;
        while s < n {
            let mut e = s + 1;
            while e < n && time[e] == time[s] {
                e += 1;
            }
            blocks.push((s, e));
            s = e;
        }
        RiskData { n, p, x, time, status, blocks, center }
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    fn linear_predictors(&self, beta: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).iter().zip(beta).map(|(a, b)| a * b).sum()).collect()
    }

    fn loglik(&self, beta: &[f64]) -> f64 {
        let lp = self.linear_predictors(beta);
        let shift = lp.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(0.0);
        let mut s0 = 0.0;
        let mut ll = 0.0;
        for &(a, e) in &self.blocks {
            let mut d = 0.0;
            for i in a..e {
                s0 += (lp[i] - shift).exp();
                if self.status[i] {
                    d += 1.0;
                    ll += lp[i];
                }
            }
            if d > 0.0 {
                ll -= d * (s0.ln() + shift);
            }
        }
        ll
    }

    fn evaluate(&self, beta: &[f64]) -> Evaluation {
        let p = self.p;
        let lp = self.linear_predictors(beta);
        let shift = lp.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(0.0);
        let mut s0 = 0.0;
        let mut s1 = vec![0.0; p];
        let mut s2 = vec![0.0; p * p];
        let mut ll = 0.0;
        let mut score = DVector::zeros(p);
        let mut info = DMatrix::zeros(p, p);
        for &(a, e) in &self.blocks {
            let mut d = 0.0;
            for i in a..e {
                let w = (lp[i] - shift).exp();
                let xi = self.row(i);
                s0 += w;
                for j in 0..p {
                    let wx = w * xi[j];
                    s1[j] += wx;
                    for k in 0..=j {
                        s2[j * p + k] += wx * xi[k];
                    }
                }
                if self.status[i] {
                    d += 1.0;
                    ll += lp[i];
                    for j in 0..p {
                        score[j] += xi[j];
                    }
                }
            }
            if d > 0.0 {
                ll -= d * (s0.ln() + shift);
                for j in 0..p {
                    let mj = s1[j] / s0;
                    score[j] -= d * mj;
                    for k in 0..=j {
                        let v = d * (s2[j * p + k] / s0 - mj * s1[k] / s0);
                        info[(j, k)] += v;
                    }
                }
            }
        }
        for j in 0..p {
            for k in 0..j {
                info[(k, j)] = info[(j, k)];
            }
        }
        Evaluation { loglik: ll, score, info }
    }

    fn rank(&self) -> usize {
        let p = self.p;
        let mut xtx = DMatrix::<f64>::zeros(p, p);
        for i in 0..self.n {
            let r = self.row(i);
            for j in 0..p {
                for k in 0..p {
                    xtx[(j, k)] += r[j] * r[k];
                }
            }
        }
        let eig = xtx.symmetric_eigenvalues();
        let max = eig.iter().copied().fold(0.0, f64::max);
        if max <= 0.0 {
            return 0;
        }
        eig.iter().filter(|&&e| e > 1e-10 * max).count()
    }
}

fn solve_newton(info: &DMatrix<f64>, score: &DVector<f64>) -> DVector<f64> {
    if let Some(ch) = info.clone().cholesky() {
        return ch.solve(score);
    }
    let p = info.nrows();
    let scale = (0..p).map(|j| info[(j, j)].abs()).fold(1e-12, f64::max);
    let mut ridge = 1e-10 * scale;
    loop {
        let m = info + DMatrix::identity(p, p) * ridge;
        if let Some(ch) = m.cholesky() {
            return ch.solve(score);
        }
        ridge *= 10.0;
    }
}

/// Fit a proportional-hazards model to all of `records`.
pub fn fit_cox(records: &[SurvivalRecord], role: OutcomeRole, opts: &CoxOptions) -> Result<CoxFit, CoxError> {
    let idx: Vec<usize> = (0..records.len()).collect();
    fit_cox_indexed(records, &idx, role, opts)
}

/// Fit a proportional-hazards model to `records[idx]`.
pub fn fit_cox_indexed(
    records: &[SurvivalRecord],
    idx: &[usize],
    role: OutcomeRole,
    opts: &CoxOptions,
) -> Result<CoxFit, CoxError> {
    let n_events = idx.iter().filter(|&&i| role.is_event(&records[i])).count();
    if n_events == 0 {
        return Err(CoxError::NoEvents(role));
    }
    let p = records[idx[0]].covariates.len();
    if let Some(&bad) = idx.iter().find(|&&i| records[i].covariates.len() != p) {
        return Err(CoxError::DimensionMismatch { expected: p, got: records[bad].covariates.len() });
    }
    let data = RiskData::new(records, idx, role, p);
    if p > 0 {
        let rank = data.rank();
        if rank < p {
            return Err(CoxError::RankDeficientDesign { rank, columns: p });
        }
    }
    let n = data.n as f64;

    let mut beta = vec![0.0; p];
    let mut ev = data.evaluate(&beta);
    let mut iterations = 0;
    let mut grad = ev.score.norm() / n;
    while grad > opts.tol {
        if iterations == opts.max_iter {
            return Err(CoxError::Nonconvergence { iterations, gradient_norm: grad });
        }
        iterations += 1;
        let delta = solve_newton(&ev.info, &ev.score);
        let mut step = 1.0;
        let mut candidate: Vec<f64>;
        loop {
            candidate = beta.iter().zip(delta.iter()).map(|(b, d)| b + step * d).collect();
            let ll = data.loglik(&candidate);
            if (ll.is_finite() && ll >= ev.loglik - 1e-12 * ev.loglik.abs().max(1.0)) || step < 1e-8 {
                break;
            }
            step *= 0.5;
        }
        beta = candidate;
        ev = data.evaluate(&beta);
        grad = ev.score.norm() / n;
        if !grad.is_finite() {
            return Err(CoxError::Nonconvergence { iterations, gradient_norm: grad });
        }
    }

    let baseline_steps = breslow_steps(&data, &beta);
    let times: Vec<f64> = data.time.clone();
    let b = opts.bandwidth.resolve(&times, opts.tau_dagger);
    let smoothed = SmoothedHazard::new(&baseline_steps, b, opts.tau_dagger)?;
    let grid = midpoint_grid(opts.tau_dagger, opts.grid_size.max(1));
    let grid_hazard = grid.iter().map(|&u| smoothed.hazard(u)).collect();
    Ok(CoxFit {
        role,
        coefficients: beta,
        baseline_steps,
        center: data.center.clone(),
        smoothed,
        grid,
        grid_hazard,
        convergence: Convergence { iterations, gradient_norm: grad, log_partial_likelihood: ev.loglik },
        n_subjects: data.n,
        n_events,
    })
}

/// Breslow increments at each distinct event time for the baseline at the
/// covariate means, in ascending time order.
fn breslow_steps(data: &RiskData, beta: &[f64]) -> Vec<(f64, f64)> {
    let lp = data.linear_predictors(beta);
    let mut s0 = 0.0;
    let mut steps = Vec::new();
    for &(a, e) in &data.blocks {
        let mut d = 0.0;
        for i in a..e {
            s0 += lp[i].exp();
            if data.status[i] {
                d += 1.0;
            }
        }
        if d > 0.0 {
            steps.push((data.time[a], d / s0));
        }
    }
    steps.reverse();
    steps
}

impl CoxFit {
    /// A model with zero hazard everywhere, used when the fitting subset
    /// has no events of the requested role.
    pub fn zero_hazard(p: usize, role: OutcomeRole, opts: &CoxOptions) -> CoxFit {
        let b = match opts.bandwidth {
            Bandwidth::Fixed(b) => b,
            Bandwidth::Scaled { .. } => 0.05 * opts.tau_dagger,
        };
        let grid = midpoint_grid(opts.tau_dagger, opts.grid_size.max(1));
        CoxFit {
            role,
            coefficients: vec![0.0; p],
            baseline_steps: Vec::new(),
            center: vec![0.0; p],
            smoothed: SmoothedHazard::empty(b, opts.tau_dagger),
            grid_hazard: vec![0.0; grid.len()],
            grid,
            convergence: Convergence { iterations: 0, gradient_norm: 0.0, log_partial_likelihood: 0.0 },
            n_subjects: 0,
            n_events: 0,
        }
    }

    /// A model with a given step baseline and coefficients, smoothed with a
    /// narrow kernel. Test fixture.
    #[cfg(test)]
    pub(crate) fn from_steps(steps: &[(f64, f64)], coefficients: Vec<f64>, tau_dagger: f64) -> CoxFit {
        let p = coefficients.len();
        let opts = CoxOptions { tau_dagger, grid_size: 20, ..CoxOptions::default() };
        CoxFit {
            coefficients,
            baseline_steps: steps.to_vec(),
            smoothed: SmoothedHazard::new(steps, 0.05, tau_dagger).unwrap(),
            ..CoxFit::zero_hazard(p, OutcomeRole::Failure, &opts)
        }
    }

    pub fn dim(&self) -> usize {
        self.coefficients.len()
    }

    pub fn bandwidth(&self) -> f64 {
        self.smoothed.bandwidth
    }

    pub fn tau_dagger(&self) -> f64 {
        self.smoothed.tau_dagger
    }

    #[inline]
    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        self.coefficients.iter().zip(x).zip(&self.center).map(|((b, v), c)| b * (v - c)).sum()
    }

    /// Relative risk `exp(β'(x − center))`, with the exponent held within
    /// `±700` so that products with a zero cumulative hazard stay zero.
    #[inline]
    pub fn risk(&self, x: &[f64]) -> f64 {
        self.linear_predictor(x).clamp(-700.0, 700.0).exp()
    }

    /// Breslow step cumulative baseline hazard at `u` (right-continuous).
    pub fn breslow_cumhaz(&self, u: f64) -> f64 {
        self.baseline_steps.iter().take_while(|(t, _)| *t <= u).map(|(_, d)| d).sum()
    }

    /// Smoothed baseline cumulative hazard at `u`.
    #[inline]
    pub fn cumhaz(&self, u: f64) -> f64 {
        self.smoothed.cumulative(u)
    }

    /// Smoothed baseline hazard at `u`.
    #[inline]
    pub fn hazard(&self, u: f64) -> f64 {
        self.smoothed.hazard(u)
    }

    fn check(&self, u: f64, x: &[f64]) -> Result<(), CoxError> {
        if x.len() != self.dim() {
            return Err(CoxError::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        let max = self.tau_dagger();
        if !(0.0..=max * (1.0 + 1e-12)).contains(&u) {
            return Err(CoxError::TimeOutOfRange { u, max });
        }
        Ok(())
    }

    /// `F̂(u|x) = 1 − exp(−Λ̂(u)·e^{β'x})`.
    pub fn predict_cdf(&self, u: f64, x: &[f64]) -> Result<f64, CoxError> {
        self.check(u, x)?;
        Ok(-(-self.cumhaz(u) * self.risk(x)).exp_m1())
    }

    /// `Ĝ(u|x) = exp(−Λ̂(u)·e^{β'x})`.
    pub fn predict_surv(&self, u: f64, x: &[f64]) -> Result<f64, CoxError> {
        self.check(u, x)?;
        Ok((-self.cumhaz(u) * self.risk(x)).exp())
    }

    /// Curve for a fixed design row.
    pub fn curve(&self, x: &[f64]) -> Result<ConditionalCurve<'_>, CoxError> {
        self.check(0.0, x)?;
        Ok(ConditionalCurve { fit: self, risk: self.risk(x) })
    }
}

/// `u ↦ F̂(u|x)` or `Ĝ(u|x)` for one design row.
#[derive(Debug, Clone, Copy)]
pub struct ConditionalCurve<'a> {
    fit: &'a CoxFit,
    risk: f64,
}

impl ConditionalCurve<'_> {
    pub fn survival(&self, u: f64) -> f64 {
        (-self.fit.cumhaz(u) * self.risk).exp()
    }

    pub fn cdf(&self, u: f64) -> f64 {
        -(-self.fit.cumhaz(u) * self.risk).exp_m1()
    }

    pub fn hazard(&self, u: f64) -> f64 {
        self.fit.hazard(u) * self.risk
    }
}
