//! Natural cubic spline basis in the truncated-power form.
//!
//! For knots `ξ_1 < … < ξ_K` the basis (without intercept) is
//!
//! ```text
//! N_1(x)     = x
//! N_{k+1}(x) = d_k(x) - d_{K-1}(x),                      k = 1..K-2
//! d_k(x)     = ((x - ξ_k)_+^3 - (x - ξ_K)_+^3) / (ξ_K - ξ_k)
//! ```
//!
//! which spans the natural cubic splines modulo constants: every element is
//! C² and linear outside `[ξ_1, ξ_K]`.

use thiserror::Error;

use crate::stats::quantile_sorted;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplineError {
    #[error("natural spline needs at least 3 knots, got {0}")]
    TooFewKnots(usize),
    #[error("spline knots must be finite and strictly increasing")]
    UnsortedKnots,
}

fn check_knots(knots: &[f64]) -> Result<(), SplineError> {
    if knots.len() < 3 {
        return Err(SplineError::TooFewKnots(knots.len()));
    }
    if knots.iter().any(|k| !k.is_finite()) || knots.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SplineError::UnsortedKnots);
    }
    Ok(())
}

#[inline]
fn cube_pos(v: f64) -> f64 {
    if v > 0.0 {
        v * v * v
    } else {
        0.0
    }
}

/// Evaluate the natural cubic spline basis at `x`; the result has
/// `knots.len() - 1` entries.
pub fn spline_basis(x: f64, knots: &[f64]) -> Result<Vec<f64>, SplineError> {
    check_knots(knots)?;
    let mut out = Vec::with_capacity(knots.len() - 1);
    basis_into(x, knots, &mut out);
    Ok(out)
}

/// Unchecked variant used by the encoder once the knots have been validated.
pub(crate) fn basis_into(x: f64, knots: &[f64], out: &mut Vec<f64>) {
    let k = knots.len();
    let last = knots[k - 1];
    let d = |j: usize| (cube_pos(x - knots[j]) - cube_pos(x - last)) / (last - knots[j]);
    let d_pen = d(k - 2);
    out.push(x);
    for j in 0..k - 2 {
        out.push(d(j) - d_pen);
    }
}

/// Second derivative of each basis element at `x`.
fn basis_second_derivative(x: f64, knots: &[f64]) -> Vec<f64> {
    let k = knots.len();
    let last = knots[k - 1];
    let pos = |v: f64| v.max(0.0);
    let d2 = |j: usize| 6.0 * (pos(x - knots[j]) - pos(x - last)) / (last - knots[j]);
    let pen = d2(k - 2);
    let mut out = vec![0.0];
    for j in 0..k - 2 {
        out.push(d2(j) - pen);
    }
    out
}

/// Curvature penalty `Ω_jk = ∫ N_j''(x) N_k''(x) dx` for the basis above.
///
/// The second derivatives are piecewise linear between knots and vanish
/// outside the boundary knots, so Simpson's rule on each knot interval is
/// exact.
pub fn curvature_penalty(knots: &[f64]) -> Result<Vec<Vec<f64>>, SplineError> {
    check_knots(knots)?;
    let p = knots.len() - 1;
    let mut omega = vec![vec![0.0; p]; p];
    for w in knots.windows(2) {
        let (a, b) = (w[0], w[1]);
        let m = 0.5 * (a + b);
        let (fa, fm, fb) = (
            basis_second_derivative(a, knots),
            basis_second_derivative(m, knots),
            basis_second_derivative(b, knots),
        );
        let h = (b - a) / 6.0;
        for i in 0..p {
            for j in 0..p {
                omega[i][j] += h * (fa[i] * fa[j] + 4.0 * fm[i] * fm[j] + fb[i] * fb[j]);
            }
        }
    }
    Ok(omega)
}

/// Knots chosen from the empirical distribution of a covariate.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotPlacement {
    pub knots: Vec<f64>,
    /// Degrees of freedom actually available (`knots.len() - 1`, or 1 when the
    /// spline collapsed to a linear term).
    pub df: usize,
    /// True when tied quantiles forced fewer knots than requested.
    pub reduced: bool,
}

/// Boundary knots at the sample extremes and `df - 1` interior knots at
/// quantiles evenly spaced over the 10th–90th percentiles (for `df = 4`:
/// the 10th, 50th and 90th). Duplicate knots are dropped.
pub fn place_knots(values: &[f64], df: usize) -> KnotPlacement {
    let mut sorted: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let df = df.max(1);
    if sorted.is_empty() {
        return KnotPlacement { knots: Vec::new(), df: 1, reduced: df > 1 };
    }
    let mut probs = vec![0.0];
    if df >= 2 {
        let interior = df - 1;
        for j in 0..interior {
            let p = if interior == 1 {
                0.5
            } else {
                0.1 + 0.8 * j as f64 / (interior - 1) as f64
            };
            probs.push(p);
        }
    }
    probs.push(1.0);
    let mut knots: Vec<f64> = probs.iter().map(|&p| quantile_sorted(&sorted, p)).collect();
    knots.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));
    let requested = if df >= 2 { df + 1 } else { 2 };
    let reduced = knots.len() < requested;
    if knots.len() < 3 {
        return KnotPlacement { knots, df: 1, reduced };
    }
    let df = knots.len() - 1;
    KnotPlacement { knots, df, reduced }
}
