//! Pool-adjacent-violators projection onto nondecreasing sequences.

/// Least-squares nondecreasing fit to `values` with unit weights.
pub fn pava_monotonize(values: &[f64]) -> Vec<f64> {
    pava_weighted(values, &vec![1.0; values.len()])
}

/// Weighted least-squares nondecreasing fit.
pub fn pava_weighted(values: &[f64], weights: &[f64]) -> Vec<f64> {
    assert_eq!(values.len(), weights.len());
    // Each block: (weighted mean, total weight, length).
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        let mut cur = (v, w, 1usize);
        while let Some(&(m, bw, len)) = blocks.last() {
            if m <= cur.0 {
                break;
            }
            blocks.pop();
            let tw = bw + cur.1;
            cur = ((m * bw + cur.0 * cur.1) / tw, tw, len + cur.2);
        }
        blocks.push(cur);
    }
    let mut out = Vec::with_capacity(values.len());
    for (m, _, len) in blocks {
        out.extend(std::iter::repeat(m).take(len));
    }
    out
}
