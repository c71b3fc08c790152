//! Weighted isotonic regression under a total order, by pool-adjacent-violators.

use crate::error::{Error, Result};

/// Minimize `sum w_i (x_i - a_i)^2` subject to `x_0 <= x_1 <= ... <= x_{n-1}`.
///
/// Returns an exact optimum. Every weight must be strictly positive.
pub fn isotonic_fit(a: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    if a.len() != w.len() {
        return Err(Error::InvalidInput(format!(
            "values and weights differ in length ({} vs {})",
            a.len(),
            w.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::InvalidInput("empty isotonic problem".into()));
    }
    if let Some((index, &weight)) = w.iter().enumerate().find(|(_, &x)| !(x > 0.0)) {
        return Err(Error::NonPositiveWeight { index, weight });
    }

    // (weighted sum, total weight, length) per pooled block
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(a.len());
    for (&ai, &wi) in a.iter().zip(w) {
        blocks.push((wi * ai, wi, 1));
        while blocks.len() > 1 {
            let (s1, w1, n1) = blocks[blocks.len() - 1];
            let (s0, w0, n0) = blocks[blocks.len() - 2];
            if s0 / w0 <= s1 / w1 {
                break;
            }
            blocks.pop();
            *blocks.last_mut().expect("len > 1") = (s0 + s1, w0 + w1, n0 + n1);
        }
    }
    let mut out = Vec::with_capacity(a.len());
    for (s, wt, n) in blocks {
        out.extend(std::iter::repeat_n(s / wt, n));
    }
    Ok(out)
}

/// Unit-weight convenience wrapper.
pub fn isotonic_unweighted(a: &[f64]) -> Result<Vec<f64>> {
    isotonic_fit(a, &vec![1.0; a.len()])
}
