//! Adaptive-degree polynomial filter.
//!
//! Each output point is the centre value of a local least-squares polynomial
//! fitted over a sliding window. The degree is chosen per point: degrees
//! `0..=max_degree` are tried in order and a step from `d` to `d + 1` is
//! accepted when the partial F statistic of the added term is significant at
//! the configured confidence. The selected degree is the highest accepted
//! one. Windows are truncated at the series edges.
//!
//! Fits share one orthonormal basis per window shape (built by modified
//! Gram-Schmidt on the scaled Vandermonde columns), so the residual of every
//! nested degree falls out of the basis coefficients.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::error::{Error, Result};
use crate::series::TimeSeries;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdpfConfig {
    /// Odd window length in days.
    pub window: usize,
    pub max_degree: usize,
    /// Confidence level of the F-test between successive degrees.
    pub confidence: f64,
}

impl Default for AdpfConfig {
    fn default() -> Self {
        Self {
            window: 13,
            max_degree: 6,
            confidence: 0.95,
        }
    }
}

/// Orthonormal polynomial basis over one window shape, evaluated at its points.
struct Basis {
    /// `columns[k][i]` is the degree-k basis polynomial at window point i.
    columns: Vec<Vec<f64>>,
}

impl Basis {
    fn new(len: usize, center: usize, max_degree: usize) -> Self {
        let half = (len.max(2) - 1) as f64 / 2.0;
        let xs: Vec<f64> = (0..len)
            .map(|i| (i as f64 - center as f64) / half.max(1.0))
            .collect();
        let mut columns: Vec<Vec<f64>> = Vec::with_capacity(max_degree + 1);
        for d in 0..=max_degree {
            let mut v: Vec<f64> = xs.iter().map(|x| x.powi(d as i32)).collect();
            // two passes of MGS for numerical orthogonality
            for _ in 0..2 {
                for q in &columns {
                    let dot: f64 = q.iter().zip(&v).map(|(a, b)| a * b).sum();
                    for (vi, qi) in v.iter_mut().zip(q) {
                        *vi -= dot * qi;
                    }
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-10 {
                break;
            }
            v.iter_mut().for_each(|x| *x /= norm);
            columns.push(v);
        }
        Self { columns }
    }
}

struct Critical {
    confidence: f64,
    cache: Vec<f64>,
}

impl Critical {
    fn new(confidence: f64, max_dof: usize) -> Self {
        let mut cache = vec![f64::INFINITY; max_dof + 1];
        for (dof, slot) in cache.iter_mut().enumerate().skip(1) {
            *slot = FisherSnedecor::new(1.0, dof as f64)
                .map(|f| f.inverse_cdf(confidence))
                .unwrap_or(f64::INFINITY);
        }
        Self { confidence, cache }
    }

    fn get(&self, dof: usize) -> f64 {
        match self.cache.get(dof) {
            Some(v) => *v,
            None => FisherSnedecor::new(1.0, dof as f64)
                .map(|f| f.inverse_cdf(self.confidence))
                .unwrap_or(f64::INFINITY),
        }
    }
}

/// Value at `pos` of the adaptively chosen fit, plus the chosen degree.
fn fit_point(basis: &Basis, y: &[f64], pos: usize, crit: &Critical) -> (f64, usize) {
    let len = y.len();
    let coef: Vec<f64> = basis
        .columns
        .iter()
        .map(|q| q.iter().zip(y).map(|(a, b)| a * b).sum())
        .collect();
    let top = coef.len() - 1;
    let fitted_full: Vec<f64> = (0..len)
        .map(|i| (0..=top).map(|k| coef[k] * basis.columns[k][i]).sum())
        .collect();
    let rss_full: f64 = y.iter().zip(&fitted_full).map(|(a, b)| (a - b).powi(2)).sum();
    // rss[d] = residual of the degree-d fit
    let mut rss = vec![0.0; top + 1];
    rss[top] = rss_full;
    for d in (0..top).rev() {
        rss[d] = rss[d + 1] + coef[d + 1] * coef[d + 1];
    }
    let energy: f64 = y.iter().map(|v| v * v).sum();
    let exact = 1e-24 * energy.max(f64::MIN_POSITIVE);
    let mut degree = 0;
    for d in 0..top {
        if rss[d] <= exact {
            break;
        }
        let dof = len - d - 2;
        if dof == 0 {
            break;
        }
        let gain = rss[d] - rss[d + 1];
        let f = if rss[d + 1] <= exact {
            f64::INFINITY
        } else {
            gain / (rss[d + 1] / dof as f64)
        };
        if f > crit.get(dof) {
            degree = d + 1;
        }
    }
    let value = (0..=degree).map(|k| coef[k] * basis.columns[k][pos]).sum();
    (value, degree)
}

/// Smooth a daily series. Output is clamped at zero.
///
/// A series shorter than the window falls back to a truncated centred
/// moving average.
pub fn adpf_smooth(daily: &TimeSeries, config: &AdpfConfig) -> Result<TimeSeries> {
    let (values, _) = adpf_values(&daily.values, config)?;
    Ok(TimeSeries::new(daily.geo_id.clone(), daily.start, values))
}

/// Smoothed values and the degree selected at each point.
pub fn adpf_values(y: &[f64], config: &AdpfConfig) -> Result<(Vec<f64>, Vec<usize>)> {
    let AdpfConfig {
        window, max_degree, ..
    } = *config;
    if window < 5 || window % 2 == 0 {
        return Err(Error::InvalidInput(format!(
            "window must be odd and >= 5, got {window}"
        )));
    }
    if max_degree + 2 > window {
        return Err(Error::InvalidInput(format!(
            "max_degree {max_degree} exceeds window - 2"
        )));
    }
    let n = y.len();
    let half = window / 2;
    if n < window {
        let out = (0..n)
            .map(|i| {
                let lo = i.saturating_sub(half);
                let hi = (i + half + 1).min(n);
                (y[lo..hi].iter().sum::<f64>() / (hi - lo) as f64).max(0.0)
            })
            .collect();
        return Ok((out, vec![0; n]));
    }
    let crit = Critical::new(config.confidence, window);
    let interior = Basis::new(window, half, max_degree);
    let mut out = Vec::with_capacity(n);
    let mut degrees = Vec::with_capacity(n);
    for i in 0..n {
        let lo = i.saturating_sub(half);
        let hi = (i + half + 1).min(n);
        let len = hi - lo;
        let pos = i - lo;
        let (v, d) = if len == window {
            fit_point(&interior, &y[lo..hi], pos, &crit)
        } else {
            let basis = Basis::new(len, pos, max_degree.min(len - 2));
            fit_point(&basis, &y[lo..hi], pos, &crit)
        };
        out.push(v.max(0.0));
        degrees.push(d);
    }
    Ok((out, degrees))
}
