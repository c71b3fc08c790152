//! Transmission-regime change detection on a smoothed daily-case curve.
//!
//! Candidates come from Kneedle run over every sliding segment of the
//! series: the segment is min-max normalized, the difference curve is taken
//! against the chord joining its endpoints, the maximum of that curve is a
//! knee (concave bend, a downturn) and the minimum an elbow (convex bend, an
//! upturn). A candidate survives Kneedle's threshold test when the curve
//! falls below `D_max - sensitivity / (len - 1)` after the extremum.
//!
//! On a curve of constant shape, such as steady exponential growth, every
//! window finds an extremum at the same relative offset, so the candidate
//! slides with the window. A real bend stays put: a candidate needs support
//! from several windows that place the extremum within a day of it.
//!
//! Survivors must then be confirmed by the following two weeks of the
//! smoothed series (below the knee value with a falling trend, or above the
//! elbow value with a rising one) and by the flanking log-slopes, so that the bend is a change of
//! growth rate and not the curvature every exponential has. They are scored
//! by the change in slope of 7-day linear fits on either side, and merged
//! greedily so no two breakpoints sit closer than the merge gap.

use serde::{Deserialize, Serialize};

use crate::series::TimeSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InflectionKind {
    /// Downturn.
    Knee,
    /// Upturn.
    Elbow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inflection {
    /// Day offset from the series start.
    pub day: usize,
    pub kind: InflectionKind,
    /// `|slope_after - slope_before|` of flanking linear fits.
    pub significance: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InflectionSet {
    pub breakpoints: Vec<Inflection>,
}

impl InflectionSet {
    pub fn days(&self) -> Vec<usize> {
        self.breakpoints.iter().map(|b| b.day).collect()
    }

    pub fn len(&self) -> usize {
        self.breakpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.breakpoints.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InflectionConfig {
    pub sensitivity: f64,
    /// Kneedle segment length in days.
    pub segment: usize,
    /// Minimum spacing between breakpoints after merging.
    pub merge_gap: usize,
    /// Days after a breakpoint that must stay beyond it and trend away.
    pub confirm_days: usize,
    /// Span of the flanking slope fits.
    pub slope_span: usize,
    /// Detection starts at the first day whose trailing 7-day mean reaches this.
    pub min_prevalence: f64,
    /// Windows that must place the extremum within a day of a candidate.
    pub min_support: usize,
    /// Change in exponential growth rate (per day) across a breakpoint:
    /// an elbow must raise it and a knee must lower it by at least this.
    pub min_rate_change: f64,
}

impl Default for InflectionConfig {
    fn default() -> Self {
        Self {
            sensitivity: 1.0,
            segment: 29,
            merge_gap: 7,
            confirm_days: 14,
            slope_span: 7,
            min_prevalence: 1.0,
            min_support: 8,
            min_rate_change: 0.02,
        }
    }
}

pub const MIN_LENGTH: usize = 21;
/// Values below this fraction of the series maximum are floored before the log.
const LOG_FLOOR: f64 = 1e-3;

/// Least-squares slope over `y[lo..hi]` against the day index.
fn slope(y: &[f64], lo: usize, hi: usize) -> f64 {
    let n = hi - lo;
    if n < 2 {
        return 0.0;
    }
    let xm = (n - 1) as f64 / 2.0;
    let ym = y[lo..hi].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, v) in y[lo..hi].iter().enumerate() {
        let dx = i as f64 - xm;
        sxy += dx * (v - ym);
        sxx += dx * dx;
    }
    sxy / sxx
}

fn prevalence_gate(y: &[f64], threshold: f64) -> Option<usize> {
    (0..y.len()).find(|&t| {
        let lo = t.saturating_sub(6);
        y[lo..=t].iter().sum::<f64>() / (t - lo + 1) as f64 >= threshold
    })
}

/// Kneedle extrema of one segment: `(offset, kind)` pairs that pass the
/// threshold test.
fn kneedle_segment(seg: &[f64], sensitivity: f64) -> Vec<(usize, InflectionKind)> {
    let len = seg.len();
    let (lo, hi) = seg
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let range = hi - lo;
    if !(range > 1e-12 * hi.abs().max(lo.abs())) || len < 3 {
        return Vec::new();
    }
    let span = (len - 1) as f64;
    let yn: Vec<f64> = seg.iter().map(|v| (v - lo) / range).collect();
    let (y0, y1) = (yn[0], yn[len - 1]);
    let diff: Vec<f64> = yn
        .iter()
        .enumerate()
        .map(|(i, v)| v - (y0 + (y1 - y0) * i as f64 / span))
        .collect();
    let step = sensitivity / span;
    let mut out = Vec::new();

    let (imax, dmax) = diff[1..len - 1]
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &d)| if d > best.1 { (i + 1, d) } else { best });
    if dmax > 0.0 && diff[imax + 1..].iter().any(|&d| d < dmax - step) {
        out.push((imax, InflectionKind::Knee));
    }
    let (imin, dmin) = diff[1..len - 1]
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, &d)| if d < best.1 { (i + 1, d) } else { best });
    if dmin < 0.0 && diff[imin + 1..].iter().any(|&d| d > dmin + step) {
        out.push((imin, InflectionKind::Elbow));
    }
    out
}

/// Detect regime changes on a smoothed daily series of at least
/// [`MIN_LENGTH`] days. Returns breakpoints ordered by day.
pub fn detect_inflections(smoothed: &TimeSeries, config: &InflectionConfig) -> InflectionSet {
    detect_in_values(&smoothed.values, config)
}

pub fn detect_in_values(y: &[f64], config: &InflectionConfig) -> InflectionSet {
    let n = y.len();
    if n < MIN_LENGTH {
        return InflectionSet::default();
    }
    let Some(gate) = prevalence_gate(y, config.min_prevalence) else {
        return InflectionSet::default();
    };
    let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-9 * scale;
    let floor = LOG_FLOOR * scale;
    let logs: Vec<f64> = y.iter().map(|v| v.max(floor).ln()).collect();
    let seg = config.segment.min(n - gate);
    if seg < 3 {
        return InflectionSet::default();
    }

    let mut votes: std::collections::BTreeMap<(usize, bool), usize> = Default::default();
    for s in gate..=n - seg {
        for (off, kind) in kneedle_segment(&y[s..s + seg], config.sensitivity) {
            *votes.entry((s + off, kind == InflectionKind::Knee)).or_default() += 1;
        }
    }
    let support = |t: usize, knee: bool| -> usize {
        (t.saturating_sub(1)..=t + 1)
            .map(|d| votes.get(&(d, knee)).copied().unwrap_or(0))
            .sum()
    };
    let candidates: Vec<(usize, bool)> = votes
        .keys()
        .copied()
        .filter(|&(t, knee)| support(t, knee) >= config.min_support)
        .collect();

    let mut scored: Vec<Inflection> = candidates
        .into_iter()
        .filter_map(|(t, is_knee)| {
            if t + config.confirm_days >= n {
                return None;
            }
            // Residual wiggle in the smoothed curve breaks a day-by-day
            // monotone test, so the two weeks must stay on the far side of
            // the breakpoint value and trend away from it.
            let follow = &y[t..=t + config.confirm_days];
            let trend = slope(follow, 0, follow.len());
            let confirmed = if is_knee {
                follow[1..].iter().all(|&v| v <= y[t] + tol) && trend <= tol
            } else {
                follow[1..].iter().all(|&v| v >= y[t] - tol) && trend >= -tol
            };
            if !confirmed {
                return None;
            }
            let span = config.slope_span;
            let rate_before = slope(&logs, (t + 1).saturating_sub(span).max(gate), t + 1);
            let rate_after = slope(&logs, t, (t + span).min(n));
            let rate_change = if is_knee { rate_before - rate_after } else { rate_after - rate_before };
            if rate_change < config.min_rate_change {
                return None;
            }
            let before = slope(y, (t + 1).saturating_sub(span).max(gate), t + 1);
            let after = slope(y, t, (t + span).min(n));
            Some(Inflection {
                day: t,
                kind: if is_knee {
                    InflectionKind::Knee
                } else {
                    InflectionKind::Elbow
                },
                significance: (after - before).abs(),
            })
        })
        .collect();

    scored.sort_by(|a, b| {
        b.significance
            .total_cmp(&a.significance)
            .then(a.day.cmp(&b.day))
    });
    let mut kept: Vec<Inflection> = Vec::new();
    for c in scored {
        if kept.iter().all(|k| k.day.abs_diff(c.day) >= config.merge_gap) {
            kept.push(c);
        }
    }
    kept.sort_by_key(|b| b.day);
    InflectionSet { breakpoints: kept }
}
