//! The SAYCIWRDS compartmental model.
//!
//! Compartments: susceptible (S), mobility-isolated (Y), asymptomatic or
//! unreported infectious (A), pre-symptomatic (C), reported infectious (I),
//! worsened (W), removed (R) and dead (D). The C -> I transition is the
//! reporting event. S and Y exchange population at the day-over-day rate of
//! change of mobility, one direction at a time.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::TimeSeries;

/// Immunity loss: one over ten months of 365.25 / 12 days.
pub const RHO_DEFAULT: f64 = 1.0 / 304.375;
/// Share of the population placed in R at t0.
pub const HERD_IMMUNITY_FRACTION: f64 = 0.2;
/// Days of reports counted as currently active at t0.
pub const ACTIVE_WINDOW_DAYS: usize = 14;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CompartmentState {
    pub s: f64,
    pub y: f64,
    pub a: f64,
    pub c: f64,
    pub i: f64,
    pub w: f64,
    pub r: f64,
    pub d: f64,
}

impl CompartmentState {
    pub fn to_array(&self) -> [f64; 8] {
        [self.s, self.y, self.a, self.c, self.i, self.w, self.r, self.d]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            s: v[0],
            y: v[1],
            a: v[2],
            c: v[3],
            i: v[4],
            w: v[5],
            r: v[6],
            d: v[7],
        }
    }

    pub fn total(&self) -> f64 {
        self.to_array().iter().sum()
    }
}

/// One piece of a piecewise-constant parameter, active from day `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub t: f64,
    pub v: f64,
}

/// Piecewise-constant parameter. The first piece starts at day 0, starts are
/// strictly increasing and the last piece extends forever.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Segment>", into = "Vec<Segment>")]
pub struct Segments(Vec<Segment>);

impl Segments {
    pub fn new(pieces: Vec<Segment>) -> Result<Self> {
        if pieces.is_empty() {
            return Err(Error::InvalidInput("segments must be non-empty".into()));
        }
        if pieces[0].t != 0.0 {
            return Err(Error::InvalidInput("first segment must start at t = 0".into()));
        }
        if pieces.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(Error::InvalidInput("segment starts must be strictly increasing".into()));
        }
        if pieces.iter().any(|p| !p.v.is_finite() || p.v < 0.0) {
            return Err(Error::InvalidInput("segment values must be finite and >= 0".into()));
        }
        Ok(Self(pieces))
    }

    pub fn constant(v: f64) -> Self {
        Self(vec![Segment { t: 0.0, v }])
    }

    /// Build from a first value and `(start, value)` changes. Changes at or
    /// before day 0 or not after the previous start are folded into the
    /// piece they overlap.
    pub fn from_changes(first: f64, changes: &[(f64, f64)]) -> Self {
        let mut pieces = vec![Segment { t: 0.0, v: first }];
        let mut sorted = changes.to_vec();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (t, v) in sorted {
            let last = pieces.last_mut().expect("non-empty");
            if t <= last.t {
                last.v = v;
            } else {
                pieces.push(Segment { t, v });
            }
        }
        Self(pieces)
    }

    pub fn pieces(&self) -> &[Segment] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn first(&self) -> f64 {
        self.0[0].v
    }

    /// Start days of every piece after the first.
    pub fn change_times(&self) -> impl Iterator<Item = f64> + '_ {
        self.0.iter().skip(1).map(|s| s.t)
    }

    /// Value at `t`, taking `t < 0` as day 0.
    #[inline]
    pub fn value_at(&self, t: f64) -> f64 {
        let idx = self.0.partition_point(|s| s.t <= t);
        self.0[idx.saturating_sub(1)].v
    }

    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        Self(self.0.iter().map(|s| Segment { t: s.t, v: f(s.v) }).collect())
    }
}

impl TryFrom<Vec<Segment>> for Segments {
    type Error = Error;
    fn try_from(v: Vec<Segment>) -> Result<Self> {
        Segments::new(v)
    }
}

impl From<Segments> for Vec<Segment> {
    fn from(s: Segments) -> Self {
        s.0
    }
}

/// Value of the piece whose `[t_k, t_{k+1})` interval contains `t`.
pub fn param_at(segments: &Segments, t: f64) -> Result<f64> {
    if t < 0.0 || t.is_nan() {
        return Err(Error::NegativeTime(t));
    }
    Ok(segments.value_at(t))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiseaseParams {
    #[serde(rename = "N")]
    pub n: f64,
    pub alpha: f64,
    pub gamma_a: f64,
    pub gamma_i: f64,
    pub gamma_w: f64,
    pub rho: f64,
    pub beta: Segments,
    pub xi: Segments,
    pub omega: Segments,
    pub mu_d: Segments,
}

impl DiseaseParams {
    pub fn validate(&self) -> Result<()> {
        let scalars = [self.n, self.alpha, self.gamma_a, self.gamma_i, self.gamma_w, self.rho];
        if scalars.iter().any(|v| !v.is_finite() || *v < 0.0) || self.n <= 0.0 {
            return Err(Error::InvalidInput("rates must be finite and >= 0, N > 0".into()));
        }
        if self.xi.pieces().iter().any(|s| s.v > 1.0) {
            return Err(Error::InvalidInput("xi must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Every time at which some piecewise parameter changes, sorted.
    pub fn discontinuities(&self) -> Vec<f64> {
        let mut out: Vec<f64> = [&self.beta, &self.xi, &self.omega, &self.mu_d]
            .iter()
            .flat_map(|s| s.change_times())
            .collect();
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }
}

/// Continuous day-over-day mobility change `f_mob(t)`.
///
/// The index is smoothed with a centred 7-day mean (truncated at the ends),
/// differenced, and divided by the mean of the first seven smoothed values.
/// Between daily samples the curve is linear; past the last sample it ramps
/// over one day to the mean of the last 14 samples and stays there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MobilityCurve {
    /// Calendar date of sample 0.
    pub origin: Option<NaiveDate>,
    /// Raw index, kept so counterfactuals can re-derive the curve.
    pub index: Vec<f64>,
    pub baseline: f64,
    /// `g[k] = f_mob(k)` for each day of data.
    pub samples: Vec<f64>,
    pub extrapolation: f64,
    /// Model day 0 sits this many days after `origin`.
    #[serde(default)]
    pub offset: f64,
}

impl MobilityCurve {
    /// No mobility coupling: `f_mob = 0` everywhere.
    pub fn flat() -> Self {
        Self {
            origin: None,
            index: Vec::new(),
            baseline: 1.0,
            samples: Vec::new(),
            extrapolation: 0.0,
            offset: 0.0,
        }
    }

    /// Same curve re-anchored so model day 0 is `date`.
    pub fn aligned_to(&self, date: NaiveDate) -> Self {
        let mut out = self.clone();
        if let Some(origin) = self.origin {
            out.offset = (date - origin).num_days() as f64;
        }
        out
    }

    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        let x = t + self.offset;
        let n = self.samples.len();
        if n == 0 {
            return self.extrapolation;
        }
        if x <= 0.0 {
            // before the data the population is not moving between pools
            return if x < 0.0 { 0.0 } else { self.samples[0] };
        }
        let last = (n - 1) as f64;
        if x < last {
            let k = x.floor() as usize;
            let frac = x - k as f64;
            return self.samples[k] + frac * (self.samples[k + 1] - self.samples[k]);
        }
        if x < last + 1.0 {
            let frac = x - last;
            return self.samples[n - 1] + frac * (self.extrapolation - self.samples[n - 1]);
        }
        self.extrapolation
    }

    /// Knot positions in model time; the curve is smooth between them.
    pub fn knots_in(&self, t_end: f64) -> Vec<f64> {
        (0..=self.samples.len())
            .map(|k| k as f64 - self.offset)
            .filter(|t| *t > 0.0 && *t < t_end)
            .collect()
    }
}

pub const MIN_MOBILITY_DAYS: usize = 8;

fn centred_mean(values: &[f64], half: usize) -> Vec<f64> {
    let n = values.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Build `f_mob` from a raw mobility index.
pub fn build_mobility_curve(mobility: &TimeSeries) -> Result<MobilityCurve> {
    curve_from_index(Some(mobility.start), &mobility.values, None)
}

/// Curve from a raw index. `baseline` overrides the first-week mean, which
/// keeps counterfactual curves on the same scale as their base.
pub fn curve_from_index(
    origin: Option<NaiveDate>,
    index: &[f64],
    baseline: Option<f64>,
) -> Result<MobilityCurve> {
    if index.len() < MIN_MOBILITY_DAYS {
        return Err(Error::Precondition(format!(
            "need at least {MIN_MOBILITY_DAYS} mobility observations, got {}",
            index.len()
        )));
    }
    let smooth = centred_mean(index, 3);
    let baseline = baseline.unwrap_or_else(|| smooth[..7].iter().sum::<f64>() / 7.0);
    if !(baseline > 0.0) || !baseline.is_finite() {
        return Err(Error::DegenerateMobility(format!("baseline {baseline}")));
    }
    let mut samples = Vec::with_capacity(smooth.len());
    samples.push(0.0);
    for w in smooth.windows(2) {
        samples.push((w[1] - w[0]) / baseline);
    }
    let tail = samples.len().min(14);
    let extrapolation = samples[samples.len() - tail..].iter().sum::<f64>() / tail as f64;
    Ok(MobilityCurve {
        origin,
        index: index.to_vec(),
        baseline,
        samples,
        extrapolation,
        offset: 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferRates {
    pub y_to_s: f64,
    pub s_to_y: f64,
}

#[inline]
pub fn transfer_rates(curve: &MobilityCurve, t: f64) -> TransferRates {
    let f = curve.eval(t);
    TransferRates {
        y_to_s: f.max(0.0),
        s_to_y: (-f).max(0.0),
    }
}

/// Right-hand side of the model, in compartment order S, Y, A, C, I, W, R, D.
#[inline]
pub fn derivatives_array(
    x: &[f64],
    t: f64,
    params: &DiseaseParams,
    curve: &MobilityCurve,
) -> [f64; 8] {
    let (s, y, a, c, i, w, r) = (x[0], x[1], x[2], x[3], x[4], x[5], x[6]);
    let beta = params.beta.value_at(t);
    let xi = params.xi.value_at(t);
    let omega = params.omega.value_at(t);
    let mu = params.mu_d.value_at(t);
    let rates = transfer_rates(curve, t);

    let infection = beta * s * (i + a + c) / params.n;
    let pool = s + y;
    let back = y.min(rates.y_to_s * pool);
    let away = s.min(rates.s_to_y * pool);

    [
        -infection + params.rho * r + back - away,
        away - back,
        (1.0 - xi) * infection - params.gamma_a * a,
        xi * infection - params.alpha * c,
        params.alpha * c - (params.gamma_i + omega) * i,
        omega * i - (mu + params.gamma_w) * w,
        params.gamma_i * i + params.gamma_a * a + params.gamma_w * w - params.rho * r,
        mu * w,
    ]
}

pub fn derivatives(
    state: &CompartmentState,
    t: f64,
    params: &DiseaseParams,
    curve: &MobilityCurve,
) -> CompartmentState {
    CompartmentState::from_slice(&derivatives_array(&state.to_array(), t, params, curve))
}

/// Seed the compartments at t0 from reports.
///
/// `active` is the number of cases reported over the last
/// [`ACTIVE_WINDOW_DAYS`] days; it seeds both I and C, and A follows the
/// reporting split `A = I (1 - xi) / xi`. Earlier cases not yet dead count as
/// recovered on top of the herd-immunity share of R.
pub fn initial_state(
    cum_cases: f64,
    active: f64,
    cum_deaths: f64,
    xi0: f64,
    n: f64,
) -> Result<CompartmentState> {
    if !(n > 0.0) {
        return Err(Error::InvalidInput("population must be positive".into()));
    }
    let active = active.clamp(0.0, cum_cases.max(active));
    let recovered = (cum_cases - active - cum_deaths).max(0.0);
    let i = active;
    let c = active;
    let a = active * (1.0 - xi0) / xi0.max(1e-6);
    let r = HERD_IMMUNITY_FRACTION * n + recovered;
    let d = cum_deaths;
    let s = n - (a + c + i + r + d);
    if s < 0.0 {
        return Err(Error::InfeasibleSeed { susceptible: s });
    }
    Ok(CompartmentState {
        s,
        y: 0.0,
        a,
        c,
        i,
        w: 0.0,
        r,
        d,
    })
}
