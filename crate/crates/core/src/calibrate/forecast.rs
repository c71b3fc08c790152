//! Forecasts with an envelope from the best few fits.

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use super::{FitArtifact, FitContext, FitResult, Trajectory};
use crate::error::{Error, Result};
use crate::model::{DiseaseParams, MobilityCurve};

pub const DEFAULT_TOP_K: usize = 5;
/// Fits whose loss exceeds this multiple of the best are left out of the envelope.
pub const LOSS_RATIO: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub central: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Band {
    fn from_members(members: &[Vec<f64>]) -> Self {
        let central = members[0].clone();
        let mut lower = central.clone();
        let mut upper = central.clone();
        for m in &members[1..] {
            for (i, v) in m.iter().enumerate() {
                lower[i] = lower[i].min(*v);
                upper[i] = upper[i].max(*v);
            }
        }
        Self { central, lower, upper }
    }

    fn map(&mut self, f: impl Fn(&mut Vec<f64>)) {
        f(&mut self.central);
        f(&mut self.lower);
        f(&mut self.upper);
    }

    pub fn len(&self) -> usize {
        self.central.len()
    }

    pub fn is_empty(&self) -> bool {
        self.central.is_empty()
    }
}

fn running_max(v: &mut Vec<f64>) {
    let mut m = f64::NEG_INFINITY;
    for x in v.iter_mut() {
        m = m.max(*x);
        *x = m;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    pub geo_id: String,
    /// Training window followed by the horizon.
    pub dates: Vec<NaiveDate>,
    pub train_len: usize,
    pub horizon: usize,
    pub daily_cases: Band,
    pub cum_cases: Band,
    pub cum_deaths: Band,
    /// Parameters of the central (best) fit.
    pub params: DiseaseParams,
    /// Number of fits spanning the envelope.
    pub members: usize,
}

impl Forecast {
    /// Index of the first day after training.
    pub fn horizon_start(&self) -> usize {
        self.train_len
    }

    /// Central daily cases over the horizon only.
    pub fn horizon_daily(&self) -> &[f64] {
        &self.daily_cases.central[self.train_len.min(self.dates.len())..]
    }
}

/// Fits admitted to the envelope: the best `k` with loss within
/// [`LOSS_RATIO`] of the best.
pub fn envelope_members(results: &[FitResult], k: usize) -> Vec<&FitResult> {
    let Some(best) = results.first() else {
        return Vec::new();
    };
    results
        .iter()
        .take(k.max(1))
        .filter(|r| r.loss <= LOSS_RATIO * best.loss || r.rank == best.rank)
        .collect()
}

/// Extend the best `k` fits `horizon` days past the training window.
pub fn forecast(artifact: &FitArtifact, horizon: usize, k: usize) -> Result<Forecast> {
    forecast_with_curve(artifact, horizon, k, &artifact.context.curve)
}

/// As [`forecast`] with the mobility curve replaced.
pub fn forecast_with_curve(
    artifact: &FitArtifact,
    horizon: usize,
    k: usize,
    curve: &MobilityCurve,
) -> Result<Forecast> {
    let members = envelope_members(&artifact.results, k);
    if members.is_empty() {
        return Err(Error::InvalidInput("no fits to forecast from".into()));
    }
    build(&artifact.context, &members, artifact.train_len(), horizon, curve)
}

pub(crate) fn build(
    context: &FitContext,
    members: &[&FitResult],
    train_len: usize,
    horizon: usize,
    curve: &MobilityCurve,
) -> Result<Forecast> {
    let days = train_len + horizon;
    let mut runs: Vec<Trajectory> = Vec::with_capacity(members.len());
    for (i, m) in members.iter().enumerate() {
        match context.simulate_with(&m.params, curve, days) {
            Ok(tr) => runs.push(tr),
            Err(e) if i == 0 => return Err(e),
            Err(_) => {}
        }
    }
    let pick = |f: fn(&Trajectory) -> &Vec<f64>| runs.iter().map(|t| f(t).clone()).collect::<Vec<_>>();
    let mut daily = Band::from_members(&pick(|t| &t.daily_cases));
    let mut cum = Band::from_members(&pick(|t| &t.cum_cases));
    let mut deaths = Band::from_members(&pick(|t| &t.cum_deaths));
    daily.map(|v| v.iter_mut().for_each(|x| *x = x.max(0.0)));
    cum.map(running_max);
    deaths.map(running_max);
    let dates = (0..days)
        .map(|d| context.start + Days::new(d as u64))
        .collect();
    Ok(Forecast {
        geo_id: context.geo_id.clone(),
        dates,
        train_len,
        horizon,
        daily_cases: daily,
        cum_cases: cum,
        cum_deaths: deaths,
        params: members[0].params.clone(),
        members: runs.len(),
    })
}
