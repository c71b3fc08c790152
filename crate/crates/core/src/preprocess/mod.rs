//! Denoising of reported series and regime-change detection.

pub mod adpf;
pub mod inflection;
pub mod isotonic;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

pub use adpf::{adpf_smooth, AdpfConfig};
pub use inflection::{detect_inflections, Inflection, InflectionConfig, InflectionKind, InflectionSet};
pub use isotonic::{isotonic_fit, isotonic_unweighted};

use crate::error::Result;
use crate::ingest::CaseSeries;
use crate::series::TimeSeries;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub adpf: AdpfConfig,
    pub inflection: InflectionConfig,
}

/// Breakpoint as written to `preprocessed.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatedInflection {
    pub day: usize,
    pub date: NaiveDate,
    pub kind: InflectionKind,
    pub significance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessed {
    pub geo_id: String,
    pub cum_cases: TimeSeries,
    pub cum_deaths: TimeSeries,
    /// Daily cases from the isotonic cumulative series, before smoothing.
    pub daily: TimeSeries,
    pub daily_smoothed: TimeSeries,
    pub inflections: Vec<DatedInflection>,
}

impl Preprocessed {
    pub fn inflection_set(&self) -> InflectionSet {
        InflectionSet {
            breakpoints: self
                .inflections
                .iter()
                .map(|i| Inflection {
                    day: i.day,
                    kind: i.kind,
                    significance: i.significance,
                })
                .collect(),
        }
    }
}

/// Daily counts as first differences of a cumulative series. The first day
/// has no predecessor and repeats the second day's difference.
pub fn daily_from_cumulative(cum: &TimeSeries) -> TimeSeries {
    let mut daily = cum.diff();
    match daily.values.len() {
        0 => {}
        1 => daily.values[0] = 0.0,
        _ => daily.values[0] = daily.values[1],
    }
    daily
}

/// Isotonic cumulative series, smoothed daily cases and inflections for one
/// geo-unit.
pub fn preprocess(series: &CaseSeries, config: &PreprocessConfig) -> Result<Preprocessed> {
    let geo = series.cum_cases.geo_id.clone();
    let iso = |ts: &TimeSeries| -> Result<TimeSeries> {
        Ok(TimeSeries::new(
            ts.geo_id.clone(),
            ts.start,
            isotonic_unweighted(&ts.values)?,
        ))
    };
    let cum_cases = iso(&series.cum_cases)?;
    let cum_deaths = iso(&series.cum_deaths)?;
    let daily = daily_from_cumulative(&cum_cases);
    let daily_smoothed = adpf_smooth(&daily, &config.adpf)?;
    let inflections = detect_inflections(&daily_smoothed, &config.inflection)
        .breakpoints
        .into_iter()
        .map(|b| DatedInflection {
            day: b.day,
            date: daily_smoothed.date_at(b.day),
            kind: b.kind,
            significance: b.significance,
        })
        .collect();
    Ok(Preprocessed {
        geo_id: geo,
        cum_cases,
        cum_deaths,
        daily,
        daily_smoothed,
        inflections,
    })
}
