//! Daily-cadence time series keyed by geo-unit.

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

/// Gap-free daily observations for one geo-unit.
///
/// Dates are implicit: `values[i]` belongs to `start + i days`, which makes
/// the strictly-increasing and gap-free invariants hold by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub geo_id: String,
    pub start: NaiveDate,
    pub values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(geo_id: impl Into<String>, start: NaiveDate, values: Vec<f64>) -> Self {
        Self {
            geo_id: geo_id.into(),
            start,
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn date_at(&self, index: usize) -> NaiveDate {
        self.start + Days::new(index as u64)
    }

    /// Last date covered, or `start` for an empty series.
    pub fn end(&self) -> NaiveDate {
        self.date_at(self.len().saturating_sub(1))
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        (0..self.len()).map(|i| self.date_at(i))
    }

    /// Day offset of `date` relative to `start` (negative before the series).
    pub fn offset_of(&self, date: NaiveDate) -> i64 {
        (date - self.start).num_days()
    }

    pub fn get(&self, date: NaiveDate) -> Option<f64> {
        let off = self.offset_of(date);
        if off < 0 {
            return None;
        }
        self.values.get(off as usize).copied()
    }

    /// First differences with `values[0]` as the first element.
    pub fn diff(&self) -> TimeSeries {
        let mut out = Vec::with_capacity(self.len());
        let mut prev = 0.0;
        for &v in &self.values {
            out.push(v - prev);
            prev = v;
        }
        TimeSeries::new(self.geo_id.clone(), self.start, out)
    }

    /// Sub-series over `[from, to)` index range.
    pub fn slice(&self, from: usize, to: usize) -> TimeSeries {
        let to = to.min(self.len());
        let from = from.min(to);
        TimeSeries::new(
            self.geo_id.clone(),
            self.date_at(from),
            self.values[from..to].to_vec(),
        )
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> TimeSeries {
        TimeSeries::new(
            self.geo_id.clone(),
            self.start,
            self.values.iter().map(|&v| f(v)).collect(),
        )
    }
}
