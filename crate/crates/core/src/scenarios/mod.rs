//! What-if simulation under altered mobility, plus the hospital and ICU
//! demand chain driven by predicted incidence.

pub mod hosp;

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::calibrate::forecast::{envelope_members, DEFAULT_TOP_K};
use crate::calibrate::{self, FitArtifact, Forecast};
use crate::error::{Error, Result};
use crate::model::{curve_from_index, MobilityCurve, MIN_MOBILITY_DAYS};

pub use hosp::{fit_hosp, project_hosp, HospConfig, HospFit, HospParams, HospProjection};

/// Days the adjustment may start before the end of training.
pub const MAX_LOOKBACK_DAYS: i64 = 7;

/// A mobility what-if on top of a stored fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub geo_id: String,
    /// Percentage change of the mobility index, e.g. `-7.0`.
    pub adjustment: f64,
    /// First day the adjusted index applies.
    pub adjustment_date: NaiveDate,
    /// Days past the end of training.
    pub horizon: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl ScenarioSpec {
    /// Check bounds against a fit whose training ends on `train_end`.
    pub fn validate(&self, train_end: NaiveDate) -> Result<()> {
        if !(-100.0..=100.0).contains(&self.adjustment) {
            return Err(Error::InvalidScenario {
                field: "adjustment",
                reason: format!("{} is outside [-100, 100]", self.adjustment),
            });
        }
        if self.horizon == 0 {
            return Err(Error::InvalidScenario {
                field: "horizon",
                reason: "must be at least 1 day".into(),
            });
        }
        let earliest = train_end - Days::new(MAX_LOOKBACK_DAYS as u64);
        let latest = train_end + Days::new(self.horizon as u64);
        if self.adjustment_date < earliest || self.adjustment_date > latest {
            return Err(Error::InvalidScenario {
                field: "adjustment_date",
                reason: format!("{} is outside [{earliest}, {latest}]", self.adjustment_date),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub spec: ScenarioSpec,
    pub base: Forecast,
    pub scenario: Forecast,
}

pub fn train_end(artifact: &FitArtifact) -> NaiveDate {
    artifact.context.start + Days::new(artifact.train_len().saturating_sub(1) as u64)
}

/// Base curve with the mobility index scaled by `1 + adjustment / 100` from
/// `from` onward, covering at least `through` days of model time.
///
/// Smoothing and differencing are linear in the index, so the adjusted curve
/// is the base curve plus the curve of the index change alone, derived with
/// the base baseline. A zero adjustment therefore returns the base curve
/// exactly. Past the end of the data the index is extended along the base
/// extrapolation.
pub fn adjusted_curve(base: &MobilityCurve, from: NaiveDate, adjustment: f64, through: f64) -> Result<MobilityCurve> {
    let origin = match base.origin {
        Some(o) if !base.index.is_empty() => o,
        _ => return Err(Error::Precondition("curve has no mobility index".into())),
    };
    let start = (from - origin).num_days().max(0) as usize;
    // pad so the pulse has settled to its tail value before the run ends
    let end = (through + base.offset).ceil().max(0.0) as usize;
    let len = (end + 21).max(base.index.len()).max(start + 21);
    let slope = base.extrapolation * base.baseline;
    let mut extended = base.index.clone();
    while extended.len() < len {
        let last = extended[extended.len() - 1];
        extended.push(last + slope);
    }
    let factor = adjustment / 100.0;
    let delta: Vec<f64> = extended
        .iter()
        .enumerate()
        .map(|(k, v)| if k >= start { factor * v } else { 0.0 })
        .collect();
    let pulse = curve_from_index(Some(origin), &delta, Some(base.baseline))?;
    let samples = pulse
        .samples
        .iter()
        .enumerate()
        .map(|(k, p)| base.eval(k as f64 - base.offset) + p)
        .collect();
    Ok(MobilityCurve {
        origin: Some(origin),
        index: extended.iter().zip(&delta).map(|(a, b)| a + b).collect(),
        baseline: base.baseline,
        samples,
        extrapolation: base.extrapolation + pulse.extrapolation,
        offset: base.offset,
    })
}

/// Re-run the stored fits under the adjusted mobility. Parameters are left
/// untouched; the base forecast is returned alongside for comparison.
pub fn run_scenario(spec: &ScenarioSpec, artifact: &FitArtifact) -> Result<ScenarioResult> {
    if spec.geo_id != artifact.context.geo_id {
        return Err(Error::InvalidScenario {
            field: "geo_id",
            reason: format!("fit is for {}", artifact.context.geo_id),
        });
    }
    spec.validate(train_end(artifact))?;
    if envelope_members(&artifact.results, DEFAULT_TOP_K).is_empty() {
        return Err(Error::InvalidInput("fit has no results".into()));
    }
    let days = (artifact.train_len() + spec.horizon) as f64;
    let base_curve = match artifact.context.curve.origin {
        Some(_) => artifact.context.curve.clone(),
        // no mobility data: a constant index, which has f_mob = 0 everywhere
        None => curve_from_index(
            Some(artifact.context.start),
            &[1.0; MIN_MOBILITY_DAYS],
            Some(1.0),
        )?,
    };
    let curve = adjusted_curve(&base_curve, spec.adjustment_date, spec.adjustment, days)?;
    let base = calibrate::forecast(artifact, spec.horizon, DEFAULT_TOP_K)?;
    let scenario = calibrate::forecast_with_curve(artifact, spec.horizon, DEFAULT_TOP_K, &curve)?;
    Ok(ScenarioResult {
        spec: spec.clone(),
        base,
        scenario,
    })
}
