//! Manifest-driven run over every geo-unit: preprocess, fit, forecast,
//! analytics and risk, with a bounded number of units in flight.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use chrono::{DateTime, Utc};
use epicast_core::analytics::{build_report, risk_report, History};
use epicast_core::calibrate::forecast::DEFAULT_TOP_K;
use epicast_core::calibrate::{self, FitArtifact, FitConfig, Observed};
use epicast_core::error::RejectedRow;
use epicast_core::geo::{self, Clustering, SeriesKind};
use epicast_core::ingest::{self, CaseSeries};
use epicast_core::model::{build_mobility_curve, MobilityCurve};
use epicast_core::preprocess::{preprocess, Preprocessed};
use epicast_core::TimeSeries;
use serde::{Deserialize, Serialize};

use crate::manifest::Manifest;
use crate::store::{ArtifactKind, ArtifactStore};

/// Inputs for one geo-unit after clustering and aggregation.
#[derive(Debug, Clone)]
pub struct Unit {
    pub geo_id: String,
    pub cases: CaseSeries,
    pub mobility: Option<TimeSeries>,
    pub population: f64,
    /// Input rows for this unit that failed validation.
    pub rejected: Vec<RejectedRow>,
}

/// Load inputs and form geo-units. With a commute file, counties are
/// clustered and every series is aggregated to cluster level; counties with
/// cases but no commute edges become singleton units.
pub fn load_units(m: &Manifest) -> Result<(Vec<Unit>, Option<Clustering>)> {
    let cases = ingest::load_cases(&m.cases)?;
    let population = ingest::load_population(&m.population)?;
    let mobility = m.mobility.as_ref().map(ingest::load_mobility).transpose()?;
    let mut rejected: BTreeMap<String, Vec<RejectedRow>> = BTreeMap::new();
    for r in cases.rejected.iter().chain(mobility.iter().flat_map(|m| m.rejected.iter())) {
        if let Some(g) = &r.geo_id {
            rejected.entry(g.clone()).or_default().push(r.clone());
        }
    }
    for r in &cases.rejected {
        if r.geo_id.is_none() {
            log::warn!("{}: line {} rejected: {}", m.cases.display(), r.line, r.reason);
        }
    }

    let Some(commute_path) = &m.commute else {
        let units = cases
            .data
            .into_iter()
            .map(|(geo_id, cases)| Unit {
                population: population.data.get(&geo_id).copied().unwrap_or(f64::NAN),
                mobility: mobility.as_ref().and_then(|m| m.data.get(&geo_id).cloned()),
                rejected: rejected.remove(&geo_id).unwrap_or_default(),
                geo_id,
                cases,
            })
            .collect();
        return Ok((units, None));
    };

    let commute = ingest::load_commute(commute_path)?;
    let states = m.states.as_ref().map(ingest::load_states).transpose()?;
    let graph = geo::build_graph(&commute.data, m.cluster.symmetrize, states.as_ref().map(|s| &s.data));
    let mut clustering = if graph.is_empty() {
        Clustering::default()
    } else {
        geo::louvain(&graph, m.cluster.resolution, m.cluster.seed)
    };
    let loose: Vec<String> = cases
        .data
        .keys()
        .filter(|c| !clustering.assignment.contains_key(*c))
        .cloned()
        .collect();
    let singles = Clustering::singletons(loose.iter());
    clustering.assignment.extend(singles.assignment);
    clustering.clusters.extend(singles.clusters);
    let missing = clustering.assign_population(&population.data);
    for c in missing {
        log::warn!("county {c} has no population entry");
    }

    let pick = |f: fn(&CaseSeries) -> &TimeSeries| -> BTreeMap<String, TimeSeries> {
        cases.data.iter().map(|(k, v)| (k.clone(), f(v).clone())).collect()
    };
    let cum = geo::aggregate(&clustering, &pick(|c| &c.cum_cases), SeriesKind::Cumulative, None).series;
    let mut deaths = geo::aggregate(&clustering, &pick(|c| &c.cum_deaths), SeriesKind::Cumulative, None).series;
    let mob = mobility
        .as_ref()
        .map(|m| geo::aggregate(&clustering, &m.data, SeriesKind::Index, Some(&population.data)).series)
        .unwrap_or_default();
    let mut by_cluster: BTreeMap<String, Vec<RejectedRow>> = BTreeMap::new();
    for (county, rows) in rejected {
        if let Some(c) = clustering.assignment.get(&county) {
            by_cluster.entry(c.clone()).or_default().extend(rows);
        }
    }
    let units = cum
        .into_iter()
        .map(|(id, cum_cases)| {
            let cum_deaths = deaths.remove(&id).expect("deaths aggregated alongside cases");
            Unit {
                population: clustering.clusters[&id].population,
                mobility: mob.get(&id).cloned(),
                rejected: by_cluster.remove(&id).unwrap_or_default(),
                cases: CaseSeries { cum_cases, cum_deaths },
                geo_id: id,
            }
        })
        .collect();
    Ok((units, Some(clustering)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitAction {
    Fitted,
    /// A stored fit was younger than the cadence.
    Reused,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitSummary {
    pub geo_id: String,
    pub status: UnitStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitAction>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Wall time per stage in milliseconds.
    pub timings_ms: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    pub ok: usize,
    pub failed: usize,
    pub units: Vec<UnitSummary>,
}

/// Fit one unit from its preprocessed series.
pub fn fit_unit(pre: &Preprocessed, population: f64, mobility: Option<&TimeSeries>, config: &FitConfig) -> Result<FitArtifact> {
    let observed = Observed::from_preprocessed(pre, population, None)?;
    let curve: Option<MobilityCurve> = mobility.map(build_mobility_curve).transpose()?;
    let bps = observed.breakpoints_from(pre);
    Ok(calibrate::fit(&observed, &bps, config, curve.as_ref())?)
}

fn fresh_fit(store: &ArtifactStore, geo_id: &str, m: &Manifest, now: DateTime<Utc>) -> Option<FitArtifact> {
    let meta = store.meta(geo_id);
    let at = meta.artifacts.get(&ArtifactKind::Fit)?.written_at;
    let age_days = (now - at).num_seconds() as f64 / 86_400.0;
    if age_days < 0.0 || age_days >= m.cadence.fit_every_days {
        return None;
    }
    store.get(geo_id, ArtifactKind::Fit).ok()
}

fn run_unit(
    unit: &Unit,
    m: &Manifest,
    store: &ArtifactStore,
    force_fit: bool,
    now: DateTime<Utc>,
    timings: &mut BTreeMap<String, u64>,
    action: &mut Option<FitAction>,
) -> Result<()> {
    if !unit.rejected.is_empty() {
        let lines: Vec<String> = unit.rejected.iter().map(|r| format!("{} ({})", r.line, r.reason)).collect();
        bail!("{} input rows rejected: {}", lines.len(), lines.join("; "));
    }
    if !(unit.population > 0.0) {
        bail!("no population for {}", unit.geo_id);
    }
    let mut timed = |name: &str, t: Instant| {
        timings.insert(name.to_string(), t.elapsed().as_millis() as u64);
    };
    let id = &unit.geo_id;

    let t = Instant::now();
    let pre = preprocess(&unit.cases, &m.preprocess).context("preprocess")?;
    store.put(id, ArtifactKind::Preprocessed, &pre, now)?;
    timed("preprocess", t);

    let t = Instant::now();
    let reuse = if force_fit { None } else { fresh_fit(store, id, m, now) };
    let artifact = match reuse {
        Some(a) => {
            *action = Some(FitAction::Reused);
            a
        }
        None => {
            let a = fit_unit(&pre, unit.population, unit.mobility.as_ref(), &m.fit).context("fit")?;
            store.put(id, ArtifactKind::Fit, &a, now)?;
            *action = Some(FitAction::Fitted);
            a
        }
    };
    timed("fit", t);

    // keep `horizon` days past the latest data even when the fit is older
    let t = Instant::now();
    let history = History::from_preprocessed(&pre);
    let train_end = epicast_core::scenarios::train_end(&artifact);
    let lag = (history.as_of - train_end).num_days().max(0) as usize;
    let fc = calibrate::forecast(&artifact, m.horizon + lag, DEFAULT_TOP_K).context("forecast")?;
    store.put(id, ArtifactKind::Forecast, &fc, now)?;
    timed("forecast", t);

    let t = Instant::now();
    let best = artifact.best();
    let report = build_report(&best.params, &best.trajectory, &fc, &history, unit.population, &m.thresholds)
        .context("analytics")?;
    store.put(id, ArtifactKind::Analytics, &report, now)?;
    let risk = risk_report(&fc, &history, unit.population, &m.thresholds).context("risk")?;
    store.put(id, ArtifactKind::Risk, &risk, now)?;
    timed("analytics", t);
    Ok(())
}

fn process(unit: &Unit, m: &Manifest, store: &ArtifactStore, force_fit: bool, now: DateTime<Utc>) -> UnitSummary {
    let mut timings = BTreeMap::new();
    let mut action = None;
    let outcome = catch_unwind(AssertUnwindSafe(|| {
        run_unit(unit, m, store, force_fit, now, &mut timings, &mut action)
    }));
    let error = match outcome {
        Ok(Ok(())) => None,
        Ok(Err(e)) => Some(format!("{e:#}")),
        Err(panic) => Some(
            panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()),
        ),
    };
    if let Some(e) = &error {
        log::error!("{}: {e}", unit.geo_id);
    }
    UnitSummary {
        geo_id: unit.geo_id.clone(),
        status: if error.is_none() { UnitStatus::Ok } else { UnitStatus::Failed },
        fit: action,
        error,
        timings_ms: timings,
    }
}

#[cfg(feature = "parallel")]
fn for_each_unit(units: &[Unit], workers: usize, f: impl Fn(&Unit) -> UnitSummary + Sync + Send) -> Result<Vec<UnitSummary>> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.min(units.len()).max(1))
        .build()?;
    Ok(pool.install(|| units.par_iter().map(f).collect()))
}

#[cfg(not(feature = "parallel"))]
fn for_each_unit(units: &[Unit], _workers: usize, f: impl Fn(&Unit) -> UnitSummary) -> Result<Vec<UnitSummary>> {
    Ok(units.iter().map(f).collect())
}

pub fn run_pipeline(m: &Manifest, store: &ArtifactStore, force_fit: bool) -> Result<RunSummary> {
    run_pipeline_at(m, store, force_fit, Utc::now())
}

/// Run with an explicit clock, which fixes the cadence decision.
pub fn run_pipeline_at(m: &Manifest, store: &ArtifactStore, force_fit: bool, now: DateTime<Utc>) -> Result<RunSummary> {
    m.validate()?;
    let started_at = Utc::now();
    let (units, clustering) = load_units(m)?;
    if let Some(c) = &clustering {
        crate::store::write_json(&store.root().join("clusters.json"), &c.to_file())?;
    }
    let selected: Vec<Unit> = units.into_iter().filter(|u| m.geo_ids.includes(&u.geo_id)).collect();
    log::info!("running {} geo-units with up to {} workers", selected.len(), m.workers);
    let summaries = for_each_unit(&selected, m.workers, |u| process(u, m, store, force_fit, now))?;
    let ok = summaries.iter().filter(|s| s.status == UnitStatus::Ok).count();
    let summary = RunSummary {
        started_at,
        finished_at: Utc::now(),
        ok,
        failed: summaries.len() - ok,
        units: summaries,
    };
    crate::store::write_json(&store.summary_path(), &summary)?;
    Ok(summary)
}
