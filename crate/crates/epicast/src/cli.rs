//! Command-line interface.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use epicast_core::analytics::{build_report, risk_report, History, RiskThresholds};
use epicast_core::calibrate::{self, FitArtifact, FitConfig, Forecast};
use epicast_core::geo::{self, Clustering};
use epicast_core::ingest;
use epicast_core::preprocess::{preprocess, PreprocessConfig, Preprocessed};
use epicast_core::scenarios::{fit_hosp, project_hosp, HospConfig, HospFit, ScenarioSpec};
use epicast_core::TimeSeries;
use serde::{Deserialize, Serialize};

use crate::manifest::Manifest;
use crate::store::{read_json, write_atomic, write_json};

#[derive(Debug, Parser)]
#[command(name = "epicast", version, about = "Epidemic forecasting engine")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cluster counties on commute flows.
    Cluster(ClusterArgs),
    /// Monotone cumulative series, smoothed daily cases and inflections.
    Preprocess(PreprocessArgs),
    /// Fit the model for one geo-unit.
    Fit(FitArgs),
    /// Extend a fit past its training window.
    Forecast(ForecastArgs),
    /// Current and projected community risk.
    Risk(RiskArgs),
    /// Reproduction numbers, doubling time, trends and risk.
    Analytics(AnalyticsArgs),
    /// Re-run a fit under a mobility change.
    Scenario(ScenarioArgs),
    /// Hospital and ICU census add-on.
    Hosp {
        #[command(subcommand)]
        command: HospCommand,
    },
    /// Run the whole pipeline from a manifest.
    Run(RunArgs),
    /// Serve stored artifacts over HTTP.
    Serve(ServeArgs),
    /// Write model-generated input files and a manifest.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub commute: PathBuf,
    /// `geo_id,state` file; forbids clusters spanning states.
    #[arg(long)]
    pub state_constraint: Option<PathBuf>,
    #[arg(long)]
    pub population: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub resolution: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub cases: PathBuf,
    /// Records each unit's population for later `fit` calls.
    #[arg(long)]
    pub population: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub geo: String,
    #[arg(long)]
    pub preprocessed: PathBuf,
    #[arg(long)]
    pub mobility: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the population stored by `preprocess`.
    #[arg(long)]
    pub population: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    #[arg(long)]
    pub fit: PathBuf,
    #[arg(long, default_value_t = 28)]
    pub horizon: usize,
    #[arg(long, default_value_t = calibrate::forecast::DEFAULT_TOP_K)]
    pub top_k: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RiskArgs {
    #[arg(long)]
    pub forecast: PathBuf,
    #[arg(long)]
    pub cases: PathBuf,
    #[arg(long)]
    pub population: PathBuf,
    /// JSON such as `{"kappa":10,"lambda":5,"tau":2}`.
    #[arg(long)]
    pub thresholds: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyticsArgs {
    #[arg(long)]
    pub fit: PathBuf,
    #[arg(long)]
    pub forecast: PathBuf,
    #[arg(long)]
    pub cases: PathBuf,
    #[arg(long)]
    pub population: PathBuf,
    #[arg(long)]
    pub thresholds: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    #[arg(long)]
    pub fit: PathBuf,
    /// Mobility change in percent, e.g. -7.
    #[arg(long, allow_negative_numbers = true)]
    pub adjust: f64,
    #[arg(long)]
    pub from: NaiveDate,
    #[arg(long)]
    pub horizon: usize,
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum HospCommand {
    /// Fit chain rates to census data, driven by forecast incidence.
    Fit(HospFitArgs),
    /// Project hospital and ICU census from a forecast.
    Project(HospProjectArgs),
}

#[derive(Debug, Args)]
pub struct HospFitArgs {
    #[arg(long)]
    pub forecast: PathBuf,
    /// `geo_id,date,hosp_census,icu_census`.
    #[arg(long)]
    pub census: PathBuf,
    /// Census geo id; defaults to the forecast's.
    #[arg(long)]
    pub geo: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct HospProjectArgs {
    #[arg(long)]
    pub hosp_fit: PathBuf,
    #[arg(long)]
    pub forecast: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Refit even when a fresh fit is stored.
    #[arg(long)]
    pub force_fit: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: String,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub counties: usize,
    #[arg(long, default_value_t = 1)]
    pub counties_per_cluster: usize,
    #[arg(long, default_value_t = 120)]
    pub days: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    /// Drop in the mobility index around the transmission change, in points.
    #[arg(long, default_value_t = 30.0)]
    pub mobility_depth: f64,
    /// Route counties through commute clustering in the manifest.
    #[arg(long)]
    pub cluster: bool,
}

/// One unit in `preprocessed.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessedUnit {
    #[serde(flatten)]
    pub preprocessed: Preprocessed,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub population: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessedFile {
    pub units: Vec<PreprocessedUnit>,
}

fn config_or_default<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    path.map(read_json).transpose().map(Option::unwrap_or_default)
}

fn thresholds(arg: Option<&str>) -> Result<RiskThresholds> {
    let th: RiskThresholds = match arg {
        Some(s) => serde_json::from_str(s).context("parsing --thresholds")?,
        None => RiskThresholds::default(),
    };
    th.validate()?;
    Ok(th)
}

fn population_of(path: &Path, geo: &str) -> Result<f64> {
    let pop = ingest::load_population(path)?;
    pop.data
        .get(geo)
        .copied()
        .ok_or_else(|| anyhow!("{} has no population for {geo}", path.display()))
}

fn history_of(cases: &Path, geo: &str) -> Result<History> {
    let loaded = ingest::load_cases(cases)?;
    let series = loaded
        .data
        .get(geo)
        .ok_or_else(|| anyhow!("{} has no cases for {geo}", cases.display()))?;
    Ok(History::from_cases(series)?)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Cluster(a) => {
            let commute = ingest::load_commute(&a.commute)?;
            let states = a.state_constraint.as_ref().map(ingest::load_states).transpose()?;
            let graph = geo::build_graph(&commute.data, true, states.as_ref().map(|s| &s.data));
            let mut clustering = if graph.is_empty() {
                Clustering::default()
            } else {
                geo::louvain(&graph, a.resolution, a.seed)
            };
            if let Some(p) = &a.population {
                for c in clustering.assign_population(&ingest::load_population(p)?.data) {
                    log::warn!("county {c} has no population entry");
                }
            }
            write_json(&a.out, &clustering.to_file())
        }
        Command::Preprocess(a) => {
            let cases = ingest::load_cases(&a.cases)?;
            for r in &cases.rejected {
                log::warn!("line {} rejected: {}", r.line, r.reason);
            }
            let pop = a.population.as_ref().map(ingest::load_population).transpose()?;
            let config: PreprocessConfig = config_or_default(a.config.as_deref())?;
            let mut units = Vec::new();
            for (geo, series) in &cases.data {
                let pre = preprocess(series, &config).with_context(|| format!("preprocessing {geo}"))?;
                units.push(PreprocessedUnit {
                    population: pop.as_ref().and_then(|p| p.data.get(geo).copied()),
                    preprocessed: pre,
                });
            }
            write_json(&a.out, &PreprocessedFile { units })
        }
        Command::Fit(a) => {
            let file: PreprocessedFile = read_json(&a.preprocessed)?;
            let unit = file
                .units
                .into_iter()
                .find(|u| u.preprocessed.geo_id == a.geo)
                .ok_or_else(|| anyhow!("{} has no unit {}", a.preprocessed.display(), a.geo))?;
            let population = match &a.population {
                Some(p) => population_of(p, &a.geo)?,
                None => unit
                    .population
                    .ok_or_else(|| anyhow!("no population for {}; pass --population", a.geo))?,
            };
            let mobility = match &a.mobility {
                Some(p) => Some(
                    ingest::load_mobility(p)?
                        .data
                        .remove(&a.geo)
                        .ok_or_else(|| anyhow!("{} has no mobility for {}", p.display(), a.geo))?,
                ),
                None => None,
            };
            let config: FitConfig = config_or_default(a.config.as_deref())?;
            let artifact = crate::pipeline::fit_unit(&unit.preprocessed, population, mobility.as_ref(), &config)?;
            write_json(&a.out, &artifact)
        }
        Command::Forecast(a) => {
            let fit: FitArtifact = read_json(&a.fit)?;
            let fc = calibrate::forecast(&fit, a.horizon, a.top_k)?;
            write_json(&a.out, &fc)
        }
        Command::Risk(a) => {
            let fc: Forecast = read_json(&a.forecast)?;
            let history = history_of(&a.cases, &fc.geo_id)?;
            let population = population_of(&a.population, &fc.geo_id)?;
            let report = risk_report(&fc, &history, population, &thresholds(a.thresholds.as_deref())?)?;
            write_json(&a.out, &report)
        }
        Command::Analytics(a) => {
            let fit: FitArtifact = read_json(&a.fit)?;
            let fc: Forecast = read_json(&a.forecast)?;
            let history = history_of(&a.cases, &fc.geo_id)?;
            let population = population_of(&a.population, &fc.geo_id)?;
            let best = fit.best();
            let report = build_report(
                &best.params,
                &best.trajectory,
                &fc,
                &history,
                population,
                &thresholds(a.thresholds.as_deref())?,
            )?;
            write_json(&a.out, &report)
        }
        Command::Scenario(a) => {
            let fit: FitArtifact = read_json(&a.fit)?;
            let spec = ScenarioSpec {
                geo_id: fit.context.geo_id.clone(),
                adjustment: a.adjust,
                adjustment_date: a.from,
                horizon: a.horizon,
                label: a.label,
            };
            let bytes = crate::http::scenario_bytes(&spec, &fit).map_err(|e| anyhow!("{e:?}"))?;
            write_atomic(&a.out, &bytes)
        }
        Command::Hosp { command } => match command {
            HospCommand::Fit(a) => {
                let fc: Forecast = read_json(&a.forecast)?;
                let geo = a.geo.clone().unwrap_or_else(|| fc.geo_id.clone());
                let census = ingest::load_census(&a.census)?
                    .data
                    .remove(&geo)
                    .ok_or_else(|| anyhow!("{} has no census for {geo}", a.census.display()))?;
                let config: HospConfig = config_or_default(a.config.as_deref())?;
                let start = *fc.dates.first().ok_or_else(|| anyhow!("empty forecast"))?;
                let incidence = TimeSeries::new(fc.geo_id.clone(), start, fc.daily_cases.central.clone());
                let fit = fit_hosp(&incidence, &census.hosp, &census.icu, &config)?;
                write_json(&a.out, &fit)
            }
            HospCommand::Project(a) => {
                let fit: HospFit = read_json(&a.hosp_fit)?;
                let fc: Forecast = read_json(&a.forecast)?;
                write_json(&a.out, &project_hosp(&fit, &fc)?)
            }
        },
        Command::Run(a) => {
            let manifest = Manifest::load(&a.manifest)?;
            let store = manifest.store();
            let summary = crate::pipeline::run_pipeline(&manifest, &store, a.force_fit)?;
            println!("{}", String::from_utf8(crate::store::to_json_bytes(&summary)?)?.trim_end());
            if summary.ok == 0 && summary.failed > 0 {
                bail!("every geo-unit failed");
            }
            Ok(())
        }
        Command::Serve(a) => {
            let manifest = Manifest::load(&a.manifest)?;
            let store = manifest.store();
            if store.units()?.is_empty() {
                log::info!("artifact store is empty; running the pipeline first");
                crate::pipeline::run_pipeline(&manifest, &store, false)?;
            }
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(crate::http::serve(store, &a.bind))
        }
        Command::Synth(a) => {
            let opts = crate::synth::SynthOptions {
                counties: a.counties,
                counties_per_cluster: a.counties_per_cluster,
                days: a.days,
                seed: a.seed,
                noise: a.noise,
                mobility_depth: a.mobility_depth,
                ..Default::default()
            };
            let data = crate::synth::generate(&opts)?;
            crate::synth::write(&a.out_dir, &data, a.cluster)
        }
    }
}
