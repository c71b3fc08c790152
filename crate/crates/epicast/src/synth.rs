//! Model-generated county data for demos and end-to-end tests.
//!
//! Each county follows the compartmental model with one transmission drop
//! that coincides with a dip in its mobility index. Daily increments get
//! multiplicative Gaussian noise before being rounded to integer counts.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Result;
use chrono::{Days, NaiveDate};
use epicast_core::calibrate::{FitConfig, FitContext, IntegrateOptions, Observed, ParamName};
use epicast_core::ingest::{self, CaseMap, CaseSeries, CensusSeries, CommuteEdge, SeriesMap};
use epicast_core::model::{curve_from_index, DiseaseParams, Segment, Segments, RHO_DEFAULT};
use epicast_core::scenarios::hosp::{run_chain, HospParams};
use epicast_core::TimeSeries;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::manifest::Manifest;
use crate::store::write_json;

/// Natural-history rates shared by every generated county.
pub const ALPHA: f64 = 0.25;
pub const GAMMA_A: f64 = 0.15;
pub const GAMMA_I: f64 = 0.1;
pub const GAMMA_W: f64 = 0.1;

pub const HOSP_TRUTH: HospParams = HospParams {
    eta_h: 0.05,
    gamma_h: 0.12,
    eta_u: 0.03,
    gamma_u: 0.09,
    mu_h: 0.03,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthOptions {
    pub counties: usize,
    pub counties_per_cluster: usize,
    pub days: usize,
    pub seed: u64,
    /// Relative standard deviation of daily increments.
    pub noise: f64,
    /// Points the mobility index loses around the transmission drop. Zero
    /// gives a flat index and no mobility pulse.
    pub mobility_depth: f64,
    pub start: NaiveDate,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            counties: 3,
            counties_per_cluster: 1,
            days: 120,
            seed: 0,
            noise: 0.05,
            mobility_depth: 30.0,
            start: NaiveDate::from_ymd_opt(2020, 3, 1).expect("valid date"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub cases: CaseMap,
    pub mobility: SeriesMap,
    pub population: BTreeMap<String, f64>,
    pub commute: Vec<CommuteEdge>,
    pub census: BTreeMap<String, CensusSeries>,
    pub truth: BTreeMap<String, DiseaseParams>,
}

/// Days of mobility data before the first case report.
pub const MOBILITY_LEAD: usize = 10;

pub fn county_id(k: usize) -> String {
    format!("g{k:03}")
}

/// Piecewise-linear index: flat at 100, a 7-day slide down by `depth`
/// starting at `from`, then flat.
pub fn dip_index(len: usize, from: usize, depth: f64) -> Vec<f64> {
    (0..len)
        .map(|k| {
            let x = ((k as f64 - from as f64) / 7.0).clamp(0.0, 1.0);
            100.0 - depth * x
        })
        .collect()
}

/// Integer cumulative counts from a noiseless cumulative series.
pub fn noisy_counts(cum: &[f64], noise: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let normal = Normal::new(0.0, noise.max(0.0)).expect("finite sd");
    let mut out = Vec::with_capacity(cum.len());
    let mut acc = cum.first().copied().unwrap_or(0.0);
    out.push(acc.round());
    for w in cum.windows(2) {
        let inc = (w[1] - w[0]).max(0.0);
        let factor = if noise > 0.0 { 1.0 + normal.sample(rng) } else { 1.0 };
        acc += (inc * factor).max(0.0);
        out.push(acc.round());
    }
    out
}

pub fn generate(opts: &SynthOptions) -> Result<SynthData> {
    anyhow::ensure!(opts.counties >= 1, "need at least one county");
    anyhow::ensure!(opts.counties_per_cluster >= 1, "counties_per_cluster must be >= 1");
    anyhow::ensure!(opts.days >= 60, "need at least 60 days");
    anyhow::ensure!((0.0..100.0).contains(&opts.mobility_depth), "mobility_depth must lie in [0, 100)");
    let mut data = SynthData {
        cases: CaseMap::new(),
        mobility: SeriesMap::new(),
        population: BTreeMap::new(),
        commute: Vec::new(),
        census: BTreeMap::new(),
        truth: BTreeMap::new(),
    };
    let ode = IntegrateOptions {
        rtol: 1e-9,
        atol_frac: 1e-12,
        ..Default::default()
    };
    for k in 0..opts.counties {
        let id = county_id(k);
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_mul(1_000_003).wrapping_add(k as u64));
        let n = (rng.random_range(2e5..2e6) as f64).round();
        let drop_day = rng.random_range(35..50) as f64;
        let params = DiseaseParams {
            n,
            alpha: ALPHA,
            gamma_a: GAMMA_A,
            gamma_i: GAMMA_I,
            gamma_w: GAMMA_W,
            rho: RHO_DEFAULT,
            beta: Segments::new(vec![
                Segment { t: 0.0, v: rng.random_range(0.25..0.32) },
                Segment { t: drop_day, v: rng.random_range(0.13..0.16) },
            ])?,
            xi: Segments::constant(0.4),
            omega: Segments::constant(0.03),
            mu_d: Segments::constant(0.08),
        };
        let m_start = opts.start - Days::new(MOBILITY_LEAD as u64);
        let index = dip_index(opts.days + MOBILITY_LEAD, MOBILITY_LEAD + drop_day as usize - 5, opts.mobility_depth);
        let curve = curve_from_index(Some(m_start), &index, None)?;
        let seed = (n * 1e-4).round().max(10.0);
        let observed = Observed {
            geo_id: id.clone(),
            start: opts.start,
            population: n,
            active0: seed,
            daily: vec![0.0],
            cum: vec![seed],
            deaths: vec![0.0],
        };
        let ctx = FitContext::new(&observed, Some(&curve), ode);
        let tr = ctx.simulate(&params, opts.days)?;
        let cum = noisy_counts(&tr.cum_cases, opts.noise, &mut rng);
        let deaths = noisy_counts(&tr.cum_deaths, opts.noise, &mut rng);
        let hosp = run_chain(&HOSP_TRUTH, 0.0, 0.0, &tr.daily_cases)?;

        data.cases.insert(
            id.clone(),
            CaseSeries {
                cum_cases: TimeSeries::new(id.clone(), opts.start, cum),
                cum_deaths: TimeSeries::new(id.clone(), opts.start, deaths),
            },
        );
        data.mobility.insert(id.clone(), TimeSeries::new(id.clone(), m_start, index));
        data.census.insert(
            id.clone(),
            CensusSeries {
                hosp: TimeSeries::new(id.clone(), opts.start, hosp.hosp),
                icu: TimeSeries::new(id.clone(), opts.start, hosp.icu),
            },
        );
        data.population.insert(id.clone(), n);
        data.truth.insert(id, params);
    }
    // dense flows inside each cluster, a trickle between neighbouring clusters
    let ids: Vec<String> = (0..opts.counties).map(county_id).collect();
    for (ci, group) in ids.chunks(opts.counties_per_cluster).enumerate() {
        for a in group {
            for b in group {
                data.commute.push(CommuteEdge {
                    home: a.clone(),
                    work: b.clone(),
                    workers: 1000.0,
                });
            }
        }
        if let Some(next) = ids.chunks(opts.counties_per_cluster).nth(ci + 1) {
            data.commute.push(CommuteEdge {
                home: group[0].clone(),
                work: next[0].clone(),
                workers: 1.0,
            });
        }
    }
    Ok(data)
}

/// Fit settings matching the generator: natural-history rates held at their
/// generating values.
pub fn fit_config() -> FitConfig {
    let mut cfg = FitConfig {
        initializer_count: 8,
        ..Default::default()
    };
    for (name, v) in [
        (ParamName::Alpha, ALPHA),
        (ParamName::GammaA, GAMMA_A),
        (ParamName::GammaI, GAMMA_I),
        (ParamName::GammaW, GAMMA_W),
    ] {
        cfg.fixed.insert(name, v);
    }
    cfg
}

fn write_csv(path: &Path, header: &str, rows: impl Iterator<Item = String>) -> Result<()> {
    let mut body = String::from(header);
    body.push('\n');
    for r in rows {
        body.push_str(&r);
        body.push('\n');
    }
    crate::store::write_atomic(path, body.as_bytes())
}

/// Write every input file plus `manifest.json` and `truth.json` into `dir`.
/// With `cluster`, the manifest routes counties through commute clustering.
pub fn write(dir: &Path, data: &SynthData, cluster: bool) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut cases = Vec::new();
    ingest::write_cases(&mut cases, &data.cases)?;
    crate::store::write_atomic(&dir.join("cases.csv"), &cases)?;
    let mut mobility = Vec::new();
    ingest::write_mobility(&mut mobility, &data.mobility)?;
    crate::store::write_atomic(&dir.join("mobility.csv"), &mobility)?;
    write_csv(
        &dir.join("population.csv"),
        "geo_id,population",
        data.population.iter().map(|(g, p)| format!("{g},{p}")),
    )?;
    write_csv(
        &dir.join("commute.csv"),
        "home_id,work_id,workers",
        data.commute.iter().map(|e| format!("{},{},{}", e.home, e.work, e.workers)),
    )?;
    write_csv(
        &dir.join("census.csv"),
        "geo_id,date,hosp_census,icu_census",
        data.census.iter().flat_map(|(g, c)| {
            c.hosp
                .dates()
                .zip(c.hosp.values.iter().zip(&c.icu.values))
                .map(move |(d, (h, u))| format!("{g},{d},{h:.3},{u:.3}"))
                .collect::<Vec<_>>()
        }),
    )?;
    let manifest = Manifest {
        geo_ids: Default::default(),
        cases: "cases.csv".into(),
        population: "population.csv".into(),
        mobility: Some("mobility.csv".into()),
        commute: cluster.then(|| "commute.csv".into()),
        states: None,
        cluster: Default::default(),
        preprocess: Default::default(),
        fit: fit_config(),
        thresholds: Default::default(),
        horizon: 28,
        cadence: Default::default(),
        workers: 18,
        data_root: Some("data".into()),
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    write_json(&dir.join("truth.json"), &data.truth)?;
    Ok(())
}
