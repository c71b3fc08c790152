//! Parameter estimation and forecasting.
//!
//! Each geo-unit is fitted by multi-start Levenberg-Marquardt on three
//! stacked NRMSE residual blocks (daily cases, cumulative cases, cumulative
//! deaths). Bounded parameters are mapped through a logistic transform so
//! the solver runs unconstrained; start points come from a Latin hypercube
//! over the bounds. Breakpoints between transmission regimes are fitted too,
//! within a slack window around the detected inflections.

pub mod forecast;
pub mod integrate;
pub mod lm;

use std::collections::BTreeMap;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use forecast::{forecast, forecast_with_curve, Band, Forecast};
pub use integrate::{day_grid, integrate, IntegrateOptions, Trajectory};
pub use lm::{LmOptions, Termination};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::{initial_state, CompartmentState, DiseaseParams, MobilityCurve, Segments, RHO_DEFAULT};
use crate::preprocess::Preprocessed;

pub const MIN_TRAIN_DAYS: usize = 28;
/// Days of reports treated as active at the start of the training window.
const ACTIVE_DAYS: usize = crate::model::ACTIVE_WINDOW_DAYS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamName {
    Beta,
    Xi,
    Alpha,
    GammaA,
    GammaI,
    GammaW,
    Omega,
    MuD,
}

impl ParamName {
    pub const ALL: [ParamName; 8] = [
        ParamName::Beta,
        ParamName::Xi,
        ParamName::Alpha,
        ParamName::GammaA,
        ParamName::GammaI,
        ParamName::GammaW,
        ParamName::Omega,
        ParamName::MuD,
    ];

    pub fn can_segment(self) -> bool {
        matches!(self, ParamName::Beta | ParamName::Xi | ParamName::Omega | ParamName::MuD)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lo: f64,
    pub hi: f64,
}

impl Bounds {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn from_unit(&self, u: f64) -> f64 {
        self.lo + (self.hi - self.lo) * u
    }

    pub(crate) fn to_z(&self, v: f64) -> f64 {
        let u = ((v - self.lo) / (self.hi - self.lo)).clamp(1e-9, 1.0 - 1e-9);
        (u / (1.0 - u)).ln()
    }

    pub(crate) fn from_z(&self, z: f64) -> f64 {
        self.from_unit(1.0 / (1.0 + (-z).exp()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParamBounds {
    pub beta: Bounds,
    pub xi: Bounds,
    pub alpha: Bounds,
    pub gamma_a: Bounds,
    pub gamma_i: Bounds,
    pub gamma_w: Bounds,
    pub omega: Bounds,
    pub mu_d: Bounds,
}

impl Default for ParamBounds {
    fn default() -> Self {
        Self {
            beta: Bounds::new(0.01, 2.0),
            xi: Bounds::new(0.05, 0.95),
            alpha: Bounds::new(1.0 / 14.0, 1.0),
            gamma_a: Bounds::new(1.0 / 21.0, 0.25),
            gamma_i: Bounds::new(1.0 / 21.0, 0.25),
            gamma_w: Bounds::new(1.0 / 30.0, 0.2),
            omega: Bounds::new(0.0, 0.2),
            mu_d: Bounds::new(0.0, 0.5),
        }
    }
}

impl ParamBounds {
    pub fn get(&self, name: ParamName) -> Bounds {
        match name {
            ParamName::Beta => self.beta,
            ParamName::Xi => self.xi,
            ParamName::Alpha => self.alpha,
            ParamName::GammaA => self.gamma_a,
            ParamName::GammaI => self.gamma_i,
            ParamName::GammaW => self.gamma_w,
            ParamName::Omega => self.omega,
            ParamName::MuD => self.mu_d,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub daily: f64,
    pub cum: f64,
    pub deaths: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            daily: 1.0,
            cum: 1.0,
            deaths: 1.0,
        }
    }
}

fn fit_ode_default() -> IntegrateOptions {
    IntegrateOptions {
        rtol: 1e-9,
        atol_frac: 1e-12,
        ..Default::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub initializer_count: usize,
    pub bounds: ParamBounds,
    /// Breakpoints move at most this many days from their detected position.
    pub breakpoint_slack: f64,
    pub fit_breakpoints: bool,
    pub lm: LmOptions,
    pub weights: LossWeights,
    pub seed: u64,
    /// Parameters held at a given value instead of fitted.
    pub fixed: BTreeMap<ParamName, f64>,
    /// Parameters that take a separate value in every regime.
    pub segmented: Vec<ParamName>,
    pub rho: f64,
    /// Tolerances used while fitting. Tighter than the reporting default so
    /// forward differences see a smooth objective.
    pub ode: IntegrateOptions,
    pub exec: Exec,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            initializer_count: 20,
            bounds: ParamBounds::default(),
            breakpoint_slack: 7.0,
            fit_breakpoints: true,
            lm: LmOptions {
                max_step: 2.0,
                ..Default::default()
            },
            weights: LossWeights::default(),
            seed: 0,
            fixed: BTreeMap::new(),
            segmented: vec![ParamName::Beta],
            rho: RHO_DEFAULT,
            ode: fit_ode_default(),
            exec: Exec::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.initializer_count == 0 {
            return Err(Error::InvalidInput("initializer_count must be >= 1".into()));
        }
        for name in ParamName::ALL {
            let b = self.bounds.get(name);
            if !(b.lo.is_finite() && b.hi.is_finite() && b.lo <= b.hi && b.lo >= 0.0) {
                return Err(Error::InvalidInput(format!("bad bounds for {name:?}")));
            }
        }
        if let Some(name) = self.segmented.iter().find(|n| !n.can_segment()) {
            return Err(Error::InvalidInput(format!("{name:?} cannot be segmented")));
        }
        if !(self.breakpoint_slack >= 0.0) {
            return Err(Error::InvalidInput("breakpoint_slack must be >= 0".into()));
        }
        Ok(())
    }
}

/// Observed training data for one geo-unit, starting at model day 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observed {
    pub geo_id: String,
    pub start: NaiveDate,
    pub population: f64,
    /// Cases reported in the window before day 0 counted as still active.
    pub active0: f64,
    pub daily: Vec<f64>,
    pub cum: Vec<f64>,
    pub deaths: Vec<f64>,
}

impl Observed {
    /// Training data from a preprocessed series, starting at the first day
    /// with a reported case (or at `start_offset`) and running to the end.
    pub fn from_preprocessed(pre: &Preprocessed, population: f64, start_offset: Option<usize>) -> Result<Self> {
        let cum = &pre.cum_cases.values;
        let start = start_offset
            .unwrap_or_else(|| cum.iter().position(|&v| v > 0.0).unwrap_or(0))
            .min(cum.len());
        if cum.len() - start < MIN_TRAIN_DAYS {
            return Err(Error::Precondition(format!(
                "training window of {} days is shorter than {MIN_TRAIN_DAYS}",
                cum.len() - start
            )));
        }
        let before = if start >= ACTIVE_DAYS { cum[start - ACTIVE_DAYS] } else { 0.0 };
        Ok(Self {
            geo_id: pre.geo_id.clone(),
            start: pre.cum_cases.date_at(start),
            population,
            active0: cum[start] - before,
            daily: pre.daily_smoothed.values[start..].to_vec(),
            cum: cum[start..].to_vec(),
            deaths: pre.cum_deaths.values[start..].to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.daily.len()
    }

    pub fn is_empty(&self) -> bool {
        self.daily.is_empty()
    }

    /// Detected inflection days of `pre`, shifted to this window's day 0.
    pub fn breakpoints_from(&self, pre: &Preprocessed) -> Vec<f64> {
        let shift = (self.start - pre.cum_cases.start).num_days() as f64;
        pre.inflections
            .iter()
            .map(|i| i.day as f64 - shift)
            .filter(|t| *t > 0.0)
            .collect()
    }

    /// First `days` observations.
    pub fn truncate(&self, days: usize) -> Self {
        let mut out = self.clone();
        out.daily.truncate(days);
        out.cum.truncate(days);
        out.deaths.truncate(days);
        out
    }
}

/// Everything besides the fitted parameters needed to re-run a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitContext {
    pub geo_id: String,
    pub start: NaiveDate,
    pub population: f64,
    pub cum0: f64,
    pub active0: f64,
    pub deaths0: f64,
    /// Mobility coupling aligned so day 0 is `start`.
    pub curve: MobilityCurve,
    pub ode: IntegrateOptions,
}

impl FitContext {
    pub fn new(observed: &Observed, curve: Option<&MobilityCurve>, ode: IntegrateOptions) -> Self {
        Self {
            geo_id: observed.geo_id.clone(),
            start: observed.start,
            population: observed.population,
            cum0: observed.cum.first().copied().unwrap_or(0.0),
            active0: observed.active0,
            deaths0: observed.deaths.first().copied().unwrap_or(0.0),
            curve: curve
                .map(|c| c.aligned_to(observed.start))
                .unwrap_or_else(MobilityCurve::flat),
            ode,
        }
    }

    pub fn initial(&self, params: &DiseaseParams) -> Result<CompartmentState> {
        initial_state(self.cum0, self.active0, self.deaths0, params.xi.first(), params.n)
    }

    pub fn simulate(&self, params: &DiseaseParams, days: usize) -> Result<Trajectory> {
        self.simulate_with(params, &self.curve, days)
    }

    pub fn simulate_with(&self, params: &DiseaseParams, curve: &MobilityCurve, days: usize) -> Result<Trajectory> {
        let init = self.initial(params)?;
        integrate(&init, params, curve, &day_grid(days.max(1)), self.cum0, &self.ode)
    }

    /// Noiseless observations generated by the model itself.
    pub fn synthesize(&self, params: &DiseaseParams, days: usize) -> Result<Observed> {
        let tr = self.simulate(params, days)?;
        Ok(Observed {
            geo_id: self.geo_id.clone(),
            start: self.start,
            population: self.population,
            active0: self.active0,
            daily: tr.daily_cases,
            cum: tr.cum_cases,
            deaths: tr.cum_deaths,
        })
    }
}

pub(crate) fn denominator(obs: &[f64]) -> f64 {
    let (lo, hi) = obs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if hi > lo {
        hi - lo
    } else {
        obs.first().map(|v| v.abs()).unwrap_or(0.0).max(1.0)
    }
}

/// RMSE normalized by the observed range, or by `max(|obs|, 1)` when the
/// observations are constant.
pub fn nrmse(pred: &[f64], obs: &[f64]) -> Result<f64> {
    if pred.len() != obs.len() || obs.is_empty() {
        return Err(Error::InvalidInput(format!(
            "nrmse needs equal non-empty lengths, got {} and {}",
            pred.len(),
            obs.len()
        )));
    }
    let mse = pred.iter().zip(obs).map(|(p, o)| (p - o).powi(2)).sum::<f64>() / obs.len() as f64;
    Ok(mse.sqrt() / denominator(obs))
}

/// Mean absolute percentage error over points with non-zero observations.
pub fn mape(pred: &[f64], obs: &[f64]) -> f64 {
    let (sum, n) = pred
        .iter()
        .zip(obs)
        .filter(|(_, o)| **o != 0.0)
        .fold((0.0, 0usize), |(s, n), (p, o)| (s + ((p - o) / o).abs(), n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Nrmse {
    pub daily: f64,
    pub cum: f64,
    pub deaths: f64,
}

impl Nrmse {
    pub fn weighted(&self, w: &LossWeights) -> f64 {
        w.daily * self.daily + w.cum * self.cum + w.deaths * self.deaths
    }
}

fn nrmse_of(tr: &Trajectory, observed: &Observed) -> Result<Nrmse> {
    let n = observed.len();
    Ok(Nrmse {
        daily: nrmse(&tr.daily_cases[..n], &observed.daily)?,
        cum: nrmse(&tr.cum_cases[..n], &observed.cum)?,
        deaths: nrmse(&tr.cum_deaths[..n], &observed.deaths)?,
    })
}

/// Weighted sum of the three NRMSE terms; `+inf` when integration fails.
pub fn loss(params: &DiseaseParams, observed: &Observed, weights: &LossWeights, context: &FitContext) -> f64 {
    context
        .simulate(params, observed.len())
        .and_then(|tr| nrmse_of(&tr, observed))
        .map(|e| e.weighted(weights))
        .unwrap_or(f64::INFINITY)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Slot {
    Scalar(ParamName),
    Segment(ParamName, usize),
    Breakpoint(usize),
}

/// Mapping between the fitted vector and model parameters.
struct Layout {
    slots: Vec<(Slot, Bounds)>,
    fixed_breakpoints: Vec<f64>,
    n: f64,
    rho: f64,
    fixed: BTreeMap<ParamName, f64>,
    segmented: Vec<ParamName>,
}

impl Layout {
    fn new(config: &FitConfig, estimates: &[f64], n: f64, train_len: usize) -> Self {
        let mut slots = Vec::new();
        let segments = estimates.len() + 1;
        for name in ParamName::ALL {
            if config.fixed.contains_key(&name) {
                continue;
            }
            let b = config.bounds.get(name);
            if config.segmented.contains(&name) {
                for k in 0..segments {
                    slots.push((Slot::Segment(name, k), b));
                }
            } else {
                slots.push((Slot::Scalar(name), b));
            }
        }
        let last = train_len as f64 - 2.0;
        let mut fixed_breakpoints = Vec::new();
        for (k, &est) in estimates.iter().enumerate() {
            let mut lo = (est - config.breakpoint_slack).max(1.0);
            let mut hi = (est + config.breakpoint_slack).min(last);
            if k > 0 {
                lo = lo.max(0.5 * (estimates[k - 1] + est) + 0.5);
            }
            if k + 1 < estimates.len() {
                hi = hi.min(0.5 * (est + estimates[k + 1]) - 0.5);
            }
            if config.fit_breakpoints && hi > lo {
                slots.push((Slot::Breakpoint(k), Bounds::new(lo, hi)));
            }
            fixed_breakpoints.push(est);
        }
        // degenerate intervals collapse to a fixed value
        slots.retain(|(_, b)| b.hi > b.lo);
        Self {
            slots,
            fixed_breakpoints,
            n,
            rho: config.rho,
            fixed: config.fixed.clone(),
            segmented: config.segmented.clone(),
        }
    }

    fn dim(&self) -> usize {
        self.slots.len()
    }

    fn physical(&self, z: &[f64]) -> Vec<f64> {
        self.slots.iter().zip(z).map(|((_, b), z)| b.from_z(*z)).collect()
    }

    fn breakpoints(&self, theta: &[f64]) -> Vec<f64> {
        let mut bps = self.fixed_breakpoints.clone();
        for ((slot, _), v) in self.slots.iter().zip(theta) {
            if let Slot::Breakpoint(k) = slot {
                bps[*k] = *v;
            }
        }
        bps
    }

    fn params(&self, theta: &[f64], bounds: &ParamBounds) -> DiseaseParams {
        let bps = self.breakpoints(theta);
        let segs = bps.len() + 1;
        let mut values: BTreeMap<ParamName, Vec<f64>> = BTreeMap::new();
        for name in ParamName::ALL {
            let v = self.fixed.get(&name).copied().unwrap_or_else(|| {
                // a slot dropped for degenerate bounds sits at its only value
                bounds.get(name).lo
            });
            values.insert(name, vec![v; segs]);
        }
        for ((slot, _), v) in self.slots.iter().zip(theta) {
            match *slot {
                Slot::Scalar(name) => values.get_mut(&name).expect("all names").fill(*v),
                Slot::Segment(name, k) => values.get_mut(&name).expect("all names")[k] = *v,
                Slot::Breakpoint(_) => {}
            }
        }
        let seg = |name: ParamName| {
            let vals = &values[&name];
            if self.segmented.contains(&name) && !self.fixed.contains_key(&name) {
                let changes: Vec<(f64, f64)> = bps.iter().copied().zip(vals[1..].iter().copied()).collect();
                Segments::from_changes(vals[0], &changes)
            } else {
                Segments::constant(vals[0])
            }
        };
        DiseaseParams {
            n: self.n,
            alpha: values[&ParamName::Alpha][0],
            gamma_a: values[&ParamName::GammaA][0],
            gamma_i: values[&ParamName::GammaI][0],
            gamma_w: values[&ParamName::GammaW][0],
            rho: self.rho,
            beta: seg(ParamName::Beta),
            xi: seg(ParamName::Xi),
            omega: seg(ParamName::Omega),
            mu_d: seg(ParamName::MuD),
        }
    }

    /// `z` with every breakpoint coordinate moved to its detected position.
    fn anchored(&self, z: &[f64]) -> Vec<f64> {
        let mut out = z.to_vec();
        for (i, (slot, b)) in self.slots.iter().enumerate() {
            if let Slot::Breakpoint(k) = slot {
                out[i] = b.to_z(self.fixed_breakpoints[*k]);
            }
        }
        out
    }

    /// Coordinates fitted in the first stage: everything except breakpoints
    /// and the death pathway, which stay at their start values.
    fn first_stage_indices(&self) -> Vec<usize> {
        (0..self.dim())
            .filter(|&i| {
                !matches!(
                    self.slots[i].0,
                    Slot::Breakpoint(_)
                        | Slot::Scalar(ParamName::Omega | ParamName::MuD)
                        | Slot::Segment(ParamName::Omega | ParamName::MuD, _)
                )
            })
            .collect()
    }

    /// Latin hypercube in physical space, mapped to the unconstrained space.
    fn starts(&self, count: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut columns: Vec<Vec<f64>> = Vec::with_capacity(self.dim());
        for _ in 0..self.dim() {
            let mut strata: Vec<usize> = (0..count).collect();
            strata.shuffle(&mut rng);
            columns.push(
                strata
                    .into_iter()
                    .map(|s| (s as f64 + rng.random::<f64>()) / count as f64)
                    .collect(),
            );
        }
        (0..count)
            .map(|i| {
                self.slots
                    .iter()
                    .zip(&columns)
                    .map(|((_, b), col)| b.to_z(b.from_unit(col[i])))
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
    /// Loss at the initializer this fit started from.
    pub start_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Position in the loss ranking, 0 for the best fit.
    pub rank: usize,
    pub start_index: usize,
    pub params: DiseaseParams,
    /// Fitted regime change days.
    pub breakpoints: Vec<f64>,
    pub loss: f64,
    pub nrmse: Nrmse,
    pub trajectory: Trajectory,
    pub diagnostics: FitDiagnostics,
}

/// Stored outcome of fitting one geo-unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitArtifact {
    pub context: FitContext,
    pub observed: Observed,
    pub breakpoint_estimates: Vec<f64>,
    pub config: FitConfig,
    /// All successful starts, best first.
    pub results: Vec<FitResult>,
}

impl FitArtifact {
    pub fn best(&self) -> &FitResult {
        &self.results[0]
    }

    pub fn train_len(&self) -> usize {
        self.observed.len()
    }

    /// One-member artifact for hand-set parameters, scored against `observed`.
    pub fn from_params(
        observed: &Observed,
        params: DiseaseParams,
        config: &FitConfig,
        curve: Option<&MobilityCurve>,
    ) -> Result<Self> {
        params.validate()?;
        let context = FitContext::new(observed, curve, config.ode);
        let trajectory = context.simulate(&params, observed.len())?;
        let nrmse = nrmse_of(&trajectory, observed)?;
        let loss = nrmse.weighted(&config.weights);
        let breakpoints: Vec<f64> = params.beta.change_times().collect();
        Ok(Self {
            context,
            observed: observed.clone(),
            breakpoint_estimates: breakpoints.clone(),
            config: config.clone(),
            results: vec![FitResult {
                rank: 0,
                start_index: 0,
                params,
                breakpoints,
                loss,
                nrmse,
                trajectory,
                diagnostics: FitDiagnostics {
                    iterations: 0,
                    evaluations: 1,
                    termination: Termination::Cost,
                    start_loss: loss,
                },
            }],
        })
    }
}

/// Stacked residual blocks, each scaled so its squared norm is the weighted
/// squared NRMSE of that target.
struct Residuals<'a> {
    observed: &'a Observed,
    scales: [f64; 3],
}

impl<'a> Residuals<'a> {
    fn new(observed: &'a Observed, w: &LossWeights) -> Self {
        let sq = (observed.len() as f64).sqrt();
        Self {
            observed,
            scales: [
                w.daily.sqrt() / (denominator(&observed.daily) * sq),
                w.cum.sqrt() / (denominator(&observed.cum) * sq),
                w.deaths.sqrt() / (denominator(&observed.deaths) * sq),
            ],
        }
    }

    fn of(&self, tr: &Trajectory) -> Vec<f64> {
        let n = self.observed.len();
        let mut r = Vec::with_capacity(3 * n);
        let blocks = [
            (&tr.daily_cases, &self.observed.daily),
            (&tr.cum_cases, &self.observed.cum),
            (&tr.cum_deaths, &self.observed.deaths),
        ];
        for ((pred, obs), s) in blocks.into_iter().zip(self.scales) {
            r.extend(pred[..n].iter().zip(obs.iter()).map(|(p, o)| s * (p - o)));
        }
        r
    }

    /// Reported loss from a residual vector: `sum_k sqrt(w_k) ||r_k||`.
    fn loss(&self, r: &[f64], w: &LossWeights) -> f64 {
        let n = self.observed.len();
        [w.daily, w.cum, w.deaths]
            .iter()
            .enumerate()
            .map(|(k, wk)| wk.sqrt() * r[k * n..(k + 1) * n].iter().map(|v| v * v).sum::<f64>().sqrt())
            .sum()
    }
}

/// Fit the model to `observed`, one LM run per initializer. `breakpoints`
/// are the detected regime changes in days from the window start. Returns
/// every successful run sorted by loss.
pub fn fit(
    observed: &Observed,
    breakpoints: &[f64],
    config: &FitConfig,
    curve: Option<&MobilityCurve>,
) -> Result<FitArtifact> {
    config.validate()?;
    let n_days = observed.len();
    if n_days < MIN_TRAIN_DAYS {
        return Err(Error::Precondition(format!(
            "training window of {n_days} days is shorter than {MIN_TRAIN_DAYS}"
        )));
    }
    if observed.cum.len() != n_days || observed.deaths.len() != n_days {
        return Err(Error::InvalidInput("observed series differ in length".into()));
    }
    let mut estimates: Vec<f64> = breakpoints
        .iter()
        .copied()
        .filter(|t| *t >= 1.0 && *t <= n_days as f64 - 2.0)
        .collect();
    estimates.sort_by(f64::total_cmp);
    estimates.dedup();

    let context = FitContext::new(observed, curve, config.ode);
    let layout = Layout::new(config, &estimates, observed.population, n_days);
    let residuals = Residuals::new(observed, &config.weights);
    let starts = layout.starts(config.initializer_count, config.seed);

    let eval = |z: &[f64]| -> Option<Vec<f64>> {
        let theta = layout.physical(z);
        let params = layout.params(&theta, &config.bounds);
        let tr = context.simulate(&params, n_days).ok()?;
        let r = residuals.of(&tr);
        r.iter().all(|v| v.is_finite()).then_some(r)
    };

    let runs: Vec<std::result::Result<FitResult, String>> =
        config.exec.map(starts.into_iter().enumerate().collect(), |(idx, z0)| {
            let mut best: Option<(f64, Vec<f64>)> = None;
            let mut start_loss = f64::INFINITY;
            let mut track = |z: &[f64], r: &[f64]| {
                let l = residuals.loss(r, &config.weights);
                if best.is_none() {
                    start_loss = l;
                }
                if best.as_ref().is_none_or(|(b, _)| l < *b) {
                    best = Some((l, z.to_vec()));
                }
            };
            // First fit with breakpoints held where they were detected and the
            // death pathway held at the start, then everything together. Free
            // from the outset, the breakpoints and omega slide into valleys that
            // pair the wrong transmission rate with each regime.
            let rate_idx = layout.first_stage_indices();
            let mut z1 = z0.clone();
            let mut iterations = 0;
            let mut evaluations = 0;
            if rate_idx.len() < layout.dim() {
                let anchor = layout.anchored(&z0);
                let expand = |zs: &[f64]| {
                    let mut z = anchor.clone();
                    for (&i, v) in rate_idx.iter().zip(zs) {
                        z[i] = *v;
                    }
                    z
                };
                let zs0: Vec<f64> = rate_idx.iter().map(|&i| anchor[i]).collect();
                let first = lm::minimize(|zs| eval(&expand(zs)), &zs0, &config.lm, |zs, r| track(&expand(zs), r))
                    .ok_or_else(|| format!("start {idx}: model could not be evaluated at the initializer"))?;
                iterations += first.iterations;
                evaluations += first.evaluations;
                z1 = expand(&first.z);
            }
            let outcome = lm::minimize(eval, &z1, &config.lm, &mut track)
                .ok_or_else(|| format!("start {idx}: model could not be evaluated at the initializer"))?;
            iterations += outcome.iterations;
            evaluations += outcome.evaluations;
            let (_, z) = best.expect("observed at least the start");
            let theta = layout.physical(&z);
            let params = layout.params(&theta, &config.bounds);
            let trajectory = context
                .simulate(&params, n_days)
                .map_err(|e| format!("start {idx}: {e}"))?;
            let nrmse = nrmse_of(&trajectory, observed).map_err(|e| format!("start {idx}: {e}"))?;
            Ok(FitResult {
                rank: 0,
                start_index: idx,
                breakpoints: layout.breakpoints(&theta),
                loss: nrmse.weighted(&config.weights),
                nrmse,
                params,
                trajectory,
                diagnostics: FitDiagnostics {
                    iterations,
                    evaluations,
                    termination: outcome.termination,
                    start_loss,
                },
            })
        });

    let mut results = Vec::new();
    let mut failures = Vec::new();
    for run in runs {
        match run {
            Ok(r) if r.loss.is_finite() => results.push(r),
            Ok(r) => failures.push(format!("start {}: non-finite loss", r.start_index)),
            Err(e) => failures.push(e),
        }
    }
    if results.is_empty() {
        return Err(Error::FitFailed {
            starts: config.initializer_count,
            diagnostics: failures,
        });
    }
    results.sort_by(|a, b| a.loss.total_cmp(&b.loss).then(a.start_index.cmp(&b.start_index)));
    for (rank, r) in results.iter_mut().enumerate() {
        r.rank = rank;
    }
    Ok(FitArtifact {
        context,
        observed: observed.clone(),
        breakpoint_estimates: estimates,
        config: config.clone(),
        results,
    })
}

/// Jacobian of the stacked residuals in the unconstrained space, by forward
/// differences with the configured step, for diagnostics and testing.
pub fn residual_jacobian(
    observed: &Observed,
    breakpoints: &[f64],
    config: &FitConfig,
    curve: Option<&MobilityCurve>,
    z: &[f64],
    central: bool,
) -> Option<nalgebra::DMatrix<f64>> {
    let context = FitContext::new(observed, curve, config.ode);
    let layout = Layout::new(config, breakpoints, observed.population, observed.len());
    if z.len() != layout.dim() {
        return None;
    }
    let residuals = Residuals::new(observed, &config.weights);
    let mut eval = |z: &[f64]| -> Option<Vec<f64>> {
        let theta = layout.physical(z);
        let params = layout.params(&theta, &config.bounds);
        let tr = context.simulate(&params, observed.len()).ok()?;
        Some(residuals.of(&tr))
    };
    let r0 = eval(z)?;
    if !central {
        return Some(lm::fd_jacobian(&mut eval, z, &r0, config.lm.fd_step).0);
    }
    let mut jac = nalgebra::DMatrix::zeros(r0.len(), z.len());
    let mut zp = z.to_vec();
    for j in 0..z.len() {
        let h = 1e-4 * z[j].abs().max(1.0);
        zp[j] = z[j] + h;
        let up = eval(&zp)?;
        zp[j] = z[j] - h;
        let down = eval(&zp)?;
        zp[j] = z[j];
        for i in 0..r0.len() {
            jac[(i, j)] = (up[i] - down[i]) / (2.0 * h);
        }
    }
    Some(jac)
}

/// Number of fitted coordinates for a configuration and breakpoint count.
pub fn fit_dimension(config: &FitConfig, breakpoints: &[f64], train_len: usize) -> usize {
    Layout::new(config, breakpoints, 1.0, train_len).dim()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Segment;

    #[test]
    fn nrmse_examples() {
        assert_eq!(nrmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        let v = nrmse(&[0.0, 0.0], &[0.0, 10.0]).unwrap();
        assert!((v - 50f64.sqrt() / 10.0).abs() < 1e-12);
        let v = nrmse(&[5.0, 6.0], &[5.0, 5.0]).unwrap();
        assert!((v - 0.5f64.sqrt() / 5.0).abs() < 1e-12);
        assert!(nrmse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(nrmse(&[], &[]).is_err());
        // constant zero observations fall back to a unit denominator
        assert_eq!(nrmse(&[3.0], &[0.0]).unwrap(), 3.0);
    }

    #[test]
    fn mape_skips_zero_observations() {
        assert!((mape(&[110.0, 5.0], &[100.0, 0.0]) - 0.1).abs() < 1e-12);
        assert_eq!(mape(&[1.0], &[0.0]), 0.0);
    }

    #[test]
    fn logistic_roundtrip() {
        let b = Bounds::new(0.01, 2.0);
        for v in [0.02, 0.5, 1.99] {
            assert!((b.from_z(b.to_z(v)) - v).abs() < 1e-12);
        }
        assert!(b.from_z(-800.0) >= 0.01 && b.from_z(800.0) <= 2.0);
    }

    #[test]
    fn layout_builds_segments() {
        let config = FitConfig::default();
        let layout = Layout::new(&config, &[30.0, 60.0], 1e5, 100);
        // 3 beta segments, 7 scalars, 2 breakpoints
        assert_eq!(layout.dim(), 12);
        let theta: Vec<f64> = layout.slots.iter().map(|(_, b)| 0.5 * (b.lo + b.hi)).collect();
        let p = layout.params(&theta, &config.bounds);
        assert_eq!(p.beta.len(), 3);
        assert_eq!(p.beta.pieces()[1].t, 30.0);
        assert_eq!(p.xi.len(), 1);
    }

    #[test]
    fn layout_breakpoint_bounds_do_not_cross() {
        let config = FitConfig::default();
        let layout = Layout::new(&config, &[20.0, 28.0], 1e5, 60);
        let bps: Vec<Bounds> = layout
            .slots
            .iter()
            .filter(|(s, _)| matches!(s, Slot::Breakpoint(_)))
            .map(|(_, b)| *b)
            .collect();
        assert_eq!(bps.len(), 2);
        assert!(bps[0].hi < bps[1].lo);
        assert_eq!(bps[0].lo, 13.0);
        assert_eq!(bps[1].hi, 35.0);
    }

    #[test]
    fn fixed_parameters_leave_the_vector() {
        let mut config = FitConfig::default();
        config.fixed.insert(ParamName::Alpha, 0.3);
        config.fixed.insert(ParamName::Beta, 0.4);
        let layout = Layout::new(&config, &[30.0], 1e5, 100);
        assert_eq!(layout.dim(), 7);
        let theta: Vec<f64> = layout.slots.iter().map(|(_, b)| b.lo).collect();
        let p = layout.params(&theta, &config.bounds);
        assert_eq!(p.alpha, 0.3);
        assert_eq!(p.beta, Segments::constant(0.4));
    }

    #[test]
    fn lhs_covers_strata() {
        let config = FitConfig::default();
        let layout = Layout::new(&config, &[], 1e5, 60);
        let starts = layout.starts(10, 7);
        assert_eq!(starts.len(), 10);
        for j in 0..layout.dim() {
            let b = layout.slots[j].1;
            let mut strata: Vec<usize> = starts
                .iter()
                .map(|z| (((b.from_z(z[j]) - b.lo) / (b.hi - b.lo)) * 10.0).floor() as usize)
                .collect();
            strata.sort();
            assert_eq!(strata, (0..10).collect::<Vec<_>>());
        }
        assert_eq!(starts, layout.starts(10, 7));
        assert_ne!(starts, layout.starts(10, 8));
    }

    fn truth() -> DiseaseParams {
        DiseaseParams {
            n: 1e6,
            alpha: 0.25,
            gamma_a: 0.15,
            gamma_i: 0.1,
            gamma_w: 0.1,
            rho: RHO_DEFAULT,
            beta: Segments::new(vec![Segment { t: 0.0, v: 0.35 }, Segment { t: 30.0, v: 0.15 }]).unwrap(),
            xi: Segments::constant(0.4),
            omega: Segments::constant(0.03),
            mu_d: Segments::constant(0.08),
        }
    }

    fn context() -> FitContext {
        let seed = Observed {
            geo_id: "g".into(),
            start: "2020-03-01".parse().unwrap(),
            population: 1e6,
            active0: 100.0,
            daily: vec![0.0],
            cum: vec![120.0],
            deaths: vec![2.0],
        };
        FitContext::new(&seed, None, fit_ode_default())
    }

    #[test]
    fn loss_properties() {
        let ctx = context();
        let obs = ctx.synthesize(&truth(), 60).unwrap();
        let w = LossWeights::default();
        assert_eq!(loss(&truth(), &obs, &w, &ctx), 0.0);
        let mut other = truth();
        other.beta = Segments::constant(0.3);
        let l1 = loss(&other, &obs, &w, &ctx);
        let l2 = loss(&other, &obs, &LossWeights { daily: 2.0, cum: 2.0, deaths: 2.0 }, &ctx);
        assert!(l1 > 0.0 && (l2 - 2.0 * l1).abs() < 1e-12 * l1);
        let daily_only = loss(&other, &obs, &LossWeights { daily: 1.0, cum: 0.0, deaths: 0.0 }, &ctx);
        let tr = ctx.simulate(&other, 60).unwrap();
        assert!((daily_only - nrmse(&tr.daily_cases, &obs.daily).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn short_window_rejected() {
        let ctx = context();
        let obs = ctx.synthesize(&truth(), 10).unwrap();
        assert!(matches!(fit(&obs, &[], &FitConfig::default(), None), Err(Error::Precondition(_))));
    }

    #[test]
    fn residual_norm_matches_loss() {
        let ctx = context();
        let obs = ctx.synthesize(&truth(), 40).unwrap();
        let mut other = truth();
        other.beta = Segments::constant(0.2);
        let tr = ctx.simulate(&other, 40).unwrap();
        let w = LossWeights { daily: 2.0, cum: 0.5, deaths: 1.0 };
        let res = Residuals::new(&obs, &w);
        let direct = nrmse_of(&tr, &obs).unwrap().weighted(&w);
        assert!((res.loss(&res.of(&tr), &w) - direct).abs() < 1e-12 * direct);
    }
}
