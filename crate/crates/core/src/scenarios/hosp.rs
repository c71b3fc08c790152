//! Hospital and ICU census driven by predicted incidence.
//!
//! A linear chain: `dH = eta_H inc - (gamma_H + eta_U) H`,
//! `dU = eta_U H - (gamma_U + mu_H) U`, `dD' = mu_H U`. Incidence is held
//! constant over each day.
//!
//! Census data alone identifies only the total ICU exit rate
//! `gamma_U + mu_H`. The split comes from [`HospConfig::icu_mortality_share`].

use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calibrate::forecast::Band;
use crate::calibrate::lm::{self, LmOptions};
use crate::calibrate::{denominator, Bounds, Forecast};
use crate::error::{Error, Result};
use crate::ode::{self, MethodChoice, OdeOptions};
use crate::series::TimeSeries;

pub const MIN_OVERLAP_DAYS: usize = 21;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HospParams {
    #[serde(rename = "eta_H")]
    pub eta_h: f64,
    #[serde(rename = "gamma_H")]
    pub gamma_h: f64,
    #[serde(rename = "eta_U")]
    pub eta_u: f64,
    #[serde(rename = "gamma_U")]
    pub gamma_u: f64,
    #[serde(rename = "mu_H")]
    pub mu_h: f64,
}

impl HospParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.eta_h, self.gamma_h, self.eta_u, self.gamma_u, self.mu_h];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidInput(format!("hospital rates must be finite and >= 0: {self:?}")));
        }
        Ok(())
    }

    /// Census levels reached under constant incidence `inc`.
    pub fn steady_state(&self, inc: f64) -> Result<(f64, f64)> {
        let a = self.gamma_h + self.eta_u;
        let b = self.gamma_u + self.mu_h;
        if a <= 0.0 {
            return Err(Error::ZeroDenominator("gamma_H + eta_U"));
        }
        if b <= 0.0 {
            return Err(Error::ZeroDenominator("gamma_U + mu_H"));
        }
        let h = self.eta_h * inc / a;
        Ok((h, self.eta_u * h / b))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HospConfig {
    pub eta_h: Bounds,
    pub gamma_h: Bounds,
    pub eta_u: Bounds,
    /// Bounds on the total ICU exit rate `gamma_U + mu_H`.
    pub icu_exit: Bounds,
    /// Fraction of ICU exits that are deaths.
    pub icu_mortality_share: f64,
    pub starts: usize,
    pub seed: u64,
    pub lm: LmOptions,
}

impl Default for HospConfig {
    fn default() -> Self {
        Self {
            eta_h: Bounds::new(0.0, 1.0),
            gamma_h: Bounds::new(0.0, 1.0),
            eta_u: Bounds::new(0.0, 1.0),
            icu_exit: Bounds::new(0.0, 2.0),
            icu_mortality_share: 0.25,
            starts: 8,
            seed: 0,
            lm: LmOptions::default(),
        }
    }
}

/// Census trajectory of the chain, one point per day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRun {
    pub hosp: Vec<f64>,
    pub icu: Vec<f64>,
    pub icu_deaths: Vec<f64>,
}

/// Run the chain from `(h0, u0)` with `forcing[k]` applied over day `k`,
/// reporting at days `0..forcing.len()`.
pub fn run_chain(params: &HospParams, h0: f64, u0: f64, forcing: &[f64]) -> Result<ChainRun> {
    let n = forcing.len();
    if n == 0 {
        return Ok(ChainRun {
            hosp: Vec::new(),
            icu: Vec::new(),
            icu_deaths: Vec::new(),
        });
    }
    let p = *params;
    let a = p.gamma_h + p.eta_u;
    let b = p.gamma_u + p.mu_h;
    let sys = |t: f64, y: &[f64; 3], dy: &mut [f64; 3]| {
        let k = (t.floor().max(0.0) as usize).min(n - 1);
        dy[0] = p.eta_h * forcing[k] - a * y[0];
        dy[1] = p.eta_u * y[0] - b * y[1];
        dy[2] = p.mu_h * y[1];
    };
    let scale = forcing.iter().fold(h0.abs().max(u0.abs()), |m, v| m.max(v.abs())).max(1.0);
    let grid: Vec<f64> = (0..n).map(|k| k as f64).collect();
    let opts = OdeOptions {
        rtol: 1e-10,
        atol: 1e-12 * scale,
        method: MethodChoice::Auto,
        ..Default::default()
    };
    let sol = ode::solve(&sys, [h0, u0, 0.0], &grid, &grid, &opts)?;
    Ok(ChainRun {
        hosp: sol.y.iter().map(|y| y[0]).collect(),
        icu: sol.y.iter().map(|y| y[1]).collect(),
        icu_deaths: sol.y.iter().map(|y| y[2]).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HospFit {
    pub geo_id: String,
    pub params: HospParams,
    /// First day of the census overlap; the chain starts here.
    pub start: NaiveDate,
    pub h0: f64,
    pub u0: f64,
    pub nrmse_hosp: f64,
    pub nrmse_icu: f64,
    pub loss: f64,
    pub fitted: ChainRun,
}

fn overlap(a: &TimeSeries, b: &TimeSeries, c: &TimeSeries) -> Option<(NaiveDate, usize)> {
    let start = a.start.max(b.start).max(c.start);
    let end = a.end().min(b.end()).min(c.end());
    if a.is_empty() || b.is_empty() || c.is_empty() || end < start {
        return None;
    }
    Some((start, (end - start).num_days() as usize + 1))
}

fn window(s: &TimeSeries, start: NaiveDate, len: usize) -> &[f64] {
    let off = s.offset_of(start) as usize;
    &s.values[off..off + len]
}

/// Fit the chain rates to hospital and ICU census by least squares on the
/// NRMSE of both series, from several seeded starts.
pub fn fit_hosp(incidence: &TimeSeries, hosp: &TimeSeries, icu: &TimeSeries, config: &HospConfig) -> Result<HospFit> {
    if !(0.0..=1.0).contains(&config.icu_mortality_share) {
        return Err(Error::InvalidInput("icu_mortality_share must be in [0, 1]".into()));
    }
    let (start, len) = overlap(incidence, hosp, icu).unwrap_or((incidence.start, 0));
    if len < MIN_OVERLAP_DAYS {
        return Err(Error::InsufficientData(format!(
            "incidence and census overlap for {len} days, need {MIN_OVERLAP_DAYS}"
        )));
    }
    let forcing = window(incidence, start, len);
    let h_obs = window(hosp, start, len);
    let u_obs = window(icu, start, len);
    let (h0, u0) = (h_obs[0], u_obs[0]);
    let scale = [
        denominator(h_obs) * (len as f64).sqrt(),
        denominator(u_obs) * (len as f64).sqrt(),
    ];
    let share = config.icu_mortality_share;
    let bounds = [config.eta_h, config.gamma_h, config.eta_u, config.icu_exit];
    let params_of = |z: &[f64]| {
        let v: Vec<f64> = bounds.iter().zip(z).map(|(b, z)| b.from_z(*z)).collect();
        HospParams {
            eta_h: v[0],
            gamma_h: v[1],
            eta_u: v[2],
            gamma_u: (1.0 - share) * v[3],
            mu_h: share * v[3],
        }
    };
    let eval = |z: &[f64]| -> Option<Vec<f64>> {
        let run = run_chain(&params_of(z), h0, u0, forcing).ok()?;
        let r: Vec<f64> = run
            .hosp
            .iter()
            .zip(h_obs)
            .map(|(p, o)| (p - o) / scale[0])
            .chain(run.icu.iter().zip(u_obs).map(|(p, o)| (p - o) / scale[1]))
            .collect();
        r.iter().all(|v| v.is_finite()).then_some(r)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..config.starts.max(1) {
        let z0: Vec<f64> = bounds
            .iter()
            .map(|b| {
                let u: f64 = rng.random_range(0.02..0.3);
                b.to_z(b.lo + u * (b.hi - b.lo))
            })
            .collect();
        if let Some(out) = lm::minimize(eval, &z0, &config.lm, |_, _| {}) {
            if best.as_ref().is_none_or(|(c, _)| out.cost < *c) {
                best = Some((out.cost, out.z));
            }
        }
    }
    let (_, z) = best.ok_or_else(|| Error::FitFailed {
        starts: config.starts,
        diagnostics: vec!["chain could not be evaluated".into()],
    })?;
    let params = params_of(&z);
    let fitted = run_chain(&params, h0, u0, forcing)?;
    let nrmse_hosp = crate::calibrate::nrmse(&fitted.hosp, h_obs)?;
    let nrmse_icu = crate::calibrate::nrmse(&fitted.icu, u_obs)?;
    Ok(HospFit {
        geo_id: hosp.geo_id.clone(),
        params,
        start,
        h0,
        u0,
        nrmse_hosp,
        nrmse_icu,
        loss: nrmse_hosp + nrmse_icu,
        fitted,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HospProjection {
    pub geo_id: String,
    pub dates: Vec<NaiveDate>,
    pub params: HospParams,
    pub hosp: Band,
    pub icu: Band,
    pub icu_deaths: Band,
}

/// Drive the fitted chain with the forecast incidence from the fit start to
/// the end of the forecast. Each bound of the incidence band gives the same
/// bound of the census, since the chain is monotone in its forcing.
pub fn project_hosp(fit: &HospFit, forecast: &Forecast) -> Result<HospProjection> {
    fit.params.validate()?;
    let from = forecast
        .dates
        .iter()
        .position(|d| *d == fit.start)
        .ok_or_else(|| Error::Precondition(format!("forecast does not cover the census start {}", fit.start)))?;
    let runs = [
        &forecast.daily_cases.central,
        &forecast.daily_cases.lower,
        &forecast.daily_cases.upper,
    ]
    .map(|f| run_chain(&fit.params, fit.h0, fit.u0, &f[from..]));
    let [central, lower, upper] = runs;
    let (central, lower, upper) = (central?, lower?, upper?);
    let band = |f: fn(&ChainRun) -> &Vec<f64>| Band {
        central: f(&central).clone(),
        lower: f(&lower).clone(),
        upper: f(&upper).clone(),
    };
    Ok(HospProjection {
        geo_id: forecast.geo_id.clone(),
        dates: (0..forecast.dates.len() - from)
            .map(|k| fit.start + Days::new(k as u64))
            .collect(),
        params: fit.params,
        hosp: band(|r| &r.hosp),
        icu: band(|r| &r.icu),
        icu_deaths: band(|r| &r.icu_deaths),
    })
}
