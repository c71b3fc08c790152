//! Model integration and the observables fitted against reports.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{derivatives_array, CompartmentState, DiseaseParams, MobilityCurve};
use crate::ode::{self, MethodChoice, OdeOptions, OdeStats};

/// Integration tolerances. The absolute tolerance is per person scaled by N.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegrateOptions {
    pub rtol: f64,
    /// Absolute tolerance as a fraction of N.
    pub atol_frac: f64,
    pub method: MethodChoice,
    pub max_steps: usize,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-6,
            atol_frac: 1e-8,
            method: MethodChoice::Auto,
            max_steps: 200_000,
        }
    }
}

/// Compartment states on a time grid plus the reported-case observables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub states: Vec<CompartmentState>,
    /// New reported cases per day: the C -> I flow accumulated over each
    /// grid step (the instantaneous flow `alpha C` at the first point).
    pub daily_cases: Vec<f64>,
    /// Reported cumulative cases: `cum_offset` plus the accumulated flow.
    pub cum_cases: Vec<f64>,
    pub cum_deaths: Vec<f64>,
    #[serde(skip)]
    pub stats: OdeStats,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// State at the grid point nearest to `t`.
    pub fn state_near(&self, t: f64) -> Option<&CompartmentState> {
        let idx = self.t.partition_point(|&x| x < t);
        let cand = [idx.saturating_sub(1), idx.min(self.t.len().saturating_sub(1))];
        cand.into_iter()
            .filter(|&i| i < self.t.len())
            .min_by(|&a, &b| (self.t[a] - t).abs().total_cmp(&(self.t[b] - t).abs()))
            .map(|i| &self.states[i])
    }
}

/// Integrate the model from `initial` and report at every `t_grid` point.
/// The grid must start at 0 and be increasing.
pub fn integrate(
    initial: &CompartmentState,
    params: &DiseaseParams,
    curve: &MobilityCurve,
    t_grid: &[f64],
    cum_offset: f64,
    opts: &IntegrateOptions,
) -> Result<Trajectory> {
    if t_grid.is_empty() {
        return Err(Error::InvalidInput("empty time grid".into()));
    }
    if t_grid[0] != 0.0 || t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidInput("time grid must start at 0 and increase".into()));
    }
    params.validate()?;
    let mut y0 = [0.0; 9];
    y0[..8].copy_from_slice(&initial.to_array());
    // the ninth component accumulates the reporting flow alpha * C
    let sys = |t: f64, y: &[f64; 9], dy: &mut [f64; 9]| {
        let d = derivatives_array(&y[..8], t, params, curve);
        dy[..8].copy_from_slice(&d);
        dy[8] = params.alpha * y[3];
    };
    let ode_opts = OdeOptions {
        rtol: opts.rtol,
        atol: opts.atol_frac * params.n,
        method: opts.method,
        max_steps: opts.max_steps,
        h_max: 0.0,
    };
    let sol = ode::solve(&sys, y0, t_grid, &params.discontinuities(), &ode_opts)?;

    let n = sol.y.len();
    let mut states = Vec::with_capacity(n);
    let mut daily = Vec::with_capacity(n);
    let mut cum = Vec::with_capacity(n);
    let mut deaths = Vec::with_capacity(n);
    for (k, y) in sol.y.iter().enumerate() {
        states.push(CompartmentState::from_slice(&y[..8]));
        daily.push(if k == 0 {
            params.alpha * y[3]
        } else {
            y[8] - sol.y[k - 1][8]
        });
        cum.push(cum_offset + y[8]);
        deaths.push(y[7]);
    }
    Ok(Trajectory {
        t: sol.t,
        states,
        daily_cases: daily,
        cum_cases: cum,
        cum_deaths: deaths,
        stats: sol.stats,
    })
}

/// Daily grid `0, 1, ..., days - 1`.
pub fn day_grid(days: usize) -> Vec<f64> {
    (0..days).map(|d| d as f64).collect()
}
