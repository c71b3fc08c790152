//! Adaptive ODE integration with automatic stiff / non-stiff switching.
//!
//! Non-stiff steps use Dormand-Prince 5(4). Stiffness is detected with
//! Hairer's test on the last two stages (`h * |lambda| > 3.25` on 15 accepted
//! steps without 6 consecutive non-stiff ones in between); the integrator then
//! switches to the L-stable Rosenbrock 2(3) W-method of Shampine and Reichelt
//! with a finite-difference Jacobian. It switches back once
//! `h * ||J||_inf` stays inside the explicit stability region for 15 steps.
//!
//! Every requested output time and every discontinuity time is hit exactly;
//! the method restarts after a discontinuity.

use nalgebra::{DMatrix, DVector, SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Right-hand side `dy/dt = f(t, y)` of a `D`-dimensional system.
pub trait OdeSystem<const D: usize> {
    fn rhs(&self, t: f64, y: &[f64; D], dy: &mut [f64; D]);
}

impl<const D: usize, F> OdeSystem<D> for F
where
    F: Fn(f64, &[f64; D], &mut [f64; D]),
{
    fn rhs(&self, t: f64, y: &[f64; D], dy: &mut [f64; D]) {
        self(t, y, dy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodChoice {
    /// Start explicit, switch on detected stiffness.
    Auto,
    NonStiff,
    Stiff,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdeOptions {
    pub rtol: f64,
    /// Absolute tolerance, per component.
    pub atol: f64,
    pub method: MethodChoice,
    pub max_steps: usize,
    /// Largest allowed step; 0 means unbounded.
    pub h_max: f64,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-6,
            atol: 1e-8,
            method: MethodChoice::Auto,
            max_steps: 500_000,
            h_max: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
    pub stiff_steps: usize,
    pub switches: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdeSolution<const D: usize> {
    pub t: Vec<f64>,
    pub y: Vec<[f64; D]>,
    pub stats: OdeStats,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Mode {
    Explicit,
    Implicit,
}

// Dormand-Prince tableau
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

// Rosenbrock 2(3)
const ROS_D: f64 = 0.292_893_218_813_452_5; // 1 / (2 + sqrt 2)
const ROS_E32: f64 = 7.414_213_562_373_095; // 6 + sqrt 2

struct Stepper<'a, const D: usize, S: OdeSystem<D>> {
    sys: &'a S,
    opts: OdeOptions,
    stats: OdeStats,
    /// Latest time the right-hand side may be sampled at in the current
    /// interval, so a jump at the interval end is seen from the left.
    t_cap: f64,
}

fn axpy<const D: usize>(y: &[f64; D], h: f64, terms: &[(f64, &[f64; D])]) -> [f64; D] {
    let mut out = *y;
    for (c, k) in terms {
        if *c != 0.0 {
            for i in 0..D {
                out[i] += h * c * k[i];
            }
        }
    }
    out
}

impl<const D: usize, S: OdeSystem<D>> Stepper<'_, D, S> {
    fn f(&mut self, t: f64, y: &[f64; D]) -> [f64; D] {
        let mut dy = [0.0; D];
        self.sys.rhs(t.min(self.t_cap), y, &mut dy);
        self.stats.rhs_evals += 1;
        dy
    }

    fn err_norm(&self, y: &[f64; D], y_new: &[f64; D], err: &[f64; D]) -> f64 {
        let mut acc = 0.0;
        for i in 0..D {
            let sc = self.opts.atol + self.opts.rtol * y[i].abs().max(y_new[i].abs());
            acc += (err[i] / sc).powi(2);
        }
        (acc / D as f64).sqrt()
    }

    fn initial_step(&mut self, t: f64, y: &[f64; D], f0: &[f64; D], span: f64) -> f64 {
        let d0 = self.err_norm(y, y, y);
        let d1 = self.err_norm(y, y, f0);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 {
            1e-6
        } else {
            0.01 * d0 / d1
        };
        let h0 = h0.min(span);
        let y1 = axpy(y, h0, &[(1.0, f0)]);
        let f1 = self.f(t + h0, &y1);
        let mut df = [0.0; D];
        for i in 0..D {
            df[i] = f1[i] - f0[i];
        }
        let d2 = self.err_norm(y, y, &df) / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(1.0 / 5.0)
        };
        (100.0 * h0).min(h1).min(span)
    }

    fn jacobian(&mut self, t: f64, y: &[f64; D], f0: &[f64; D]) -> (SMatrix<f64, D, D>, SVector<f64, D>) {
        let mut jac = SMatrix::<f64, D, D>::zeros();
        for j in 0..D {
            let delta = (f64::EPSILON.sqrt() * y[j].abs()).max(1e-8 * (self.opts.atol / self.opts.rtol).max(1e-8));
            let mut yp = *y;
            yp[j] += delta;
            let fp = self.f(t, &yp);
            for i in 0..D {
                jac[(i, j)] = (fp[i] - f0[i]) / delta;
            }
        }
        let dt = f64::EPSILON.sqrt() * t.abs().max(1.0);
        let ft = self.f(t + dt, y);
        let mut dfdt = SVector::<f64, D>::zeros();
        for i in 0..D {
            dfdt[i] = (ft[i] - f0[i]) / dt;
        }
        (jac, dfdt)
    }

    /// Integrate one smooth interval `[t0, t_end]` hitting every time in
    /// `outputs` (all inside the interval, ascending).
    #[allow(clippy::too_many_arguments)]
    fn interval(
        &mut self,
        t0: f64,
        t_end: f64,
        y0: [f64; D],
        outputs: &[f64],
        out_t: &mut Vec<f64>,
        out_y: &mut Vec<[f64; D]>,
        mode: &mut Mode,
        h_hint: &mut f64,
    ) -> Result<[f64; D]> {
        let mut t = t0;
        let mut y = y0;
        let mut next_out = 0;
        while next_out < outputs.len() && outputs[next_out] <= t0 {
            out_t.push(outputs[next_out]);
            out_y.push(y);
            next_out += 1;
        }
        if t_end <= t0 {
            return Ok(y);
        }
        let mut k1 = self.f(t, &y);
        let span = t_end - t0;
        let mut h_prop = if *h_hint > 0.0 {
            h_hint.min(span)
        } else {
            self.initial_step(t, &y, &k1, span)
        };
        let h_max = if self.opts.h_max > 0.0 { self.opts.h_max } else { f64::INFINITY };
        let (mut stiff_hits, mut nonstiff_run, mut explicit_ok) = (0usize, 0usize, 0usize);
        let mut last_rejected = false;

        while t < t_end {
            if self.stats.accepted + self.stats.rejected >= self.opts.max_steps {
                return Err(Error::Integration {
                    t,
                    reason: "maximum step count exceeded".into(),
                });
            }
            let target = if next_out < outputs.len() {
                outputs[next_out].min(t_end)
            } else {
                t_end
            };
            let mut h = h_prop.min(h_max);
            let mut landing = false;
            if t + h >= target || (target - t - h) < 1e-10 * h {
                h = target - t;
                landing = true;
            }
            if h <= 1e-12 * t.abs().max(1.0) {
                return Err(Error::Integration {
                    t,
                    reason: "step size underflow".into(),
                });
            }

            let (y_new, err, k_new, stiff_probe) = match *mode {
                Mode::Explicit => {
                    let k2 = self.f(t + C2 * h, &axpy(&y, h, &[(A21, &k1)]));
                    let k3 = self.f(t + C3 * h, &axpy(&y, h, &[(A31, &k1), (A32, &k2)]));
                    let k4 = self.f(t + C4 * h, &axpy(&y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]));
                    let k5 = self.f(
                        t + C5 * h,
                        &axpy(&y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
                    );
                    let y6 = axpy(&y, h, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]);
                    let k6 = self.f(t + h, &y6);
                    let y_new = axpy(&y, h, &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
                    let k7 = self.f(t + h, &y_new);
                    let mut err = [0.0; D];
                    for i in 0..D {
                        err[i] = h
                            * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                    }
                    let (mut num, mut den) = (0.0, 0.0);
                    for i in 0..D {
                        num += (k7[i] - k6[i]).powi(2);
                        den += (y_new[i] - y6[i]).powi(2);
                    }
                    let probe = if den > 0.0 { h * (num / den).sqrt() } else { 0.0 };
                    (y_new, err, k7, probe)
                }
                Mode::Implicit => {
                    let (jac, dfdt) = self.jacobian(t, &y, &k1);
                    let w = SMatrix::<f64, D, D>::identity() - jac * (h * ROS_D);
                    let lu = DMatrix::from_fn(D, D, |i, j| w[(i, j)]).lu();
                    if !lu.is_invertible() {
                        h_prop = h * 0.25;
                        self.stats.rejected += 1;
                        continue;
                    }
                    let f0 = SVector::<f64, D>::from_row_slice(&k1);
                    let solve = |v: SVector<f64, D>| {
                        let x = lu.solve(&DVector::from_column_slice(v.as_slice())).expect("invertible");
                        SVector::<f64, D>::from_column_slice(x.as_slice())
                    };
                    let s1 = solve(f0 + dfdt * (h * ROS_D));
                    let y_half = axpy(&y, 0.5 * h, &[(1.0, s1.as_slice().try_into().expect("dim"))]);
                    let f1 = SVector::<f64, D>::from_row_slice(&self.f(t + 0.5 * h, &y_half));
                    let s2 = solve(f1 - s1) + s1;
                    let y_new = axpy(&y, h, &[(1.0, s2.as_slice().try_into().expect("dim"))]);
                    let f2v = self.f(t + h, &y_new);
                    let f2 = SVector::<f64, D>::from_row_slice(&f2v);
                    let s3 = solve(f2 - (s2 - f1) * ROS_E32 - (s1 - f0) * 2.0 + dfdt * (h * ROS_D));
                    let e = (s1 - s2 * 2.0 + s3) * (h / 6.0);
                    let mut err = [0.0; D];
                    err.copy_from_slice(e.as_slice());
                    let jnorm = (0..D)
                        .map(|i| (0..D).map(|j| jac[(i, j)].abs()).sum::<f64>())
                        .fold(0.0, f64::max);
                    (y_new, err, f2v, h * jnorm)
                }
            };

            let finite = y_new.iter().all(|v| v.is_finite());
            let en = if finite { self.err_norm(&y, &y_new, &err) } else { f64::INFINITY };
            let order = if *mode == Mode::Explicit { 5.0 } else { 3.0 };

            if en <= 1.0 {
                self.stats.accepted += 1;
                if *mode == Mode::Implicit {
                    self.stats.stiff_steps += 1;
                }
                t = if landing { target } else { t + h };
                y = y_new;
                k1 = k_new;
                if landing && next_out < outputs.len() && target == outputs[next_out] {
                    out_t.push(t);
                    out_y.push(y);
                    next_out += 1;
                }
                let mut fac = if en == 0.0 { 5.0 } else { 0.9 * en.powf(-1.0 / order) };
                fac = fac.clamp(0.2, 5.0);
                if last_rejected {
                    fac = fac.min(1.0);
                }
                // a step shortened to land on a target says nothing about the proposal
                if !(landing && h < h_prop) {
                    h_prop = h * fac;
                }
                last_rejected = false;

                match (self.opts.method, *mode) {
                    (MethodChoice::Auto, Mode::Explicit) => {
                        if stiff_probe > 3.25 {
                            nonstiff_run = 0;
                            stiff_hits += 1;
                            if stiff_hits == 15 {
                                *mode = Mode::Implicit;
                                self.stats.switches += 1;
                                stiff_hits = 0;
                            }
                        } else {
                            nonstiff_run += 1;
                            if nonstiff_run == 6 {
                                stiff_hits = 0;
                            }
                        }
                    }
                    (MethodChoice::Auto, Mode::Implicit) => {
                        if stiff_probe < 2.0 {
                            explicit_ok += 1;
                            if explicit_ok == 15 {
                                *mode = Mode::Explicit;
                                self.stats.switches += 1;
                                explicit_ok = 0;
                            }
                        } else {
                            explicit_ok = 0;
                        }
                    }
                    _ => {}
                }
            } else {
                self.stats.rejected += 1;
                last_rejected = true;
                let fac = if en.is_finite() {
                    (0.9 * en.powf(-1.0 / order)).clamp(0.2, 1.0)
                } else {
                    0.25
                };
                h_prop = h * fac;
            }
        }
        *h_hint = h_prop;
        while next_out < outputs.len() && outputs[next_out] <= t_end {
            out_t.push(outputs[next_out]);
            out_y.push(y);
            next_out += 1;
        }
        Ok(y)
    }
}

/// Solve from `grid[0]` and report the state at every grid time.
///
/// `breaks` are times where the right-hand side may jump; integration stops
/// and restarts exactly there. The grid must be non-decreasing.
pub fn solve<const D: usize, S: OdeSystem<D>>(
    sys: &S,
    y0: [f64; D],
    grid: &[f64],
    breaks: &[f64],
    opts: &OdeOptions,
) -> Result<OdeSolution<D>> {
    if grid.is_empty() {
        return Ok(OdeSolution {
            t: Vec::new(),
            y: Vec::new(),
            stats: OdeStats::default(),
        });
    }
    if grid.windows(2).any(|w| w[1] < w[0]) || grid.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidInput("time grid must be finite and non-decreasing".into()));
    }
    let t0 = grid[0];
    let t_last = grid[grid.len() - 1];
    let mut cuts: Vec<f64> = breaks
        .iter()
        .copied()
        .filter(|b| *b > t0 && *b < t_last)
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    cuts.push(t_last);

    let mut stepper = Stepper {
        sys,
        opts: *opts,
        stats: OdeStats::default(),
        t_cap: f64::INFINITY,
    };
    let mut mode = if opts.method == MethodChoice::Stiff {
        Mode::Implicit
    } else {
        Mode::Explicit
    };
    let mut out_t = Vec::with_capacity(grid.len());
    let mut out_y = Vec::with_capacity(grid.len());
    let mut y = y0;
    let mut start = t0;
    let mut gi = 0;
    let mut h_hint = 0.0;
    for &cut in &cuts {
        let hi = gi + grid[gi..].partition_point(|&g| g <= cut);
        stepper.t_cap = if cut < t_last { cut.next_down() } else { f64::INFINITY };
        y = stepper.interval(start, cut, y, &grid[gi..hi], &mut out_t, &mut out_y, &mut mode, &mut h_hint)?;
        gi = hi;
        start = cut;
    }
    debug_assert_eq!(out_t.len(), grid.len());
    let _ = y;
    Ok(OdeSolution {
        t: out_t,
        y: out_y,
        stats: stepper.stats,
    })
}
