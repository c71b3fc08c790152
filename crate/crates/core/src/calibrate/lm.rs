//! Levenberg-Marquardt for small dense least-squares problems.
//!
//! Minimizes `0.5 ||r(z)||^2` over unconstrained `z`. The Jacobian comes
//! from forward differences; damping follows Nielsen's update with
//! Marquardt's diagonal scaling.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Stop when the infinity norm of the gradient falls below this.
    pub gtol: f64,
    /// Stop when the step is this small relative to `z`.
    pub xtol: f64,
    /// Stop when an accepted step reduces the cost by less than this fraction.
    pub ftol: f64,
    /// Forward-difference step, relative to `max(|z_j|, 1)`.
    pub fd_step: f64,
    /// Largest change of any coordinate in one step; longer steps are
    /// shortened along their direction. Zero disables the cap.
    pub max_step: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            gtol: 1e-10,
            xtol: 1e-10,
            ftol: 1e-10,
            fd_step: 1e-6,
            max_step: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Gradient,
    Step,
    Cost,
    MaxIterations,
    /// Damping grew without finding a better point.
    Stalled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmOutcome {
    pub z: Vec<f64>,
    pub residuals: Vec<f64>,
    pub cost: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

fn cost(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|v| v * v).sum::<f64>()
}

/// Forward-difference Jacobian of `f` at `z`, given `r0 = f(z)`. Columns
/// whose perturbed evaluation fails are left at zero.
pub fn fd_jacobian<F>(f: &mut F, z: &[f64], r0: &[f64], rel_step: f64) -> (DMatrix<f64>, usize)
where
    F: FnMut(&[f64]) -> Option<Vec<f64>>,
{
    let m = r0.len();
    let n = z.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut zp = z.to_vec();
    let mut evals = 0;
    for j in 0..n {
        let h = rel_step * z[j].abs().max(1.0);
        zp[j] = z[j] + h;
        // use the representable step so the quotient is exact in h
        let h = zp[j] - z[j];
        evals += 1;
        if let Some(rp) = f(&zp) {
            for i in 0..m {
                jac[(i, j)] = (rp[i] - r0[i]) / h;
            }
        }
        zp[j] = z[j];
    }
    (jac, evals)
}

/// Run LM from `z0`. `f` returns `None` when the residuals cannot be
/// evaluated; such trial points are treated as infinitely bad. `observe` is
/// called on the start and on every accepted iterate.
pub fn minimize<F, O>(mut f: F, z0: &[f64], opts: &LmOptions, mut observe: O) -> Option<LmOutcome>
where
    F: FnMut(&[f64]) -> Option<Vec<f64>>,
    O: FnMut(&[f64], &[f64]),
{
    let mut z = z0.to_vec();
    let mut r = f(&z)?;
    let mut evaluations = 1;
    observe(&z, &r);
    let mut c = cost(&r);
    let n = z.len();
    let mut mu = 0.0;
    let mut nu = 2.0;
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;
    let mut need_jac = true;
    let mut jac = DMatrix::zeros(r.len(), n);

    while iterations < opts.max_iterations {
        if need_jac {
            let (j, e) = fd_jacobian(&mut f, &z, &r, opts.fd_step);
            jac = j;
            evaluations += e;
            need_jac = false;
        }
        let rv = DVector::from_column_slice(&r);
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * rv;
        if g.amax() <= opts.gtol {
            termination = Termination::Gradient;
            break;
        }
        let diag: Vec<f64> = (0..n).map(|i| jtj[(i, i)].max(1e-12)).collect();
        if mu == 0.0 {
            mu = 1e-3;
        }
        iterations += 1;
        let mut a = jtj.clone();
        for i in 0..n {
            a[(i, i)] += mu * diag[i];
        }
        let step = match a.clone().cholesky() {
            Some(ch) => ch.solve(&(-&g)),
            None => match a.lu().solve(&(-&g)) {
                Some(s) => s,
                None => {
                    mu *= nu;
                    nu *= 2.0;
                    continue;
                }
            },
        };
        let longest = step.amax();
        let step = if opts.max_step > 0.0 && longest > opts.max_step {
            step * (opts.max_step / longest)
        } else {
            step
        };
        let step_norm = step.norm();
        let z_norm = DVector::from_column_slice(&z).norm();
        if step_norm <= opts.xtol * (z_norm + opts.xtol) {
            termination = Termination::Step;
            break;
        }
        let trial: Vec<f64> = z.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
        evaluations += 1;
        let trial_r = f(&trial);
        let trial_c = trial_r.as_ref().map(|r| cost(r)).unwrap_or(f64::INFINITY);
        // reduction predicted by the linearized model
        let pred = -g.dot(&step) - 0.5 * step.dot(&(&jtj * &step));
        let gain = if pred > 0.0 { (c - trial_c) / pred } else { -1.0 };
        if trial_c < c && gain > 0.0 {
            let rel = (c - trial_c) / c.max(f64::MIN_POSITIVE);
            z = trial;
            r = trial_r.expect("finite cost implies residuals");
            c = trial_c;
            observe(&z, &r);
            mu *= (1.0f64 / 3.0).max(1.0 - (2.0 * gain - 1.0).powi(3));
            nu = 2.0;
            need_jac = true;
            if rel <= opts.ftol || c == 0.0 {
                termination = Termination::Cost;
                break;
            }
        } else {
            mu *= nu;
            nu *= 2.0;
            if mu > 1e16 {
                termination = Termination::Stalled;
                break;
            }
        }
    }
    Some(LmOutcome {
        z,
        residuals: r,
        cost: c,
        iterations,
        evaluations,
        termination,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock_valley() {
        let f = |z: &[f64]| Some(vec![10.0 * (z[1] - z[0] * z[0]), 1.0 - z[0]]);
        let out = minimize(f, &[-1.2, 1.0], &LmOptions { max_iterations: 500, ..Default::default() }, |_, _| {}).unwrap();
        assert!((out.z[0] - 1.0).abs() < 1e-6 && (out.z[1] - 1.0).abs() < 1e-6, "{out:?}");
    }

    #[test]
    fn exponential_fit() {
        let ts: Vec<f64> = (0..20).map(|t| t as f64 * 0.5).collect();
        let obs: Vec<f64> = ts.iter().map(|t| 3.0 * (-0.4 * t).exp()).collect();
        let f = |z: &[f64]| Some(ts.iter().zip(&obs).map(|(t, o)| z[0] * (-z[1] * t).exp() - o).collect());
        let out = minimize(f, &[1.0, 0.1], &Default::default(), |_, _| {}).unwrap();
        assert!((out.z[0] - 3.0).abs() < 1e-7 && (out.z[1] - 0.4).abs() < 1e-7);
    }

    #[test]
    fn cost_never_increases() {
        let f = |z: &[f64]| Some(vec![z[0].sin() * 3.0 + z[1], z[1] * z[1] - 2.0, z[0] - z[1]]);
        let mut costs = Vec::new();
        minimize(f, &[2.0, -1.0], &Default::default(), |_, r| costs.push(cost(r))).unwrap();
        assert!(costs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn failed_trials_are_rejected() {
        // residuals undefined for z < 0; optimum at the boundary region z = 0.5
        let f = |z: &[f64]| if z[0] < 0.0 { None } else { Some(vec![z[0] - 0.5]) };
        let out = minimize(f, &[4.0], &Default::default(), |_, _| {}).unwrap();
        assert!((out.z[0] - 0.5).abs() < 1e-8);
        assert!(minimize(f, &[-1.0], &Default::default(), |_, _| {}).is_none());
    }

    #[test]
    fn jacobian_of_linear_map() {
        let mut f = |z: &[f64]| Some(vec![2.0 * z[0] + z[1], -z[1]]);
        let z = [0.3, 5.0];
        let r0 = f(&z).unwrap();
        let (j, evals) = fd_jacobian(&mut f, &z, &r0, 1e-6);
        assert_eq!(evals, 2);
        let exact = [[2.0, 1.0], [0.0, -1.0]];
        for i in 0..2 {
            for k in 0..2 {
                assert!((j[(i, k)] - exact[i][k]).abs() < 1e-8);
            }
        }
    }
}
