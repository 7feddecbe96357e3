//! L-BFGS minimization of the Wasserstein-variance objective over the free
//! coordinates of a linear model.

use std::collections::VecDeque;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{EnvironmentDataset, Weights};
use crate::error::{Result, WvmError};
use crate::linalg::pooled_least_squares;
use crate::objective::{free_indices, LinearModel, Objective};
use crate::seed::rng_for;

const ARMIJO_C1: f64 = 1e-4;
const MAX_HALVINGS: usize = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    /// L-BFGS history length.
    pub memory: usize,
    pub max_iters: usize,
    /// Stop when `‖g‖ < grad_tol · (1 + |value|)`.
    pub grad_tol: f64,
    /// Stop when the accepted decrease is below `value_tol · (1 + |value|)`.
    pub value_tol: f64,
    /// Random restarts around the least-squares start.
    pub n_restarts: usize,
    /// Standard deviation of the restart perturbation.
    pub restart_scale: f64,
    pub fit_intercept: bool,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            memory: 50,
            max_iters: 500,
            grad_tol: 1e-8,
            value_tol: 1e-10,
            n_restarts: 2,
            restart_scale: 0.5,
            fit_intercept: true,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.memory == 0 || self.max_iters == 0 {
            return Err(WvmError::Domain("memory and max_iters must be positive".into()));
        }
        if !(self.grad_tol > 0.0 && self.value_tol > 0.0) {
            return Err(WvmError::Domain("tolerances must be positive".into()));
        }
        if !(self.restart_scale >= 0.0) {
            return Err(WvmError::Domain("restart_scale must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimizeResult {
    pub model: LinearModel,
    pub value: f64,
    pub iters: usize,
    pub converged: bool,
}

struct RunOutcome {
    theta: Vec<f64>,
    value: f64,
    iters: usize,
    converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn non_finite(what: &str, iter: usize) -> WvmError {
    WvmError::NonFinite(format!("{what} at iteration {iter}"))
}

/// Two-loop recursion: returns `-H g`.
fn lbfgs_direction(g: &[f64], hist: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(hist.len());
    for (s, y, rho) in hist.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some((s, y, _)) = hist.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|qi| *qi *= gamma);
    }
    for ((s, y, rho), a) in hist.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|qi| *qi = -*qi);
    q
}

fn lbfgs(obj: &Objective<'_>, start: Vec<f64>, cfg: &OptimizerConfig) -> Result<RunOutcome> {
    let dim = obj.dim();
    let icpt = dim - 1;
    let grad_at = |theta: &[f64]| {
        let mut ev = obj.eval(theta);
        if !cfg.fit_intercept {
            ev.gradient[icpt] = 0.0;
        }
        ev
    };

    let mut x = start;
    let ev = grad_at(&x);
    let (mut f, mut g) = (ev.value, ev.gradient);
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(non_finite("objective", 0));
    }
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.memory);
    let mut converged = false;
    let mut iters = 0;

    while iters < cfg.max_iters {
        if norm(&g) < cfg.grad_tol * (1.0 + f.abs()) {
            converged = true;
            break;
        }
        iters += 1;

        let mut reset = false;
        let accepted = loop {
            let mut d = if hist.is_empty() {
                g.iter().map(|v| -v).collect()
            } else {
                lbfgs_direction(&g, &hist)
            };
            let mut slope = dot(&g, &d);
            if !(slope < 0.0) {
                hist.clear();
                d = g.iter().map(|v| -v).collect();
                slope = dot(&g, &d);
            }
            let mut step = if hist.is_empty() {
                (1.0 / norm(&d)).min(1.0)
            } else {
                1.0
            };
            let mut found = None;
            for _ in 0..=MAX_HALVINGS {
                let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
                // the gradient comes with every trial: most first trials are
                // accepted, and a second pass over the data would cost more
                let ev = grad_at(&trial);
                if !ev.value.is_finite() {
                    return Err(non_finite("trial value", iters));
                }
                if ev.value <= f + ARMIJO_C1 * step * slope {
                    found = Some((trial, ev));
                    break;
                }
                step *= 0.5;
            }
            match found {
                Some(t) => break Some(t),
                None if !reset && !hist.is_empty() => {
                    hist.clear();
                    reset = true;
                }
                None => break None,
            }
        };
        let Some((xn, ev)) = accepted else {
            break;
        };

        if !ev.value.is_finite() || ev.gradient.iter().any(|v| !v.is_finite()) {
            return Err(non_finite("objective", iters));
        }
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = ev.gradient.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            if hist.len() == cfg.memory {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        let decrease = f - ev.value;
        x = xn;
        f = ev.value;
        g = ev.gradient;
        if decrease <= cfg.value_tol * (1.0 + f.abs()) {
            converged = true;
            break;
        }
    }
    Ok(RunOutcome {
        theta: x,
        value: f,
        iters,
        converged,
    })
}

/// Least-squares warm start restricted to the free coordinates.
pub fn ols_start(ds: &EnvironmentDataset, mask: &[bool]) -> LinearModel {
    let free = free_indices(mask);
    let (coef, intercept) = pooled_least_squares(ds, &free);
    let mut beta = vec![0.0; ds.p()];
    for (&j, c) in free.iter().zip(coef) {
        beta[j] = c;
    }
    LinearModel {
        beta,
        intercept,
        mask: mask.to_vec(),
    }
}

/// Minimizes the Wasserstein variance over models obeying `mask`, starting
/// from least squares plus `cfg.n_restarts` perturbed copies.
pub fn minimize(
    ds: &EnvironmentDataset,
    w: &Weights,
    mask: &[bool],
    cfg: &OptimizerConfig,
) -> Result<MinimizeResult> {
    minimize_with_starts(ds, w, mask, cfg, &[])
}

/// As [`minimize`], with additional caller-provided start points. Coordinates
/// excluded by `mask` are zeroed in every start.
pub fn minimize_with_starts(
    ds: &EnvironmentDataset,
    w: &Weights,
    mask: &[bool],
    cfg: &OptimizerConfig,
    extra_starts: &[LinearModel],
) -> Result<MinimizeResult> {
    cfg.validate()?;
    let obj = Objective::new(ds, w, mask)?;
    let mut base = ols_start(ds, mask);
    if !cfg.fit_intercept {
        base.intercept = 0.0;
    }
    let base_theta = obj.pack(&base);

    let mut starts = vec![base_theta.clone()];
    let noise = Normal::new(0.0, cfg.restart_scale).expect("scale validated");
    for r in 0..cfg.n_restarts {
        let mut rng = rng_for(cfg.seed, "restart", r as u64);
        let mut t = base_theta.clone();
        let k = obj.free().len();
        for v in &mut t[..k] {
            *v += noise.sample(&mut rng);
        }
        starts.push(t);
    }
    for m in extra_starts {
        if m.p() != ds.p() {
            return Err(WvmError::DimensionMismatch {
                expected: ds.p(),
                got: m.p(),
            });
        }
        let mut t = obj.pack(m);
        if !cfg.fit_intercept {
            *t.last_mut().expect("intercept slot") = 0.0;
        }
        starts.push(t);
    }

    let mut best: Option<RunOutcome> = None;
    let mut total_iters = 0;
    for s in starts {
        let out = lbfgs(&obj, s, cfg)?;
        total_iters += out.iters;
        if best.as_ref().is_none_or(|b| out.value < b.value) {
            best = Some(out);
        }
    }
    let best = best.expect("at least one start");
    let mut model = obj.unpack(&best.theta);
    if cfg.fit_intercept {
        // the objective is blind to the intercept; report the mean residual
        let (mut sum, n) = (0.0, ds.n() as f64);
        for b in ds.environments() {
            for (x, y) in b.rows().zip(b.y()) {
                sum += y - model.beta.iter().zip(x).map(|(c, v)| c * v).sum::<f64>();
            }
        }
        model.intercept = sum / n;
    } else {
        model.intercept = 0.0;
    }
    Ok(MinimizeResult {
        model,
        value: best.value,
        iters: total_iters,
        converged: best.converged,
    })
}
