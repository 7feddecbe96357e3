//! Rejection thresholds for the Wasserstein-variance statistic.
//!
//! Under the null the scaled statistic behaves like
//! `n^{-1} Σ_{e<E} ∫ B_e(t)² q(t)² dt` with independent Brownian bridges
//! `B_e`. Three ways to get its `(1 − α)` quantile are provided: a Gamma fit
//! to the exact mean and variance of that functional, direct Monte-Carlo
//! simulation of the bridges, and a bootstrap of the full-class statistic.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{EnvBlock, EnvironmentDataset, Weights};
use crate::error::{Result, WvmError};
use crate::optimizer::{minimize, OptimizerConfig};
use crate::quantile_density::CombinedQd;
use crate::seed::{derive_seed, rng_for};
use crate::special::gamma_quantile;

/// Default number of bootstrap replicates.
pub const DEFAULT_BOOTSTRAP_REPS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMethod {
    Gamma,
    MonteCarlo,
    Bootstrap,
}

impl ThresholdMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            ThresholdMethod::Gamma => "gamma",
            ThresholdMethod::MonteCarlo => "monte_carlo",
            ThresholdMethod::Bootstrap => "bootstrap",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEstimate {
    pub method: ThresholdMethod,
    pub m_hat: f64,
    pub sigma2_hat: f64,
    /// Gamma shape `m̂² / σ̂²` (0 when degenerate).
    pub shape: f64,
    /// Gamma scale `σ̂² / m̂` (0 when degenerate).
    pub scale: f64,
    pub t_alpha: f64,
    pub alpha: f64,
    /// Set when the null law collapses to a point mass at zero.
    pub degenerate: bool,
    /// Sorted Monte-Carlo draws, kept so the threshold can be re-read at
    /// other levels.
    #[serde(skip)]
    pub draws: Option<Arc<Vec<f64>>>,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(WvmError::Domain(format!("alpha = {alpha} not in (0, 1)")))
    }
}

/// Empirical `p`-quantile of a sorted sample (`x_(⌈p N⌉)`).
fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

impl ThresholdEstimate {
    fn from_moments(method: ThresholdMethod, m_hat: f64, sigma2_hat: f64, alpha: f64) -> Self {
        let mut est = Self {
            method,
            m_hat,
            sigma2_hat,
            shape: 0.0,
            scale: 0.0,
            t_alpha: 0.0,
            alpha,
            degenerate: true,
            draws: None,
        };
        if !(m_hat > 0.0 && m_hat.is_finite()) {
            return est;
        }
        est.degenerate = false;
        if !(sigma2_hat > 0.0) {
            // point mass at the mean
            est.t_alpha = m_hat;
            return est;
        }
        est.shape = m_hat * m_hat / sigma2_hat;
        est.scale = sigma2_hat / m_hat;
        est.t_alpha = est.quantile(alpha);
        est
    }

    /// The `(1 − alpha)` quantile of the fitted null law.
    pub fn quantile(&self, alpha: f64) -> f64 {
        if self.degenerate {
            return 0.0;
        }
        if let Some(draws) = &self.draws {
            return empirical_quantile(draws, 1.0 - alpha);
        }
        if self.shape == 0.0 {
            return self.m_hat;
        }
        let hint = self.m_hat + 20.0 * self.sigma2_hat.sqrt();
        gamma_quantile(self.shape, self.scale, 1.0 - alpha, hint)
    }

    /// Re-reads the threshold at another level.
    pub fn at_alpha(&self, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        let mut out = self.clone();
        out.alpha = alpha;
        out.t_alpha = self.quantile(alpha);
        Ok(out)
    }
}

/// Trapezoid weights for the midpoint nodes `(j − 0.5)/G`, with the pinned
/// endpoints 0 and 1 (where the bridge covariance vanishes) as outer nodes.
fn trapezoid_weights(g: usize) -> Vec<f64> {
    let h = 1.0 / g as f64;
    let mut w = vec![h; g];
    w[0] = 0.75 * h;
    w[g - 1] = 0.75 * h;
    if g == 1 {
        w[0] = 0.5 * h;
    }
    w
}

/// `(∫ t(1−t) q(t)² dt, ∫∫ ((s∧t − st) q(s) q(t))² ds dt)` on the grid of `qd`.
pub fn bridge_moments(qd: &CombinedQd) -> (f64, f64) {
    let q = qd.grid_values();
    let g = q.len();
    let t: Vec<f64> = (1..=g).map(|j| (j as f64 - 0.5) / g as f64).collect();
    let w = trapezoid_weights(g);
    let q2: Vec<f64> = q.iter().map(|v| v * v).collect();
    let trace: f64 = (0..g).map(|i| w[i] * t[i] * (1.0 - t[i]) * q2[i]).sum();
    // collected then summed in index order so the result is schedule-independent
    let rows: Vec<f64> = (0..g)
        .into_par_iter()
        .map(|i| {
            // symmetric: diagonal once, off-diagonal twice
            let (s, qs) = (t[i], q2[i]);
            let mut row = 0.0;
            for j in 0..i {
                let k = t[j] - s * t[j];
                row += w[j] * k * k * q2[j];
            }
            let diag = s - s * s;
            w[i] * qs * (2.0 * row + w[i] * diag * diag * qs)
        })
        .collect();
    let hs = rows.iter().sum();
    (trace, hs)
}

/// Gamma approximation with the exact mean and variance of the null
/// functional for quantile density `qd`.
pub fn gamma_threshold(qd: &CombinedQd, n_envs: usize, n: usize, alpha: f64) -> Result<ThresholdEstimate> {
    check_alpha(alpha)?;
    if n_envs < 2 {
        return Err(WvmError::Domain("need at least 2 environments".into()));
    }
    let e1 = (n_envs - 1) as f64;
    let nf = n as f64;
    let (trace, hs) = bridge_moments(qd);
    let m_hat = e1 / nf * trace;
    let sigma2_hat = 2.0 * e1 / (nf * nf) * hs;
    Ok(ThresholdEstimate::from_moments(
        ThresholdMethod::Gamma,
        m_hat,
        sigma2_hat,
        alpha,
    ))
}

/// Monte-Carlo simulation of the null functional with bridges
/// `B(t) = W(t) − t W(1)` on `grid_points` uniform steps.
pub fn mc_threshold(
    qd: &CombinedQd,
    n_envs: usize,
    n: usize,
    alpha: f64,
    n_paths: usize,
    grid_points: usize,
    seed: u64,
) -> Result<ThresholdEstimate> {
    check_alpha(alpha)?;
    if n_paths < 1000 {
        return Err(WvmError::Domain("need at least 1000 Monte-Carlo paths".into()));
    }
    if n_envs < 2 || grid_points < 2 {
        return Err(WvmError::Domain("need E ≥ 2 and at least 2 grid points".into()));
    }
    let g = grid_points;
    let q2: Vec<f64> = (0..=g)
        .map(|j| {
            let v = qd.eval(j as f64 / g as f64);
            v * v
        })
        .collect();
    let sd = (1.0 / g as f64).sqrt();
    let mut draws: Vec<f64> = (0..n_paths)
        .into_par_iter()
        .map(|path| {
            let mut rng = rng_for(seed, "mc_path", path as u64);
            let mut total = 0.0;
            let mut w = vec![0.0; g + 1];
            for _ in 1..n_envs {
                for j in 1..=g {
                    let z: f64 = rng.sample(StandardNormal);
                    w[j] = w[j - 1] + sd * z;
                }
                let end = w[g];
                let mut integral = 0.0;
                let mut prev = 0.0;
                for j in 1..=g {
                    let t = j as f64 / g as f64;
                    let b = w[j] - t * end;
                    let cur = b * b * q2[j];
                    integral += 0.5 * (prev + cur) / g as f64;
                    prev = cur;
                }
                total += integral;
            }
            total / n as f64
        })
        .collect();
    draws.sort_by(f64::total_cmp);
    let mean = draws.iter().sum::<f64>() / n_paths as f64;
    let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n_paths - 1) as f64;
    let mut est = ThresholdEstimate::from_moments(ThresholdMethod::MonteCarlo, mean, var, alpha);
    if !est.degenerate {
        est.t_alpha = empirical_quantile(&draws, 1.0 - alpha);
        est.draws = Some(Arc::new(draws));
    }
    Ok(est)
}

/// Resamples rows with replacement inside every environment.
pub fn resample(ds: &EnvironmentDataset, rng: &mut impl Rng) -> Result<EnvironmentDataset> {
    let p = ds.p();
    let blocks = ds
        .environments()
        .iter()
        .map(|b| {
            let n = b.len();
            let mut x = Vec::with_capacity(n * p);
            let mut y = Vec::with_capacity(n);
            for _ in 0..n {
                let i = rng.random_range(0..n);
                x.extend_from_slice(b.row(i));
                y.push(b.y()[i]);
            }
            EnvBlock::new(b.env_id(), p, x, y)
        })
        .collect::<Result<Vec<_>>>()?;
    ds.with_blocks(blocks)
}

/// Bootstraps the full-class statistic `B` times and fits a Gamma to the
/// replicates' mean and variance.
pub fn bootstrap_threshold(
    ds: &EnvironmentDataset,
    w: &Weights,
    cfg: &OptimizerConfig,
    alpha: f64,
    reps: usize,
    seed: u64,
) -> Result<ThresholdEstimate> {
    check_alpha(alpha)?;
    if reps < 2 {
        return Err(WvmError::Domain("bootstrap needs at least 2 replicates".into()));
    }
    let mask = vec![false; ds.p()];
    let values = (0..reps)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng_for(seed, "bootstrap", b as u64);
            let sample = resample(ds, &mut rng)?;
            let cfg = OptimizerConfig {
                seed: derive_seed(seed, "bootstrap_opt", b as u64),
                ..cfg.clone()
            };
            Ok(minimize(&sample, w, &mask, &cfg)?.value)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean = values.iter().sum::<f64>() / reps as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
    Ok(ThresholdEstimate::from_moments(
        ThresholdMethod::Bootstrap,
        mean,
        var,
        alpha,
    ))
}
