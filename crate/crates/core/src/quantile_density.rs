//! Kernel estimation of the quantile density `q = (F^{-1})'`.
//!
//! The estimator smooths the spacings of the sorted sample:
//! `q̂(t) = Σ_{i≥2} (x_(i) − x_(i−1)) K_h(t − (i−1)/n)` with the Epanechnikov
//! kernel and `h = min(scale · n^{-1/3}, 0.49)`.

use crate::dataset::Weights;
use crate::error::{Result, WvmError};
use crate::transport::QuantileView;

/// Default number of cells in the cached evaluation grid.
pub const DEFAULT_GRID: usize = 1024;
const MAX_BANDWIDTH: f64 = 0.49;

/// `K(u) = 0.75 (1 − u²)` on `[−1, 1]`.
#[inline]
pub fn epanechnikov(u: f64) -> f64 {
    if u.abs() < 1.0 {
        0.75 * (1.0 - u * u)
    } else {
        0.0
    }
}

/// Midpoints `(j − 0.5) / g`, `j = 1..=g`.
pub fn midpoint_grid(g: usize) -> Vec<f64> {
    (1..=g).map(|j| (j as f64 - 0.5) / g as f64).collect()
}

/// A fitted quantile-density estimate for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct QdEstimate {
    sample: Vec<f64>,
    bandwidth: f64,
    grid_values: Vec<f64>,
}

impl QdEstimate {
    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn sample(&self) -> &[f64] {
        &self.sample
    }

    /// Values on the cached midpoint grid.
    pub fn grid_values(&self) -> &[f64] {
        &self.grid_values
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.sample.len();
        let h = self.bandwidth;
        let nf = n as f64;
        // only spacings with |t − (i−1)/n| < h contribute
        let lo = (((t - h) * nf).floor().max(0.0) as usize).max(1);
        let hi = (((t + h) * nf).ceil().max(0.0) as usize + 1).min(n - 1);
        let mut acc = 0.0;
        for i in lo..=hi {
            let gap = self.sample[i] - self.sample[i - 1];
            if gap != 0.0 {
                acc += gap * epanechnikov((t - i as f64 / nf) / h);
            }
        }
        (acc / h).max(0.0)
    }
}

/// Bandwidth `min(scale · n^{-1/3}, 0.49)`.
pub fn bandwidth_for(n: usize, scale: f64) -> f64 {
    (scale * (n as f64).powf(-1.0 / 3.0)).min(MAX_BANDWIDTH)
}

pub fn estimate_qd(view: &QuantileView, bandwidth_scale: f64) -> Result<QdEstimate> {
    estimate_qd_on(view, bandwidth_scale, DEFAULT_GRID)
}

pub fn estimate_qd_on(view: &QuantileView, bandwidth_scale: f64, grid: usize) -> Result<QdEstimate> {
    if view.len() < 2 {
        return Err(WvmError::Degenerate(
            "quantile density needs at least 2 observations".into(),
        ));
    }
    if !(bandwidth_scale > 0.0 && bandwidth_scale.is_finite()) {
        return Err(WvmError::Domain("bandwidth scale must be positive".into()));
    }
    if grid == 0 {
        return Err(WvmError::Domain("grid must have at least one point".into()));
    }
    let mut est = QdEstimate {
        sample: view.values().to_vec(),
        bandwidth: bandwidth_for(view.len(), bandwidth_scale),
        grid_values: Vec::new(),
    };
    est.grid_values = midpoint_grid(grid).into_iter().map(|t| est.eval(t)).collect();
    Ok(est)
}

/// Pointwise weighted average of per-environment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinedQd {
    parts: Vec<QdEstimate>,
    weights: Vec<f64>,
    grid_values: Vec<f64>,
}

impl CombinedQd {
    /// A constant quantile density on a grid of `g` midpoints.
    pub fn constant(c: f64, g: usize) -> Self {
        Self {
            parts: Vec::new(),
            weights: Vec::new(),
            grid_values: vec![c.max(0.0); g],
        }
    }

    /// Builds a combined density directly from grid values (e.g. a known
    /// analytic `q`). `eval` interpolates piecewise-linearly between midpoints.
    pub fn from_grid_values(values: Vec<f64>) -> Self {
        Self {
            parts: Vec::new(),
            weights: Vec::new(),
            grid_values: values,
        }
    }

    pub fn grid_values(&self) -> &[f64] {
        &self.grid_values
    }

    pub fn grid_len(&self) -> usize {
        self.grid_values.len()
    }

    pub fn eval(&self, t: f64) -> f64 {
        if !self.parts.is_empty() {
            return self
                .parts
                .iter()
                .zip(&self.weights)
                .map(|(p, w)| w * p.eval(t))
                .sum();
        }
        let g = self.grid_values.len();
        let pos = (t * g as f64 - 0.5).clamp(0.0, (g - 1) as f64);
        let j = pos.floor() as usize;
        if j + 1 >= g {
            return self.grid_values[g - 1];
        }
        let frac = pos - j as f64;
        self.grid_values[j] * (1.0 - frac) + self.grid_values[j + 1] * frac
    }

    /// Multiplies the density by `lambda ≥ 0`.
    pub fn scaled(&self, lambda: f64) -> Self {
        let mut out = self.clone();
        out.grid_values.iter_mut().for_each(|v| *v *= lambda);
        out.weights.iter_mut().for_each(|w| *w *= lambda);
        out
    }
}

pub fn combined_qd(estimates: &[QdEstimate], w: &Weights) -> Result<CombinedQd> {
    if estimates.len() != w.len() {
        return Err(WvmError::DimensionMismatch {
            expected: estimates.len(),
            got: w.len(),
        });
    }
    let g = estimates[0].grid_values.len();
    if estimates.iter().any(|e| e.grid_values.len() != g) {
        return Err(WvmError::Domain("estimates use different grids".into()));
    }
    let mut grid_values = vec![0.0; g];
    for (est, &we) in estimates.iter().zip(w.as_slice()) {
        for (acc, v) in grid_values.iter_mut().zip(&est.grid_values) {
            *acc += we * v;
        }
    }
    Ok(CombinedQd {
        parts: estimates.to_vec(),
        weights: w.as_slice().to_vec(),
        grid_values,
    })
}

/// Trapezoid rule over the midpoint grid, from the first to the last node.
pub fn trapezoid_mass(values: &[f64]) -> f64 {
    let g = values.len() as f64;
    values
        .windows(2)
        .map(|w| 0.5 * (w[0] + w[1]) / g)
        .sum()
}
