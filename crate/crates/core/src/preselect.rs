//! Lasso-path screening of predictors.

use serde::{Deserialize, Serialize};

use crate::dataset::{standardize, EnvironmentDataset};
use crate::error::{Result, WvmError};

const PATH_RATIO: f64 = 0.9;
const MAX_STEPS: usize = 200;
const CD_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoPathResult {
    /// Predictors in order of first nonzero coefficient.
    pub entered_order: Vec<usize>,
    /// First `k` entries, padded by marginal correlation if the path ran out.
    pub selected: Vec<usize>,
    /// Number of predictors taken from the padding rule.
    pub padded: usize,
}

fn soft_threshold(z: f64, lambda: f64) -> f64 {
    if z > lambda {
        z - lambda
    } else if z < -lambda {
        z + lambda
    } else {
        0.0
    }
}

/// Pooled, column-major design used by the coordinate-descent solver.
#[derive(Debug, Clone)]
pub struct LassoProblem {
    cols: Vec<Vec<f64>>,
    y: Vec<f64>,
    /// `‖x_j‖² / n`.
    col_sq: Vec<f64>,
}

impl LassoProblem {
    /// Builds the problem from an already standardized dataset; `y` is
    /// centered.
    pub fn from_standardized(ds: &EnvironmentDataset) -> Self {
        let p = ds.p();
        let n = ds.n() as f64;
        let mut cols = vec![Vec::with_capacity(ds.n()); p];
        let mut y = Vec::with_capacity(ds.n());
        for b in ds.environments() {
            for (row, &t) in b.rows().zip(b.y()) {
                for (c, v) in cols.iter_mut().zip(row) {
                    c.push(*v);
                }
                y.push(t);
            }
        }
        let mean = y.iter().sum::<f64>() / n;
        y.iter_mut().for_each(|v| *v -= mean);
        let col_sq = cols
            .iter()
            .map(|c| c.iter().map(|v| v * v).sum::<f64>() / n)
            .collect();
        Self { cols, y, col_sq }
    }

    pub fn p(&self) -> usize {
        self.cols.len()
    }

    fn n(&self) -> f64 {
        self.y.len() as f64
    }

    /// `|x_jᵀ y| / n` for every column.
    pub fn marginal(&self) -> Vec<f64> {
        self.cols
            .iter()
            .map(|c| (c.iter().zip(&self.y).map(|(a, b)| a * b).sum::<f64>() / self.n()).abs())
            .collect()
    }

    pub fn lambda_max(&self) -> f64 {
        self.marginal().into_iter().fold(0.0, f64::max)
    }

    /// Cyclic coordinate descent for `(1/2n)‖y − Xβ‖² + λ‖β‖₁`, warm-started
    /// from `beta`.
    pub fn solve(&self, lambda: f64, beta: &mut [f64]) {
        let n = self.n();
        let mut resid = self.y.clone();
        for (c, &b) in self.cols.iter().zip(beta.iter()) {
            if b != 0.0 {
                resid.iter_mut().zip(c).for_each(|(r, v)| *r -= b * v);
            }
        }
        for _ in 0..MAX_SWEEPS {
            let mut max_change: f64 = 0.0;
            for j in 0..self.p() {
                if self.col_sq[j] == 0.0 {
                    continue;
                }
                let c = &self.cols[j];
                let rho = c.iter().zip(&resid).map(|(a, r)| a * r).sum::<f64>() / n
                    + self.col_sq[j] * beta[j];
                let new = soft_threshold(rho, lambda) / self.col_sq[j];
                let delta = new - beta[j];
                if delta != 0.0 {
                    resid.iter_mut().zip(c).for_each(|(r, v)| *r -= delta * v);
                    beta[j] = new;
                    max_change = max_change.max(delta.abs());
                }
            }
            if max_change < CD_TOL {
                break;
            }
        }
    }

    /// `|x_jᵀ (y − Xβ)| / n` for every column.
    pub fn gradient_magnitudes(&self, beta: &[f64]) -> Vec<f64> {
        let mut resid = self.y.clone();
        for (c, &b) in self.cols.iter().zip(beta) {
            resid.iter_mut().zip(c).for_each(|(r, v)| *r -= b * v);
        }
        self.cols
            .iter()
            .map(|c| (c.iter().zip(&resid).map(|(a, r)| a * r).sum::<f64>() / self.n()).abs())
            .collect()
    }
}

/// Selects `k` predictors by their entry order along a decreasing Lasso path.
pub fn lasso_preselect(ds: &EnvironmentDataset, k: usize) -> Result<LassoPathResult> {
    if k == 0 || k > ds.p() {
        return Err(WvmError::Domain(format!("k = {k} not in 1..={}", ds.p())));
    }
    let (std, _) = standardize(ds);
    let problem = LassoProblem::from_standardized(&std);
    let p = problem.p();
    let lambda_max = problem.lambda_max();

    let mut beta = vec![0.0; p];
    let mut entered: Vec<usize> = Vec::new();
    let mut lambda = lambda_max;
    for _ in 0..MAX_STEPS {
        lambda *= PATH_RATIO;
        problem.solve(lambda, &mut beta);
        let mut fresh: Vec<usize> = (0..p)
            .filter(|&j| beta[j] != 0.0 && !entered.contains(&j))
            .collect();
        fresh.sort_by(|&a, &b| beta[b].abs().total_cmp(&beta[a].abs()).then(a.cmp(&b)));
        entered.extend(fresh);
        if entered.len() >= k {
            break;
        }
    }

    let mut selected: Vec<usize> = entered.iter().copied().take(k).collect();
    let mut padded = 0;
    if selected.len() < k {
        let marginal = problem.marginal();
        let mut rest: Vec<usize> = (0..p).filter(|j| !selected.contains(j)).collect();
        rest.sort_by(|&a, &b| marginal[b].total_cmp(&marginal[a]).then(a.cmp(&b)));
        padded = k - selected.len();
        selected.extend(rest.into_iter().take(padded));
    }
    Ok(LassoPathResult {
        entered_order: entered,
        selected,
        padded,
    })
}
