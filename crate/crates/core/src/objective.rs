//! Wasserstein variance of linear-model residuals as a function of the
//! coefficients, with its (super)gradient.

use std::cell::RefCell;

use serde::{Deserialize, Serialize};

use crate::dataset::{EnvironmentDataset, Weights};
use crate::error::{Result, WvmError};
use crate::transport::{QuantileGrid, QuantileView};

/// `f(x) = βᵀx + intercept`, with masked coordinates pinned at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub beta: Vec<f64>,
    pub intercept: f64,
    /// `true` marks a coordinate excluded from the class.
    pub mask: Vec<bool>,
}

impl LinearModel {
    pub fn zeros(p: usize) -> Self {
        Self {
            beta: vec![0.0; p],
            intercept: 0.0,
            mask: vec![false; p],
        }
    }

    pub fn with_mask(beta: Vec<f64>, intercept: f64, mask: Vec<bool>) -> Result<Self> {
        if beta.len() != mask.len() {
            return Err(WvmError::DimensionMismatch {
                expected: mask.len(),
                got: beta.len(),
            });
        }
        let beta = beta
            .into_iter()
            .zip(&mask)
            .map(|(b, &m)| if m { 0.0 } else { b })
            .collect();
        Ok(Self {
            beta,
            intercept,
            mask,
        })
    }

    pub fn p(&self) -> usize {
        self.beta.len()
    }

    #[inline]
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.beta.iter().zip(x).map(|(b, v)| b * v).sum::<f64>() + self.intercept
    }

    /// Indices of unmasked coefficients.
    pub fn free_indices(&self) -> Vec<usize> {
        free_indices(&self.mask)
    }
}

pub(crate) fn free_indices(mask: &[bool]) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter_map(|(j, &m)| (!m).then_some(j))
        .collect()
}

/// Objective value and a (super)gradient over `[free β..., intercept]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveEval {
    pub value: f64,
    pub gradient: Vec<f64>,
}

fn check_dims(model: &LinearModel, ds: &EnvironmentDataset) -> Result<()> {
    if model.p() != ds.p() || model.mask.len() != ds.p() {
        return Err(WvmError::DimensionMismatch {
            expected: ds.p(),
            got: model.p(),
        });
    }
    Ok(())
}

/// Sorted residuals `y − f(x)` per environment.
pub fn residuals(model: &LinearModel, ds: &EnvironmentDataset) -> Result<Vec<QuantileView>> {
    check_dims(model, ds)?;
    Ok(ds
        .environments()
        .iter()
        .map(|b| {
            let r = b
                .rows()
                .zip(b.y())
                .map(|(x, y)| y - model.predict(x))
                .collect();
            QuantileView::from_unsorted(r)
        })
        .collect())
}

/// The Wasserstein-variance objective bound to one dataset, weight vector and
/// exclusion mask. The merged quantile grid is computed once.
#[derive(Debug, Clone)]
pub struct Objective<'a> {
    ds: &'a EnvironmentDataset,
    w: &'a Weights,
    grid: QuantileGrid,
    mask: Vec<bool>,
    free: Vec<usize>,
    /// Per environment, the free columns packed column-major (`|free| × n_e`).
    free_cols: Vec<Vec<f64>>,
    /// Buffers reused across evaluations. The stored observation order of the
    /// previous evaluation makes the next sort nearly linear, since nearby
    /// parameters give nearly sorted residuals.
    scratch: RefCell<Scratch>,
}

impl<'a> Objective<'a> {
    pub fn new(ds: &'a EnvironmentDataset, w: &'a Weights, mask: &[bool]) -> Result<Self> {
        if mask.len() != ds.p() {
            return Err(WvmError::DimensionMismatch {
                expected: ds.p(),
                got: mask.len(),
            });
        }
        if w.len() != ds.n_envs() {
            return Err(WvmError::DimensionMismatch {
                expected: ds.n_envs(),
                got: w.len(),
            });
        }
        let free = free_indices(mask);
        let grid = QuantileGrid::merged(&ds.env_sizes());
        let grid_len = grid.len();
        Ok(Self {
            ds,
            w,
            grid,
            mask: mask.to_vec(),
            free_cols: ds
                .environments()
                .iter()
                .map(|b| free.iter().flat_map(|&j| b.rows().map(move |x| x[j])).collect())
                .collect(),
            free,
            scratch: RefCell::new(Scratch::new(&ds.env_sizes(), grid_len)),
        })
    }

    pub fn dataset(&self) -> &EnvironmentDataset {
        self.ds
    }

    pub fn weights(&self) -> &Weights {
        self.w
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Number of optimization variables (free coefficients plus intercept).
    pub fn dim(&self) -> usize {
        self.free.len() + 1
    }

    pub fn free(&self) -> &[usize] {
        &self.free
    }

    /// Packs a model into the parameter vector.
    pub fn pack(&self, model: &LinearModel) -> Vec<f64> {
        let mut theta: Vec<f64> = self.free.iter().map(|&j| model.beta[j]).collect();
        theta.push(model.intercept);
        theta
    }

    pub fn unpack(&self, theta: &[f64]) -> LinearModel {
        let mut beta = vec![0.0; self.ds.p()];
        for (&j, &t) in self.free.iter().zip(theta) {
            beta[j] = t;
        }
        LinearModel {
            beta,
            intercept: theta[self.free.len()],
            mask: self.mask.clone(),
        }
    }

    /// Value and supergradient at `theta`.
    pub fn eval(&self, theta: &[f64]) -> ObjectiveEval {
        self.eval_inner(theta, true)
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        self.eval_inner(theta, false).value
    }

    fn eval_inner(&self, theta: &[f64], with_gradient: bool) -> ObjectiveEval {
        debug_assert_eq!(theta.len(), self.dim());
        let k = self.free.len();
        let (beta, intercept) = (&theta[..k], theta[k]);
        let w = self.w.as_slice();
        let grid = &self.grid;
        let mut guard = self.scratch.borrow_mut();
        let sc = &mut *guard;

        // per environment: residuals sorted by (value, index), which is the
        // stable order regardless of the starting permutation
        for (e, b) in self.ds.environments().iter().enumerate() {
            let n = b.y().len();
            let resid = &mut sc.resid[e];
            resid.iter_mut().zip(b.y()).for_each(|(r, y)| *r = y - intercept);
            for (t, col) in beta.iter().zip(self.free_cols[e].chunks_exact(n.max(1))) {
                resid.iter_mut().zip(col).for_each(|(r, v)| *r -= t * v);
            }
            let perm = &mut sc.perm[e];
            sc.keys.clear();
            sc.keys
                .extend(perm.iter().map(|&i| (u128::from(order_key(resid[i as usize])) << 64) | u128::from(i)));
            sort_nearly_sorted(&mut sc.keys);
            for ((p, v), &key) in perm.iter_mut().zip(sc.sorted[e].iter_mut()).zip(&sc.keys) {
                *p = key as u32;
                *v = resid[*p as usize];
            }
        }

        sc.bary.iter_mut().for_each(|b| *b = 0.0);
        for (e, &we) in w.iter().enumerate() {
            let sorted = &sc.sorted[e];
            for (b, &rank) in sc.bary.iter_mut().zip(grid.ranks(e)) {
                *b += we * sorted[rank - 1];
            }
        }

        let mut value = 0.0;
        let mut gradient = vec![0.0; if with_gradient { k + 1 } else { 0 }];
        for (e, &we) in w.iter().enumerate() {
            let (sorted, perm) = (&sc.sorted[e], &sc.perm[e]);
            let ranks = grid.ranks(e);
            if !with_gradient {
                for ((&rank, &gap), &b) in ranks.iter().zip(grid.gaps()).zip(&sc.bary) {
                    let dev = sorted[rank - 1] - b;
                    value += we * dev * dev * gap;
                }
                continue;
            }
            // accumulated weight on each observation of this environment
            let mass = &mut sc.mass[..sorted.len()];
            mass.iter_mut().for_each(|m| *m = 0.0);
            for ((&rank, &gap), &b) in ranks.iter().zip(grid.gaps()).zip(&sc.bary) {
                let dev = sorted[rank - 1] - b;
                value += we * dev * dev * gap;
                mass[perm[rank - 1] as usize] -= 2.0 * gap * we * dev;
            }
            let n = sorted.len();
            for (g, col) in gradient.iter_mut().zip(self.free_cols[e].chunks_exact(n.max(1))) {
                *g += dot(col, mass);
            }
            gradient[k] += mass.iter().sum::<f64>();
        }
        ObjectiveEval {
            value: value.max(0.0),
            gradient,
        }
    }
}

#[derive(Debug, Clone)]
struct Scratch {
    /// Observation order of the last evaluation, per environment.
    perm: Vec<Vec<u32>>,
    resid: Vec<Vec<f64>>,
    sorted: Vec<Vec<f64>>,
    keys: Vec<u128>,
    bary: Vec<f64>,
    mass: Vec<f64>,
}

impl Scratch {
    fn new(sizes: &[usize], grid_len: usize) -> Self {
        let max = sizes.iter().copied().max().unwrap_or(0);
        Self {
            perm: sizes.iter().map(|&n| (0..n as u32).collect()).collect(),
            resid: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            sorted: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            keys: Vec::with_capacity(max),
            bary: vec![0.0; grid_len],
            mass: vec![0.0; max],
        }
    }
}

/// Dot product with four interleaved partial sums.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Insertion sort while the input stays close to sorted, falling back to
/// pattern-defeating quicksort once the shifting work exceeds a few passes.
fn sort_nearly_sorted(keys: &mut [u128]) {
    let budget = 8 * keys.len();
    let mut work = 0;
    for i in 1..keys.len() {
        let key = keys[i];
        let mut j = i;
        while j > 0 && keys[j - 1] > key {
            keys[j] = keys[j - 1];
            j -= 1;
        }
        keys[j] = key;
        work += i - j;
        if work > budget {
            keys.sort_unstable();
            return;
        }
    }
}

/// Maps `v` to an unsigned integer ordered like `f64::total_cmp`.
#[inline]
fn order_key(v: f64) -> u64 {
    let b = v.to_bits();
    if b >> 63 == 1 {
        !b
    } else {
        b | (1 << 63)
    }
}

/// Objective value and supergradient of `model` on `ds`.
pub fn evaluate(model: &LinearModel, ds: &EnvironmentDataset, w: &Weights) -> Result<ObjectiveEval> {
    check_dims(model, ds)?;
    let obj = Objective::new(ds, w, &model.mask)?;
    Ok(obj.eval(&obj.pack(model)))
}
