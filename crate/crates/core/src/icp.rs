//! Exhaustive invariant causal prediction baseline.
//!
//! Every subset `S` of predictors is tested: pooled least squares of `y` on
//! `x_S`, then pairwise two-sample Kolmogorov–Smirnov tests of the residual
//! samples across environments with a Bonferroni correction over pairs. The
//! estimate is the intersection of all accepted subsets.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::EnvironmentDataset;
use crate::error::{Result, WvmError};
use crate::linalg::pooled_least_squares;

pub const DEFAULT_MAX_P: usize = 20;

/// Kolmogorov–Smirnov statistic and asymptotic p-value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// `P(K > x)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 1.18 {
        // small-x form: P(K ≤ x) = √(2π)/x Σ exp(−(2k−1)²π²/(8x²))
        let pi = std::f64::consts::PI;
        let c = -pi * pi / (8.0 * x * x);
        let mut sum = 0.0;
        for k in 1..=8 {
            let m = (2 * k - 1) as f64;
            sum += (c * m * m).exp();
        }
        return (1.0 - (2.0 * pi).sqrt() / x * sum).clamp(0.0, 1.0);
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Two-sample KS test on sorted samples.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    assert!(!a.is_empty() && !b.is_empty(), "KS test needs nonempty samples");
    let (na, nb) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < na && j < nb {
        let v = a[i].min(b[j]);
        while i < na && a[i] <= v {
            i += 1;
        }
        while j < nb && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    let en = ((na * nb) as f64 / (na + nb) as f64).sqrt();
    KsResult {
        statistic: d,
        p_value: kolmogorov_survival(en * d),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetTest {
    pub subset: Vec<usize>,
    /// Bonferroni-combined minimum pairwise p-value.
    pub p_value: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcpReport {
    pub alpha: f64,
    pub accepted_subsets: Vec<Vec<usize>>,
    /// Empty when no subset is accepted (see `none_accepted`).
    pub intersection: Vec<usize>,
    pub none_accepted: bool,
    pub tests: Vec<SubsetTest>,
    pub n_subsets_tested: usize,
    #[serde(skip)]
    pub elapsed: Duration,
}

impl IcpReport {
    /// Per-predictor score `1 − max_{S ∌ k} p(S)`: large when every subset
    /// that leaves `k` out is rejected.
    pub fn variable_scores(&self, p: usize) -> Vec<f64> {
        (0..p)
            .map(|k| {
                let best = self
                    .tests
                    .iter()
                    .filter(|t| !t.subset.contains(&k))
                    .map(|t| t.p_value)
                    .fold(0.0, f64::max);
                1.0 - best
            })
            .collect()
    }

    /// Decisions at another level from the stored p-values.
    pub fn at_alpha(&self, alpha: f64) -> Result<IcpReport> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(WvmError::Domain(format!("alpha = {alpha} not in (0, 1)")));
        }
        let mut out = self.clone();
        out.alpha = alpha;
        for t in &mut out.tests {
            t.accepted = t.p_value > alpha;
        }
        out.accepted_subsets = out
            .tests
            .iter()
            .filter(|t| t.accepted)
            .map(|t| t.subset.clone())
            .collect();
        out.intersection = intersect(&out.accepted_subsets);
        out.none_accepted = out.accepted_subsets.is_empty();
        Ok(out)
    }
}

fn intersect(accepted: &[Vec<usize>]) -> Vec<usize> {
    match accepted.split_first() {
        None => Vec::new(),
        Some((first, rest)) => first
            .iter()
            .copied()
            .filter(|k| rest.iter().all(|s| s.contains(k)))
            .collect(),
    }
}

fn subset_from_bits(bits: u64, p: usize) -> Vec<usize> {
    (0..p).filter(|&j| bits >> j & 1 == 1).collect()
}

/// Invariance test of one subset.
pub fn test_subset(ds: &EnvironmentDataset, subset: &[usize]) -> f64 {
    let (coef, intercept) = pooled_least_squares(ds, subset);
    let resid: Vec<Vec<f64>> = ds
        .environments()
        .iter()
        .map(|b| {
            let mut r: Vec<f64> = b
                .rows()
                .zip(b.y())
                .map(|(x, y)| {
                    y - intercept - subset.iter().zip(&coef).map(|(&j, c)| c * x[j]).sum::<f64>()
                })
                .collect();
            r.sort_by(f64::total_cmp);
            r
        })
        .collect();
    let e = resid.len();
    let pairs = e * (e - 1) / 2;
    let mut min_p: f64 = 1.0;
    for a in 0..e {
        for b in a + 1..e {
            min_p = min_p.min(ks_two_sample(&resid[a], &resid[b]).p_value);
        }
    }
    (min_p * pairs as f64).min(1.0)
}

pub fn run_icp(ds: &EnvironmentDataset, alpha: f64, max_p: usize) -> Result<IcpReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(WvmError::Domain(format!("alpha = {alpha} not in (0, 1)")));
    }
    let p = ds.p();
    if p > max_p || p >= 63 {
        return Err(WvmError::Refused(format!(
            "ICP tests 2^p subsets; p = {p} exceeds max_p = {max_p}"
        )));
    }
    let start = Instant::now();
    let tests: Vec<SubsetTest> = (0..1u64 << p)
        .into_par_iter()
        .map(|bits| {
            let subset = subset_from_bits(bits, p);
            let p_value = test_subset(ds, &subset);
            SubsetTest {
                subset,
                p_value,
                accepted: p_value > alpha,
            }
        })
        .collect();
    let accepted_subsets: Vec<Vec<usize>> = tests
        .iter()
        .filter(|t| t.accepted)
        .map(|t| t.subset.clone())
        .collect();
    let intersection = intersect(&accepted_subsets);
    Ok(IcpReport {
        alpha,
        none_accepted: accepted_subsets.is_empty(),
        accepted_subsets,
        intersection,
        n_subsets_tested: tests.len(),
        tests,
        elapsed: start.elapsed(),
    })
}
