//! Optimal transport on the real line.
//!
//! Every distribution here is an empirical measure with uniform atoms, so its
//! quantile function is a left-continuous step function. Pairwise distances,
//! barycenters and the Wasserstein variance are all exact sums over the
//! merged grid of step locations.

use std::cmp::Ordering;

use crate::dataset::Weights;
use crate::error::{Result, WvmError};

/// Sorted sample exposing its empirical quantile function.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileView {
    sorted: Vec<f64>,
}

impl QuantileView {
    /// Sorts `values` (stable, total order). Panics on an empty sample.
    pub fn from_unsorted(mut values: Vec<f64>) -> Self {
        assert!(!values.is_empty(), "quantile view needs at least one value");
        values.sort_by(f64::total_cmp);
        Self { sorted: values }
    }

    /// Wraps an already sorted vector.
    pub fn from_sorted(sorted: Vec<f64>) -> Result<Self> {
        if sorted.is_empty() {
            return Err(WvmError::Domain("empty sample".into()));
        }
        if sorted.windows(2).any(|w| w[0] > w[1]) {
            return Err(WvmError::Domain("values are not sorted".into()));
        }
        Ok(Self { sorted })
    }

    pub fn values(&self) -> &[f64] {
        &self.sorted
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// `F^{-1}(t) = x_(⌈t n⌉)` for `t ∈ (0, 1]`.
    pub fn quantile_at(&self, t: f64) -> Result<f64> {
        if !(t > 0.0 && t <= 1.0) {
            return Err(WvmError::Domain(format!("quantile level {t} not in (0, 1]")));
        }
        let n = self.sorted.len();
        let rank = ((t * n as f64).ceil() as usize).clamp(1, n);
        Ok(self.sorted[rank - 1])
    }

    /// Value at a 1-based rank.
    #[inline]
    pub fn at_rank(&self, rank: usize) -> f64 {
        self.sorted[rank - 1]
    }

    pub fn range(&self) -> f64 {
        self.sorted[self.sorted.len() - 1] - self.sorted[0]
    }
}

/// Union of the step locations `{i / n_e}` over a set of sample sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileGrid {
    levels: Vec<f64>,
    gaps: Vec<f64>,
    /// `ranks[e][l] = ⌈π_l n_e⌉` (1-based).
    ranks: Vec<Vec<usize>>,
}

impl QuantileGrid {
    pub fn merged(sizes: &[usize]) -> Self {
        assert!(sizes.iter().all(|&n| n > 0), "sample sizes must be positive");
        // levels as exact fractions (num, den)
        let mut fracs: Vec<(u64, u64)> = sizes
            .iter()
            .flat_map(|&n| (1..=n as u64).map(move |i| (i, n as u64)))
            .collect();
        let cmp = |a: &(u64, u64), b: &(u64, u64)| {
            (u128::from(a.0) * u128::from(b.1)).cmp(&(u128::from(b.0) * u128::from(a.1)))
        };
        fracs.sort_by(cmp);
        fracs.dedup_by(|a, b| cmp(a, b) == Ordering::Equal);

        let mut levels = Vec::with_capacity(fracs.len());
        let mut gaps = Vec::with_capacity(fracs.len());
        let mut prev = (0u64, 1u64);
        for &(num, den) in &fracs {
            levels.push(num as f64 / den as f64);
            let diff = (num * prev.1 - prev.0 * den) as f64;
            gaps.push(diff / (den as f64 * prev.1 as f64));
            prev = (num, den);
        }
        let ranks = sizes
            .iter()
            .map(|&n| {
                let n = n as u64;
                fracs
                    .iter()
                    .map(|&(num, den)| (num * n).div_ceil(den) as usize)
                    .collect()
            })
            .collect();
        Self {
            levels,
            gaps,
            ranks,
        }
    }

    pub fn for_views(views: &[QuantileView]) -> Self {
        let sizes: Vec<usize> = views.iter().map(QuantileView::len).collect();
        Self::merged(&sizes)
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn gaps(&self) -> &[f64] {
        &self.gaps
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn n_envs(&self) -> usize {
        self.ranks.len()
    }

    /// 1-based ranks selected in environment `e`, one per level.
    pub fn ranks(&self, e: usize) -> &[usize] {
        &self.ranks[e]
    }
}

fn check_views(views: &[QuantileView], w: &Weights, grid: &QuantileGrid) -> Result<()> {
    if views.len() != w.len() {
        return Err(WvmError::DimensionMismatch {
            expected: views.len(),
            got: w.len(),
        });
    }
    if grid.n_envs() != views.len() {
        return Err(WvmError::DimensionMismatch {
            expected: views.len(),
            got: grid.n_envs(),
        });
    }
    for (e, v) in views.iter().enumerate() {
        let max_rank = grid.ranks(e).last().copied().unwrap_or(0);
        if max_rank != v.len() {
            return Err(WvmError::DimensionMismatch {
                expected: max_rank,
                got: v.len(),
            });
        }
    }
    Ok(())
}

/// Squared 2-Wasserstein distance between two empirical measures.
pub fn w2_squared(a: &QuantileView, b: &QuantileView) -> f64 {
    if a.len() == b.len() {
        let n = a.len() as f64;
        return a
            .values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / n;
    }
    let grid = QuantileGrid::merged(&[a.len(), b.len()]);
    grid.gaps()
        .iter()
        .zip(grid.ranks(0).iter().zip(grid.ranks(1)))
        .map(|(g, (&ra, &rb))| {
            let d = a.at_rank(ra) - b.at_rank(rb);
            g * d * d
        })
        .sum()
}

/// Quantile function of the weighted barycenter, evaluated at each level of
/// `grid`.
pub fn barycenter_quantile(
    views: &[QuantileView],
    w: &Weights,
    grid: &QuantileGrid,
) -> Result<Vec<f64>> {
    check_views(views, w, grid)?;
    let mut bary = vec![0.0; grid.len()];
    for (e, (v, &we)) in views.iter().zip(w.as_slice()).enumerate() {
        for (b, &r) in bary.iter_mut().zip(grid.ranks(e)) {
            *b += we * v.at_rank(r);
        }
    }
    Ok(bary)
}

/// Empirical Wasserstein variance on an explicit grid.
pub fn wasserstein_variance_on(
    views: &[QuantileView],
    w: &Weights,
    grid: &QuantileGrid,
) -> Result<f64> {
    let bary = barycenter_quantile(views, w, grid)?;
    let mut per_level = vec![0.0; grid.len()];
    for (e, (v, &we)) in views.iter().zip(w.as_slice()).enumerate() {
        for ((acc, &r), b) in per_level.iter_mut().zip(grid.ranks(e)).zip(&bary) {
            let d = v.at_rank(r) - b;
            *acc += we * d * d;
        }
    }
    Ok(per_level
        .iter()
        .zip(grid.gaps())
        .map(|(s, g)| s * g)
        .sum::<f64>()
        .max(0.0))
}

/// `Σ_ℓ Σ_e w_e (q_e(π_ℓ) − q̄(π_ℓ))² (π_ℓ − π_{ℓ−1})` over the merged grid.
pub fn wasserstein_variance(views: &[QuantileView], w: &Weights) -> Result<f64> {
    let grid = QuantileGrid::for_views(views);
    wasserstein_variance_on(views, w, &grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn qv(v: &[f64]) -> QuantileView {
        QuantileView::from_unsorted(v.to_vec())
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(qv(&[5.0]).quantile_at(0.7).unwrap(), 5.0);
        let two = qv(&[3.0, 1.0]);
        assert_eq!(two.quantile_at(0.5).unwrap(), 1.0);
        assert_eq!(two.quantile_at(0.51).unwrap(), 3.0);
        assert_eq!(qv(&[0.0, 1.0, 2.0]).quantile_at(1.0).unwrap(), 2.0);
        assert!(two.quantile_at(0.0).is_err());
        assert!(two.quantile_at(1.5).is_err());
        assert!(two.quantile_at(f64::NAN).is_err());
    }

    #[test]
    fn w2_examples() {
        assert_eq!(w2_squared(&qv(&[0.0]), &qv(&[2.0])), 4.0);
        assert_eq!(w2_squared(&qv(&[1.0, 3.0]), &qv(&[2.0, 4.0])), 1.0);
        // merged grid {1/3, 1/2, 2/3, 1}: squared gaps 0, 0, 1, 1 with widths
        // 1/3, 1/6, 1/6, 1/3 -> 1/6 + 1/3
        let d = w2_squared(&qv(&[0.0, 1.0]), &qv(&[0.0, 1.0, 2.0]));
        assert!((d - 0.5).abs() < 1e-15);
    }

    #[test]
    fn grid_deduplicates_common_levels() {
        let g = QuantileGrid::merged(&[2, 4]);
        assert_eq!(g.levels(), &[0.25, 0.5, 0.75, 1.0]);
        assert_eq!(g.ranks(0), &[1, 1, 2, 2]);
        assert_eq!(g.ranks(1), &[1, 2, 3, 4]);
        assert!((g.gaps().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn barycenter_examples() {
        let w = Weights::uniform(2);
        let a = qv(&[0.0, 3.0, 1.0]);
        let g = QuantileGrid::for_views(&[a.clone(), a.clone()]);
        assert_eq!(
            barycenter_quantile(&[a.clone(), a.clone()], &w, &g).unwrap(),
            a.values()
        );

        let views = [qv(&[0.0]), qv(&[2.0])];
        let g = QuantileGrid::for_views(&views);
        assert_eq!(barycenter_quantile(&views, &w, &g).unwrap(), vec![1.0]);

        let views = [qv(&[0.0, 2.0]), qv(&[1.0, 3.0])];
        let g = QuantileGrid::for_views(&views);
        assert_eq!(g.levels(), &[0.5, 1.0]);
        assert_eq!(barycenter_quantile(&views, &w, &g).unwrap(), vec![0.5, 2.5]);
    }

    #[test]
    fn variance_examples() {
        let a = qv(&[0.3, -1.0, 2.0]);
        let same = vec![a.clone(), a.clone(), a];
        assert_eq!(wasserstein_variance(&same, &Weights::uniform(3)).unwrap(), 0.0);

        let dirac = [qv(&[0.0]), qv(&[2.0])];
        assert_eq!(wasserstein_variance(&dirac, &Weights::uniform(2)).unwrap(), 1.0);

        let shifted = [qv(&[0.0, 2.0]), qv(&[1.0, 3.0]), qv(&[2.0, 4.0])];
        let v = wasserstein_variance(&shifted, &Weights::uniform(3)).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn mismatched_weights_rejected() {
        let views = [qv(&[0.0]), qv(&[2.0])];
        assert!(wasserstein_variance(&views, &Weights::uniform(3)).is_err());
    }
}
