#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use wvm_core::seed::rng_for;
use wvm_core::{EnvBlock, EnvironmentDataset, QuantileView, Weights};

pub fn rng(seed: u64) -> ChaCha8Rng {
    rng_for(seed, "core-tests", 0)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Random Gaussian dataset with the given environment sizes.
pub fn random_dataset(rng: &mut ChaCha8Rng, sizes: &[usize], p: usize) -> EnvironmentDataset {
    let blocks = sizes
        .iter()
        .enumerate()
        .map(|(e, &n)| {
            let shift = normal(rng);
            let x = (0..n * p).map(|_| normal(rng) + shift).collect();
            let y = (0..n).map(|_| 2.0 * normal(rng)).collect();
            EnvBlock::new(e, p, x, y).unwrap()
        })
        .collect();
    EnvironmentDataset::new(blocks).unwrap()
}

pub fn random_weights(rng: &mut ChaCha8Rng, e: usize) -> Weights {
    Weights::new((0..e).map(|_| rng.random_range(0.1..1.0)).collect()).unwrap()
}

pub fn random_views(rng: &mut ChaCha8Rng, e: usize, max_n: usize) -> Vec<QuantileView> {
    (0..e)
        .map(|_| {
            let n = rng.random_range(2..=max_n);
            QuantileView::from_unsorted((0..n).map(|_| 3.0 * normal(rng)).collect())
        })
        .collect()
}

/// Midpoint integration of `∫ Σ_e w_e (F_e^{-1} − Σ w F^{-1})² dt` on a
/// uniform grid whose size is a multiple of lcm(1..=8), so no cell straddles a
/// step of any quantile function with n_e ≤ 8.
pub fn dense_grid_variance(views: &[QuantileView], w: &[f64]) -> f64 {
    const N: usize = 840 * 120;
    let mut total = 0.0;
    let mut q = vec![0.0; views.len()];
    for j in 0..N {
        let t = (j as f64 + 0.5) / N as f64;
        for (qe, v) in q.iter_mut().zip(views) {
            let n = v.len();
            let rank = ((t * n as f64).ceil() as usize).clamp(1, n);
            *qe = v.values()[rank - 1];
        }
        let bar: f64 = q.iter().zip(w).map(|(a, b)| a * b).sum();
        total += q.iter().zip(w).map(|(a, b)| b * (a - bar) * (a - bar)).sum::<f64>();
    }
    total / N as f64
}
