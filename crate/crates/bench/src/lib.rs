//! Shared fixtures for the criterion benches.

use wvm_core::{simulate, EnvironmentDataset, ScmSpec};

/// A simulated dataset with `p` predictors and `n_per_env` rows per
/// environment.
pub fn fixture(p: usize, n_per_env: usize, seed: u64) -> EnvironmentDataset {
    let spec = ScmSpec {
        p,
        n_parents: 3.min(p),
        avg_degree: 0.24 * p as f64,
        n_per_env,
        seed,
        ..ScmSpec::default()
    };
    simulate(&spec)
        .and_then(|s| s.dataset())
        .expect("valid fixture spec")
}
