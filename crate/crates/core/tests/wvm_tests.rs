mod common;

use rayon::prelude::*;
use wvm_core::{
    run_wvm, Correction, EnvBlock, EnvironmentDataset, ThresholdConfig, ThresholdMethod, WvmConfig,
};

fn gamma() -> ThresholdConfig {
    ThresholdConfig {
        method: ThresholdMethod::Gamma,
        ..Default::default()
    }
}

/// Target independent of three i.i.d. predictors, same law in every environment.
fn pure_noise(seed: u64, n: usize) -> EnvironmentDataset {
    let mut rng = common::rng(seed);
    let blocks = (0..3)
        .map(|e| {
            let x = (0..3 * n).map(|_| common::normal(&mut rng)).collect();
            let y = (0..n).map(|_| common::normal(&mut rng)).collect();
            EnvBlock::new(e, 3, x, y).unwrap()
        })
        .collect();
    EnvironmentDataset::new(blocks).unwrap()
}

/// `y = 2x + ε` where the noise of x is rescaled per environment.
fn single_cause(seed: u64) -> EnvironmentDataset {
    let mut rng = common::rng(seed);
    let blocks = (0..5)
        .map(|e| {
            let sd = [1.0, 4.0, 0.5, 2.5, 5.0][e];
            let x: Vec<f64> = (0..500).map(|_| sd * common::normal(&mut rng)).collect();
            let y = x.iter().map(|v| 2.0 * v + common::normal(&mut rng)).collect();
            EnvBlock::new(e, 1, x, y).unwrap()
        })
        .collect();
    EnvironmentDataset::new(blocks).unwrap()
}

/// x1 causes y with environment-dependent scale; x2 is a near copy of x1.
fn duplicated_cause(seed: u64) -> EnvironmentDataset {
    let mut rng = common::rng(seed);
    let blocks = (0..4)
        .map(|e| {
            let sd = [1.0, 3.0, 0.5, 2.0][e];
            let mut x = Vec::new();
            let mut y = Vec::new();
            for _ in 0..400 {
                let x1 = sd * common::normal(&mut rng);
                let x2 = x1 + 0.01 * common::normal(&mut rng);
                x.extend([x1, x2]);
                y.push(x1 + 0.5 * common::normal(&mut rng));
            }
            EnvBlock::new(e, 2, x, y).unwrap()
        })
        .collect();
    EnvironmentDataset::new(blocks).unwrap()
}

#[test]
fn pure_noise_target_keeps_the_level() {
    let cfg = WvmConfig {
        threshold: gamma(),
        ..Default::default()
    };
    let reports: Vec<_> = (0..200u64)
        .into_par_iter()
        .map(|seed| run_wvm(&pure_noise(seed, 200), &WvmConfig { seed, ..cfg.clone() }).unwrap())
        .collect();
    for k in 0..3 {
        let rate = reports.iter().filter(|r| r.units[k].reject).count() as f64 / 200.0;
        assert!(rate <= cfg.alpha + 0.05, "predictor {k}: {rate}");
    }
}

#[test]
fn single_cause_is_found() {
    let hits = (0..50u64)
        .into_par_iter()
        .filter(|&seed| {
            let report = run_wvm(&single_cause(seed), &WvmConfig { seed, ..Default::default() }).unwrap();
            report.selected_predictors() == vec![0]
        })
        .count();
    assert!(hits >= 45, "{hits}/50");
}

#[test]
fn duplicated_cause_is_found_as_a_block() {
    let cfg = WvmConfig {
        threshold: gamma(),
        ..Default::default()
    };
    for seed in 0..5 {
        let ds = duplicated_cause(seed);
        let block = run_wvm(&ds, &WvmConfig { blocks: Some(vec![vec![0, 1]]), ..cfg.clone() }).unwrap();
        assert_eq!(block.selected, vec![0], "seed {seed}");
        let single = run_wvm(&ds, &cfg).unwrap();
        // either copy can stand in for the other
        assert!(single.units.iter().all(|u| u.stat < block.units[0].stat));
    }
}

#[test]
fn decisions_match_statistics() {
    for seed in 0..4 {
        let ds = duplicated_cause(seed);
        let report = run_wvm(&ds, &WvmConfig { threshold: gamma(), seed, ..Default::default() }).unwrap();
        for u in &report.units {
            assert_eq!(u.reject, u.stat > u.threshold);
            assert!(u.stat >= report.gamma_full_class - 1e-8);
        }
    }
}

#[test]
fn selection_grows_with_alpha_and_shrinks_with_correction() {
    for method in [ThresholdMethod::Gamma, ThresholdMethod::Bootstrap] {
        let cfg = WvmConfig {
            threshold: ThresholdConfig { method, ..Default::default() },
            ..Default::default()
        };
        let report = run_wvm(&pure_noise(3, 150), &cfg).unwrap();
        let mut prev: Vec<usize> = Vec::new();
        for alpha in [0.01, 0.1, 0.3, 0.7, 0.95] {
            let at = report.reselect(alpha, Correction::None).unwrap();
            assert!(prev.iter().all(|k| at.selected.contains(k)));
            let bonf = report.reselect(alpha, Correction::Bonferroni).unwrap();
            assert!(bonf.selected.iter().all(|k| at.selected.contains(k)));
            prev = at.selected;
        }
    }
}

#[test]
fn thread_count_does_not_change_the_report() {
    let ds = duplicated_cause(9);
    for method in [ThresholdMethod::Gamma, ThresholdMethod::MonteCarlo, ThresholdMethod::Bootstrap] {
        let cfg = WvmConfig {
            threshold: ThresholdConfig { method, mc_paths: 2000, ..Default::default() },
            seed: 4,
            ..Default::default()
        };
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            serde_json::to_string(&pool.install(|| run_wvm(&ds, &cfg).unwrap())).unwrap()
        };
        let single = run(1);
        assert_eq!(single, run(1));
        assert_eq!(single, run(4));
    }
}
