//! The per-predictor (or per-block) invariance test loop.
//!
//! For every tested unit the predictors in the unit are excluded from the
//! linear class, the Wasserstein variance of the residuals is minimized over
//! what remains, and the minimum is compared to a null threshold. Units whose
//! exclusion cannot be compensated are reported as direct causes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{proportional_weights, EnvironmentDataset, Weights};
use crate::error::{Result, WvmError};
use crate::objective::{residuals, LinearModel};
use crate::optimizer::{minimize, minimize_with_starts, OptimizerConfig};
use crate::quantile_density::{combined_qd, estimate_qd_on, DEFAULT_GRID};
use crate::seed::derive_seed;
use crate::thresholds::{
    bootstrap_threshold, gamma_threshold, mc_threshold, ThresholdEstimate, ThresholdMethod,
    DEFAULT_BOOTSTRAP_REPS,
};

/// Slack allowed when comparing nested-class minima.
pub const NESTING_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Correction {
    #[default]
    None,
    Bonferroni,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightsMode {
    #[default]
    Proportional,
    /// Equal weights. The threshold theory assumes proportional weights.
    Uniform,
}

impl WeightsMode {
    pub fn weights(self, ds: &EnvironmentDataset) -> Weights {
        match self {
            WeightsMode::Proportional => proportional_weights(ds),
            WeightsMode::Uniform => Weights::uniform(ds.n_envs()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdConfig {
    pub method: ThresholdMethod,
    pub bootstrap_reps: usize,
    pub mc_paths: usize,
    pub mc_grid: usize,
    /// Quantile-density bandwidth constant.
    pub bandwidth_scale: f64,
    pub qd_grid: usize,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            method: ThresholdMethod::Bootstrap,
            bootstrap_reps: DEFAULT_BOOTSTRAP_REPS,
            mc_paths: 10_000,
            mc_grid: 1024,
            bandwidth_scale: 1.0,
            qd_grid: DEFAULT_GRID,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WvmConfig {
    pub alpha: f64,
    pub threshold: ThresholdConfig,
    pub correction: Correction,
    pub weights_mode: WeightsMode,
    pub optimizer: OptimizerConfig,
    /// When set, each block is tested as one unit instead of single
    /// predictors.
    pub blocks: Option<Vec<Vec<usize>>>,
    pub seed: u64,
}

impl Default for WvmConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            threshold: ThresholdConfig::default(),
            correction: Correction::None,
            weights_mode: WeightsMode::Proportional,
            optimizer: OptimizerConfig::default(),
            blocks: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitKind {
    Predictor,
    Block,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitReport {
    pub id: usize,
    pub kind: UnitKind,
    pub members: Vec<usize>,
    /// Minimal Wasserstein variance over the class without `members`.
    pub stat: f64,
    pub threshold: f64,
    pub reject: bool,
    pub beta: Vec<f64>,
    pub intercept: f64,
    pub converged: bool,
    /// Set when the unit could not be tested; such units are never selected.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub inconclusive: Option<String>,
    #[serde(skip)]
    pub fit: Option<ThresholdEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WvmReport {
    pub alpha: f64,
    pub method: ThresholdMethod,
    pub correction: Correction,
    /// Minimal Wasserstein variance over the full class.
    pub gamma_full_class: f64,
    pub units: Vec<UnitReport>,
    /// Ids of rejected units.
    pub selected: Vec<usize>,
}

impl WvmReport {
    /// Per-unit statistics in unit order (NaN for inconclusive units).
    pub fn stats(&self) -> Vec<f64> {
        self.units
            .iter()
            .map(|u| if u.inconclusive.is_some() { f64::NAN } else { u.stat })
            .collect()
    }

    /// Union of the members of all selected units.
    pub fn selected_predictors(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .units
            .iter()
            .filter(|u| u.reject)
            .flat_map(|u| u.members.iter().copied())
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Decisions at another level and correction, keeping the statistics.
    pub fn reselect(&self, alpha: f64, correction: Correction) -> Result<WvmReport> {
        let effective = effective_alpha(alpha, correction, self.units.len());
        let mut out = self.clone();
        out.alpha = alpha;
        out.correction = correction;
        for u in &mut out.units {
            if let Some(fit) = &u.fit {
                let refit = fit.at_alpha(effective)?;
                u.threshold = refit.t_alpha;
                u.fit = Some(refit);
            }
            u.reject = u.inconclusive.is_none() && u.stat > u.threshold;
        }
        out.selected = selected_ids(&out.units);
        Ok(out)
    }
}

fn selected_ids(units: &[UnitReport]) -> Vec<usize> {
    units.iter().filter(|u| u.reject).map(|u| u.id).collect()
}

fn effective_alpha(alpha: f64, correction: Correction, n_units: usize) -> f64 {
    match correction {
        Correction::None => alpha,
        Correction::Bonferroni => alpha / n_units.max(1) as f64,
    }
}

fn validate(ds: &EnvironmentDataset, cfg: &WvmConfig) -> Result<Vec<(UnitKind, Vec<usize>)>> {
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(WvmError::Domain(format!("alpha = {} not in (0, 1)", cfg.alpha)));
    }
    if ds.p() == 0 {
        return Err(WvmError::Domain("need at least one predictor".into()));
    }
    cfg.optimizer.validate()?;
    match &cfg.blocks {
        None => Ok((0..ds.p()).map(|k| (UnitKind::Predictor, vec![k])).collect()),
        Some(blocks) => {
            let mut seen = vec![false; ds.p()];
            for b in blocks {
                if b.is_empty() {
                    return Err(WvmError::Domain("empty block".into()));
                }
                for &k in b {
                    if k >= ds.p() {
                        return Err(WvmError::Domain(format!("block member {k} ≥ p")));
                    }
                    if std::mem::replace(&mut seen[k], true) {
                        return Err(WvmError::Domain(format!("predictor {k} in two blocks")));
                    }
                }
            }
            Ok(blocks.iter().map(|b| (UnitKind::Block, b.clone())).collect())
        }
    }
}

/// Threshold at a fitted model from the kernel quantile-density pipeline.
pub fn model_threshold(
    ds: &EnvironmentDataset,
    w: &Weights,
    model: &LinearModel,
    cfg: &ThresholdConfig,
    alpha: f64,
    seed: u64,
) -> Result<ThresholdEstimate> {
    let views = residuals(model, ds)?;
    let ests = views
        .iter()
        .map(|v| estimate_qd_on(v, cfg.bandwidth_scale, cfg.qd_grid))
        .collect::<Result<Vec<_>>>()?;
    let qd = combined_qd(&ests, w)?;
    match cfg.method {
        ThresholdMethod::Gamma => gamma_threshold(&qd, ds.n_envs(), ds.n(), alpha),
        ThresholdMethod::MonteCarlo => mc_threshold(
            &qd,
            ds.n_envs(),
            ds.n(),
            alpha,
            cfg.mc_paths,
            cfg.mc_grid,
            seed,
        ),
        ThresholdMethod::Bootstrap => Err(WvmError::Domain(
            "bootstrap thresholds do not depend on the fitted model".into(),
        )),
    }
}

fn test_unit(
    ds: &EnvironmentDataset,
    w: &Weights,
    cfg: &WvmConfig,
    members: &[usize],
    unit: usize,
    alpha: f64,
    shared: Option<&ThresholdEstimate>,
) -> Result<(crate::optimizer::MinimizeResult, ThresholdEstimate)> {
    let mut mask = vec![false; ds.p()];
    for &k in members {
        mask[k] = true;
    }
    let opt = OptimizerConfig {
        seed: derive_seed(cfg.seed, "unit_opt", unit as u64),
        ..cfg.optimizer.clone()
    };
    let fit = minimize(ds, w, &mask, &opt)?;
    let est = match shared {
        Some(est) => est.clone(),
        None => model_threshold(
            ds,
            w,
            &fit.model,
            &cfg.threshold,
            alpha,
            derive_seed(cfg.seed, "unit_mc", unit as u64),
        )?,
    };
    Ok((fit, est))
}

/// Runs the test for every predictor (or configured block).
pub fn run_wvm(ds: &EnvironmentDataset, cfg: &WvmConfig) -> Result<WvmReport> {
    let units = validate(ds, cfg)?;
    let w = cfg.weights_mode.weights(ds);
    let alpha = effective_alpha(cfg.alpha, cfg.correction, units.len());

    let shared = match cfg.threshold.method {
        ThresholdMethod::Bootstrap => Some(bootstrap_threshold(
            ds,
            &w,
            &cfg.optimizer,
            alpha,
            cfg.threshold.bootstrap_reps,
            derive_seed(cfg.seed, "bootstrap", 0),
        )?),
        _ => None,
    };

    let outcomes: Vec<_> = units
        .par_iter()
        .enumerate()
        .map(|(u, (_, members))| test_unit(ds, &w, cfg, members, u, alpha, shared.as_ref()))
        .collect();

    let mut reports = Vec::with_capacity(units.len());
    let mut starts = Vec::new();
    for (u, ((kind, members), outcome)) in units.iter().zip(outcomes).enumerate() {
        let report = match outcome {
            Ok((fit, est)) => {
                let mut start = fit.model.clone();
                start.mask = vec![false; ds.p()];
                starts.push(start);
                UnitReport {
                    id: u,
                    kind: *kind,
                    members: members.clone(),
                    stat: fit.value,
                    threshold: est.t_alpha,
                    reject: fit.value > est.t_alpha,
                    beta: fit.model.beta,
                    intercept: fit.model.intercept,
                    converged: fit.converged,
                    inconclusive: None,
                    fit: Some(est),
                }
            }
            Err(e) => UnitReport {
                id: u,
                kind: *kind,
                members: members.clone(),
                stat: f64::NAN,
                threshold: f64::NAN,
                reject: false,
                beta: vec![0.0; ds.p()],
                intercept: 0.0,
                converged: false,
                inconclusive: Some(e.to_string()),
                fit: None,
            },
        };
        reports.push(report);
    }

    // Starting the full-class search from every masked minimizer keeps
    // Γ̂(F) ≤ Γ̂(F₋ₖ) for each unit.
    let full_cfg = OptimizerConfig {
        seed: derive_seed(cfg.seed, "full_class", 0),
        ..cfg.optimizer.clone()
    };
    let full = minimize_with_starts(ds, &w, &vec![false; ds.p()], &full_cfg, &starts)?;

    let selected = selected_ids(&reports);
    Ok(WvmReport {
        alpha: cfg.alpha,
        method: cfg.threshold.method,
        correction: cfg.correction,
        gamma_full_class: full.value,
        units: reports,
        selected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::EnvBlock;
    use rand::Rng;
    use rand_distr::StandardNormal;

    /// y = x0 + ε with x0 scaled per environment; x1 is pure noise.
    fn causal_instance(seed: u64, n: usize) -> EnvironmentDataset {
        let mut rng = crate::seed::rng_for(seed, "wvm_test", 0);
        let blocks = (0..3)
            .map(|e| {
                let sd = [1.0, 3.0, 0.3][e];
                let mut x = Vec::new();
                let mut y = Vec::new();
                for _ in 0..n {
                    let x0: f64 = sd * rng.sample::<f64, _>(StandardNormal);
                    let x1: f64 = rng.sample(StandardNormal);
                    x.extend([x0, x1]);
                    y.push(x0 + 0.5 * rng.sample::<f64, _>(StandardNormal));
                }
                EnvBlock::new(e, 2, x, y).unwrap()
            })
            .collect();
        EnvironmentDataset::new(blocks).unwrap()
    }

    fn gamma_cfg() -> WvmConfig {
        WvmConfig {
            threshold: ThresholdConfig {
                method: ThresholdMethod::Gamma,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn finds_scaled_cause() {
        let ds = causal_instance(1, 400);
        let report = run_wvm(&ds, &gamma_cfg()).unwrap();
        assert_eq!(report.selected, vec![0]);
        for u in &report.units {
            assert!(u.stat >= report.gamma_full_class - NESTING_TOL);
            assert_eq!(u.reject, u.stat > u.threshold);
        }
    }

    #[test]
    fn reselect_is_monotone() {
        let ds = causal_instance(2, 200);
        let report = run_wvm(&ds, &gamma_cfg()).unwrap();
        let loose = report.reselect(0.7, Correction::None).unwrap();
        let strict = report.reselect(0.1, Correction::Bonferroni).unwrap();
        assert!(report.selected.iter().all(|k| loose.selected.contains(k)));
        assert!(strict.selected.iter().all(|k| report.selected.contains(k)));
        assert_eq!(loose.stats(), report.stats());
    }

    #[test]
    fn block_config_validation() {
        let ds = causal_instance(3, 50);
        let mut cfg = gamma_cfg();
        cfg.blocks = Some(vec![vec![0, 1], vec![1]]);
        assert!(run_wvm(&ds, &cfg).is_err());
        cfg.blocks = Some(vec![vec![5]]);
        assert!(run_wvm(&ds, &cfg).is_err());
        cfg.blocks = Some(vec![vec![0, 1]]);
        let r = run_wvm(&ds, &cfg).unwrap();
        assert_eq!(r.units.len(), 1);
        assert_eq!(r.units[0].kind, UnitKind::Block);
    }

    #[test]
    fn identical_copies_with_bootstrap_are_degenerate() {
        // y = 2 x exactly, the same rows in both environments
        let x: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let ds = EnvironmentDataset::new(vec![
            EnvBlock::new(0, 1, x.clone(), y.clone()).unwrap(),
            EnvBlock::new(1, 1, x, y).unwrap(),
        ])
        .unwrap();
        let cfg = WvmConfig {
            threshold: ThresholdConfig {
                bootstrap_reps: 5,
                ..Default::default()
            },
            ..Default::default()
        };
        let r = run_wvm(&ds, &cfg).unwrap();
        assert!(r.selected.is_empty());
        assert_eq!(r.gamma_full_class, 0.0);
    }
}
