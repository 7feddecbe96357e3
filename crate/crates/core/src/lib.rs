//! Causal predictor discovery by Wasserstein variance minimization.
//!
//! Given observations of a target and its candidate predictors under several
//! environments, a predictor is declared a direct cause when excluding it
//! from a linear model makes it impossible to find residuals whose
//! distribution is the same in every environment. Distribution mismatch is
//! measured by the Wasserstein variance, the weighted spread of the
//! per-environment residual laws around their Wasserstein barycenter.
//!
//! The crate also ships an exhaustive ICP baseline, a synthetic SCM
//! generator and scoring utilities for benchmarking.

pub mod dataset;
pub mod error;
pub mod icp;
pub mod linalg;
pub mod metrics;
pub mod objective;
pub mod optimizer;
pub mod preselect;
pub mod quantile_density;
pub mod seed;
pub mod simulator;
pub mod special;
pub mod thresholds;
pub mod transport;
pub mod wvm;

pub use dataset::{proportional_weights, standardize, EnvBlock, EnvironmentDataset, Weights};
pub use error::{Result, WvmError};
pub use icp::{ks_two_sample, run_icp, IcpReport};
pub use metrics::{pr_curve, score, PrPoint, Score};
pub use objective::{evaluate, residuals, LinearModel, ObjectiveEval};
pub use optimizer::{minimize, MinimizeResult, OptimizerConfig};
pub use preselect::{lasso_preselect, LassoPathResult};
pub use quantile_density::{combined_qd, estimate_qd, CombinedQd, QdEstimate};
pub use simulator::{simulate, GroundTruth, ScmSpec, Simulation};
pub use thresholds::{
    bootstrap_threshold, gamma_threshold, mc_threshold, ThresholdEstimate, ThresholdMethod,
};
pub use transport::{
    barycenter_quantile, w2_squared, wasserstein_variance, QuantileGrid, QuantileView,
};
pub use wvm::{run_wvm, Correction, ThresholdConfig, UnitKind, WeightsMode, WvmConfig, WvmReport};
