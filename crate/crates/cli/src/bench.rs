use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use wvm_core::icp::{run_icp, DEFAULT_MAX_P};
use wvm_core::seed::derive_seed;
use wvm_core::{
    lasso_preselect, pr_curve, run_wvm, score, simulate, Correction, EnvironmentDataset,
    OptimizerConfig, PrPoint, ScmSpec, ThresholdConfig, WvmConfig,
};

use crate::args::BenchArgs;
use crate::error::CliError;
use crate::manifest::RunManifest;
use crate::write_file;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchMethod {
    Wvm,
    Icp,
}

impl BenchMethod {
    fn as_str(self) -> &'static str {
        match self {
            BenchMethod::Wvm => "wvm",
            BenchMethod::Icp => "icp",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub scm: ScmSpec,
    pub methods: Vec<BenchMethod>,
    /// Levels reported per replication; statistics are computed once.
    pub alphas: Vec<f64>,
    /// Lasso screening applied before both methods.
    pub preselect: Option<usize>,
    pub threshold: ThresholdConfig,
    pub optimizer: OptimizerConfig,
    pub correction: Correction,
    pub icp_max_p: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            scm: ScmSpec::default(),
            methods: vec![BenchMethod::Wvm, BenchMethod::Icp],
            alphas: vec![0.1],
            preselect: None,
            threshold: ThresholdConfig::default(),
            optimizer: OptimizerConfig::default(),
            correction: Correction::None,
            icp_max_p: DEFAULT_MAX_P,
        }
    }
}

impl BenchConfig {
    /// Changes the predictor count while keeping the edge probability.
    pub fn with_p(mut self, p: usize) -> Self {
        if self.scm.p > 0 {
            self.scm.avg_degree *= p as f64 / self.scm.p as f64;
        }
        self.scm.p = p;
        self
    }
}

pub const METRICS_HEADER: &str = "rep,method,alpha,error_ratio,fpr,precision,recall,runtime_s,n_selected";

struct MethodRun {
    /// Selected original columns per alpha.
    selections: Vec<Vec<usize>>,
    /// Per-predictor ranking statistic over all p columns (NaN if not tested).
    ranking: Vec<f64>,
    runtime_s: f64,
}

fn run_method(
    method: BenchMethod,
    ds: &EnvironmentDataset,
    cols: &[usize],
    p: usize,
    cfg: &BenchConfig,
    seed: u64,
) -> Result<MethodRun, CliError> {
    let mut ranking = vec![f64::NAN; p];
    let t = Instant::now();
    let selections = match method {
        BenchMethod::Wvm => {
            let wcfg = WvmConfig {
                alpha: cfg.alphas[0],
                threshold: cfg.threshold.clone(),
                optimizer: cfg.optimizer.clone(),
                correction: cfg.correction,
                seed,
                ..WvmConfig::default()
            };
            let report = run_wvm(ds, &wcfg)?;
            for (k, s) in report.stats().into_iter().enumerate() {
                ranking[cols[k]] = s;
            }
            cfg.alphas
                .iter()
                .map(|&a| {
                    let r = report.reselect(a, cfg.correction)?;
                    Ok(r.selected_predictors().iter().map(|&k| cols[k]).collect())
                })
                .collect::<Result<Vec<Vec<usize>>, CliError>>()?
        }
        BenchMethod::Icp => {
            let report = run_icp(ds, cfg.alphas[0], cfg.icp_max_p)?;
            for (k, s) in report.variable_scores(ds.p()).into_iter().enumerate() {
                ranking[cols[k]] = s;
            }
            cfg.alphas
                .iter()
                .map(|&a| {
                    let r = report.at_alpha(a)?;
                    Ok(r.intersection.iter().map(|&k| cols[k]).collect())
                })
                .collect::<Result<Vec<Vec<usize>>, CliError>>()?
        }
    };
    Ok(MethodRun {
        selections,
        ranking,
        runtime_s: t.elapsed().as_secs_f64(),
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |x| x.to_string())
}

pub fn cmd_bench(a: &BenchArgs, argv: &[String]) -> Result<String, CliError> {
    let out = &a.common.out_dir;
    let mut m = RunManifest::new("bench", argv, out, a.seed);
    let mut cfg: BenchConfig = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            m.inputs.push(path.clone());
            serde_json::from_str(&text)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        }
        None => BenchConfig::default(),
    };
    if let Some(p) = a.p {
        cfg = cfg.with_p(p);
    }
    if cfg.alphas.is_empty() || cfg.methods.is_empty() {
        return Err(CliError::Usage("bench needs at least one alpha and one method".into()));
    }
    cfg.scm.validate()?;
    m.config = serde_json::json!({ "bench": &cfg, "reps": a.reps });

    let p = cfg.scm.p;
    let mut metrics = String::from(METRICS_HEADER);
    metrics.push('\n');
    let mut pr: Vec<String> = cfg
        .methods
        .iter()
        .map(|_| "rep,threshold,precision,recall\n".to_string())
        .collect();
    let start = Instant::now();
    for rep in 0..a.reps {
        let rep_seed = derive_seed(a.seed, "bench_rep", rep as u64);
        let spec = ScmSpec {
            seed: rep_seed,
            ..cfg.scm.clone()
        };
        let sim = simulate(&spec)?;
        let full = sim.dataset()?;
        let (ds, cols) = match cfg.preselect {
            Some(k) => {
                let mut cols = lasso_preselect(&full, k)?.selected;
                cols.sort_unstable();
                (full.select_columns(&cols)?, cols)
            }
            None => (full, (0..p).collect()),
        };
        let truth = &sim.truth.parents;
        for (mi, &method) in cfg.methods.iter().enumerate() {
            let run = run_method(method, &ds, &cols, p, &cfg, derive_seed(rep_seed, "bench_method", mi as u64))?;
            for (alpha, sel) in cfg.alphas.iter().zip(&run.selections) {
                let s = score(sel, truth, p);
                writeln!(
                    metrics,
                    "{rep},{},{alpha},{},{},{},{},{:.6},{}",
                    method.as_str(),
                    s.error_ratio,
                    s.fpr,
                    s.precision,
                    fmt_opt(s.recall),
                    run.runtime_s,
                    sel.len()
                )
                .expect("string write");
            }
            for PrPoint { threshold, precision, recall } in pr_curve(&run.ranking, truth) {
                writeln!(pr[mi], "{rep},{threshold},{precision},{recall}").expect("string write");
            }
        }
    }
    m.timings.insert("bench".into(), start.elapsed().as_secs_f64());

    write_file(&out.join("metrics.csv"), &metrics)?;
    m.outputs.push("metrics.csv".into());
    for (method, text) in cfg.methods.iter().zip(&pr) {
        let name = format!("pr_{}.csv", method.as_str());
        write_file(&out.join(&name), text)?;
        m.outputs.push(name);
    }
    m.write()?;
    Ok(format!(
        "{} replications x {} methods written to {}",
        a.reps,
        cfg.methods.len(),
        out.display()
    ))
}
