use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use wvm_core::icp::run_icp;
use wvm_core::wvm::UnitReport;
use wvm_core::{
    lasso_preselect, run_wvm, simulate, Correction, EnvironmentDataset, LassoPathResult,
    OptimizerConfig, ScmSpec, ThresholdConfig, ThresholdMethod, WvmConfig,
};

use crate::args::{IcpArgs, SimulateArgs, WvmArgs};
use crate::error::CliError;
use crate::manifest::RunManifest;
use crate::write_file;

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("output serializes") + "\n"
}

fn elapsed(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

pub fn simulate_spec(a: &SimulateArgs) -> ScmSpec {
    let mut spec = ScmSpec {
        p: a.p,
        target_position: a.target_position,
        n_parents: a.parents,
        avg_degree: a.avg_degree,
        n_envs: a.envs,
        n_per_env: a.n_per_env,
        seed: a.seed,
        ..ScmSpec::default()
    };
    if let Some(bounds) = a.scale_bounds {
        spec.scale_bounds_range = bounds;
    }
    spec
}

pub fn cmd_simulate(a: &SimulateArgs, argv: &[String]) -> Result<String, CliError> {
    let out = &a.common.out_dir;
    let mut m = RunManifest::new("simulate", argv, out, a.seed);
    let spec = simulate_spec(a);
    m.config = serde_json::to_value(&spec).expect("spec serializes");

    let t = Instant::now();
    let sim = simulate(&spec)?;
    m.timings.insert("simulate".into(), elapsed(t));

    let t = Instant::now();
    write_file(&out.join("data.csv"), &sim.data.to_csv_string())?;
    write_file(&out.join("truth.json"), &(sim.truth.to_json() + "\n"))?;
    m.timings.insert("write".into(), elapsed(t));
    m.outputs = vec!["data.csv".into(), "truth.json".into()];
    m.write()?;

    let names = sim.data.column_names();
    let parents: Vec<&str> = sim.truth.parents.iter().map(|&k| names[k].as_str()).collect();
    Ok(format!(
        "wrote {} rows x {} predictors in {} environments to {}\nparents of y: {}",
        spec.n_envs * spec.n_per_env,
        spec.p,
        spec.n_envs,
        out.display(),
        parents.join(", ")
    ))
}

fn load(path: &Path, m: &mut RunManifest) -> Result<EnvironmentDataset, CliError> {
    let t = Instant::now();
    let ds = EnvironmentDataset::load_csv(path)?;
    m.timings.insert("load".into(), elapsed(t));
    m.inputs.push(path.to_path_buf());
    Ok(ds)
}

/// Applies optional Lasso screening. Returns the screened dataset and the
/// original index of each kept column.
fn screen(
    ds: EnvironmentDataset,
    k: Option<usize>,
    m: &mut RunManifest,
) -> Result<(EnvironmentDataset, Vec<usize>, Option<LassoPathResult>), CliError> {
    match k {
        None => {
            let cols = (0..ds.p()).collect();
            Ok((ds, cols, None))
        }
        Some(k) => {
            let t = Instant::now();
            let path = lasso_preselect(&ds, k)?;
            let mut cols = path.selected.clone();
            cols.sort_unstable();
            let screened = ds.select_columns(&cols)?;
            m.timings.insert("preselect".into(), elapsed(t));
            Ok((screened, cols, Some(path)))
        }
    }
}

/// Parses "a,b;c" where every token is a column name or a 1-based index.
pub fn parse_blocks(spec: &str, names: &[String]) -> Result<Vec<Vec<usize>>, CliError> {
    spec.split(';')
        .map(|block| {
            block
                .split(',')
                .map(|tok| {
                    let tok = tok.trim();
                    if let Some(k) = names.iter().position(|n| n == tok) {
                        return Ok(k);
                    }
                    match tok.parse::<usize>() {
                        Ok(i) if (1..=names.len()).contains(&i) => Ok(i - 1),
                        _ => Err(CliError::Usage(format!("unknown block member {tok:?}"))),
                    }
                })
                .collect()
        })
        .collect()
}

#[derive(Serialize)]
struct NamedUnit<'a> {
    names: Vec<&'a str>,
    /// 0-based indices into the input's predictor columns.
    columns: Vec<usize>,
    #[serde(flatten)]
    unit: &'a UnitReport,
}

#[derive(Serialize)]
struct WvmOutput<'a> {
    data: &'a Path,
    n_envs: usize,
    n: usize,
    p: usize,
    preselect: Option<&'a LassoPathResult>,
    config: &'a WvmConfig,
    alpha: f64,
    method: ThresholdMethod,
    correction: Correction,
    gamma_full_class: f64,
    units: Vec<NamedUnit<'a>>,
    selected: Vec<&'a str>,
    selected_columns: Vec<usize>,
}

pub fn wvm_config(a: &WvmArgs) -> WvmConfig {
    WvmConfig {
        alpha: a.alpha,
        threshold: ThresholdConfig {
            method: a.threshold.into(),
            bootstrap_reps: a.bootstrap_reps,
            mc_paths: a.mc_paths,
            bandwidth_scale: a.bandwidth_scale,
            ..ThresholdConfig::default()
        },
        correction: a.correction.into(),
        weights_mode: a.weights.into(),
        optimizer: OptimizerConfig {
            n_restarts: a.restarts,
            fit_intercept: !a.no_intercept,
            ..OptimizerConfig::default()
        },
        blocks: None,
        seed: a.seed,
    }
}

pub fn cmd_wvm(a: &WvmArgs, argv: &[String]) -> Result<String, CliError> {
    if a.blocks.is_some() && a.preselect.is_some() {
        return Err(CliError::Usage("--blocks cannot be combined with --preselect".into()));
    }
    let out = &a.common.out_dir;
    let mut m = RunManifest::new("wvm", argv, out, a.seed);
    let full = load(&a.data, &mut m)?;
    let all_names = full.column_names().to_vec();
    let (ds, cols, pre) = screen(full, a.preselect, &mut m)?;

    let mut cfg = wvm_config(a);
    if let Some(b) = &a.blocks {
        cfg.blocks = Some(parse_blocks(b, &all_names)?);
    }
    m.config = serde_json::json!({ "wvm": &cfg, "preselect": a.preselect });

    let t = Instant::now();
    let report = run_wvm(&ds, &cfg)?;
    m.timings.insert("wvm".into(), elapsed(t));

    let units: Vec<NamedUnit> = report
        .units
        .iter()
        .map(|u| NamedUnit {
            names: u.members.iter().map(|&k| all_names[cols[k]].as_str()).collect(),
            columns: u.members.iter().map(|&k| cols[k]).collect(),
            unit: u,
        })
        .collect();
    let selected_columns: Vec<usize> =
        report.selected_predictors().iter().map(|&k| cols[k]).collect();
    let selected: Vec<&str> = selected_columns.iter().map(|&c| all_names[c].as_str()).collect();
    let summary = format!("selected: {{{}}}", selected.join(", "));
    let output = WvmOutput {
        data: &a.data,
        n_envs: ds.n_envs(),
        n: ds.n(),
        p: all_names.len(),
        preselect: pre.as_ref(),
        config: &cfg,
        alpha: report.alpha,
        method: report.method,
        correction: report.correction,
        gamma_full_class: report.gamma_full_class,
        units,
        selected,
        selected_columns,
    };
    write_file(&out.join("report.json"), &to_json(&output))?;
    m.outputs = vec!["report.json".into()];
    m.write()?;
    Ok(summary)
}

#[derive(Serialize)]
struct NamedSubsetTest<'a> {
    subset: Vec<&'a str>,
    p_value: f64,
    accepted: bool,
}

#[derive(Serialize)]
struct IcpOutput<'a> {
    data: &'a Path,
    p: usize,
    preselect: Option<&'a LassoPathResult>,
    tested_columns: Vec<&'a str>,
    alpha: f64,
    n_subsets_tested: usize,
    none_accepted: bool,
    intersection: Vec<&'a str>,
    intersection_columns: Vec<usize>,
    accepted_subsets: Vec<Vec<&'a str>>,
    tests: Vec<NamedSubsetTest<'a>>,
}

pub fn cmd_icp(a: &IcpArgs, argv: &[String]) -> Result<String, CliError> {
    let out = &a.common.out_dir;
    let mut m = RunManifest::new("icp", argv, out, 0);
    let full = load(&a.data, &mut m)?;
    let all_names = full.column_names().to_vec();
    let (ds, cols, pre) = screen(full, a.preselect, &mut m)?;
    m.config = serde_json::json!({ "alpha": a.alpha, "max_p": a.max_p, "preselect": a.preselect });

    let t = Instant::now();
    let report = run_icp(&ds, a.alpha, a.max_p)?;
    m.timings.insert("icp".into(), elapsed(t));

    let name = |k: &usize| all_names[cols[*k]].as_str();
    let intersection_columns: Vec<usize> = report.intersection.iter().map(|&k| cols[k]).collect();
    let output = IcpOutput {
        data: &a.data,
        p: all_names.len(),
        preselect: pre.as_ref(),
        tested_columns: cols.iter().map(|&c| all_names[c].as_str()).collect(),
        alpha: report.alpha,
        n_subsets_tested: report.n_subsets_tested,
        none_accepted: report.none_accepted,
        intersection: report.intersection.iter().map(name).collect(),
        intersection_columns,
        accepted_subsets: report
            .accepted_subsets
            .iter()
            .map(|s| s.iter().map(name).collect())
            .collect(),
        tests: report
            .tests
            .iter()
            .map(|t| NamedSubsetTest {
                subset: t.subset.iter().map(name).collect(),
                p_value: t.p_value,
                accepted: t.accepted,
            })
            .collect(),
    };
    write_file(&out.join("report.json"), &to_json(&output))?;
    m.outputs = vec!["report.json".into()];
    m.write()?;
    let summary = if report.none_accepted {
        "no subset accepted; intersection: {}".to_string()
    } else {
        format!("intersection: {{{}}}", output.intersection.join(", "))
    };
    Ok(summary)
}

pub fn absolute(path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        std::env::current_dir().unwrap_or_default().join(path)
    }
}
