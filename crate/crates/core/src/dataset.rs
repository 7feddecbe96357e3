//! Multi-environment observations, CSV ingestion and environment weights.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, WvmError};

/// Observations collected under one experimental condition.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvBlock {
    /// Row-major `n_e × p` predictor matrix.
    x: Vec<f64>,
    y: Vec<f64>,
    p: usize,
    env_id: usize,
}

impl EnvBlock {
    /// Builds a block from a row-major predictor matrix and a target vector.
    pub fn new(env_id: usize, p: usize, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() * p {
            return Err(WvmError::DimensionMismatch {
                expected: y.len() * p,
                got: x.len(),
            });
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(WvmError::Degenerate(format!(
                "environment {env_id} contains non-finite values"
            )));
        }
        Ok(Self { x, y, p, env_id })
    }

    pub fn env_id(&self) -> usize {
        self.env_id
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        // chunks_exact panics on a zero chunk size
        (0..self.len()).map(move |i| self.row(i))
    }
}

/// Observations grouped by environment. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentDataset {
    environments: Vec<EnvBlock>,
    p: usize,
    n: usize,
    column_names: Vec<String>,
    labels: Vec<i64>,
}

impl EnvironmentDataset {
    /// Validates and assembles a dataset. Environment ids are reassigned to
    /// their position in `blocks`.
    pub fn new(blocks: Vec<EnvBlock>) -> Result<Self> {
        let p = blocks.first().map(EnvBlock::p).unwrap_or(0);
        let names = (1..=p).map(|j| format!("x{j}")).collect();
        let labels = (0..blocks.len() as i64).collect();
        Self::with_metadata(blocks, names, labels)
    }

    pub fn with_metadata(
        mut blocks: Vec<EnvBlock>,
        column_names: Vec<String>,
        labels: Vec<i64>,
    ) -> Result<Self> {
        if blocks.len() < 2 {
            return Err(WvmError::Degenerate(format!(
                "need at least 2 environments, found {}",
                blocks.len()
            )));
        }
        let p = blocks[0].p;
        for (e, b) in blocks.iter_mut().enumerate() {
            if b.p != p {
                return Err(WvmError::DimensionMismatch {
                    expected: p,
                    got: b.p,
                });
            }
            if b.len() < 2 {
                return Err(WvmError::Degenerate(format!(
                    "environment {e} has {} observation(s), need at least 2",
                    b.len()
                )));
            }
            b.env_id = e;
        }
        if column_names.len() != p {
            return Err(WvmError::DimensionMismatch {
                expected: p,
                got: column_names.len(),
            });
        }
        if labels.len() != blocks.len() {
            return Err(WvmError::DimensionMismatch {
                expected: blocks.len(),
                got: labels.len(),
            });
        }
        let n = blocks.iter().map(EnvBlock::len).sum();
        Ok(Self {
            environments: blocks,
            p,
            n,
            column_names,
            labels,
        })
    }

    pub fn environments(&self) -> &[EnvBlock] {
        &self.environments
    }

    pub fn env(&self, e: usize) -> &EnvBlock {
        &self.environments[e]
    }

    /// Number of predictors.
    pub fn p(&self) -> usize {
        self.p
    }

    /// Number of environments.
    pub fn n_envs(&self) -> usize {
        self.environments.len()
    }

    /// Total sample count.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn env_sizes(&self) -> Vec<usize> {
        self.environments.iter().map(EnvBlock::len).collect()
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    /// Original environment labels, indexed by dense environment id.
    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    /// Keeps only the listed predictor columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        if let Some(&bad) = cols.iter().find(|&&c| c >= self.p) {
            return Err(WvmError::Domain(format!(
                "column {bad} out of range for p = {}",
                self.p
            )));
        }
        let q = cols.len();
        let blocks = self
            .environments
            .iter()
            .map(|b| {
                let mut x = Vec::with_capacity(b.len() * q);
                for row in b.rows() {
                    x.extend(cols.iter().map(|&c| row[c]));
                }
                EnvBlock::new(b.env_id, q, x, b.y.clone())
            })
            .collect::<Result<Vec<_>>>()?;
        let names = cols.iter().map(|&c| self.column_names[c].clone()).collect();
        Self::with_metadata(blocks, names, self.labels.clone())
    }

    /// Replaces the rows of every environment, keeping metadata. Used by
    /// resampling schemes.
    pub(crate) fn with_blocks(&self, blocks: Vec<EnvBlock>) -> Result<Self> {
        Self::with_metadata(blocks, self.column_names.clone(), self.labels.clone())
    }

    /// Reads a CSV file with header `env,y,<predictor names...>`.
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| WvmError::io(path, e))?;
        Self::parse_csv(&text)
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(WvmError::Parse {
            line: 1,
            msg: "empty file".into(),
        })?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.len() < 2 || cols[0] != "env" || cols[1] != "y" {
            return Err(WvmError::Parse {
                line: 1,
                msg: "header must start with `env,y`".into(),
            });
        }
        let p = cols.len() - 2;
        let names: Vec<String> = cols[2..].iter().map(|s| s.to_string()).collect();

        let mut index: HashMap<i64, usize> = HashMap::new();
        let mut labels = Vec::new();
        let mut xs: Vec<Vec<f64>> = Vec::new();
        let mut ys: Vec<Vec<f64>> = Vec::new();
        for (i, line) in lines {
            let lineno = i + 1;
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            if cells.len() != p + 2 {
                return Err(WvmError::Parse {
                    line: lineno,
                    msg: format!("expected {} fields, found {}", p + 2, cells.len()),
                });
            }
            let label: i64 = cells[0].parse().map_err(|_| WvmError::Parse {
                line: lineno,
                msg: format!("environment label `{}` is not an integer", cells[0]),
            })?;
            let e = *index.entry(label).or_insert_with(|| {
                labels.push(label);
                xs.push(Vec::new());
                ys.push(Vec::new());
                labels.len() - 1
            });
            let parse = |s: &str| -> Result<f64> {
                match s.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(WvmError::Parse {
                        line: lineno,
                        msg: format!("`{s}` is not a finite number"),
                    }),
                }
            };
            ys[e].push(parse(cells[1])?);
            for c in &cells[2..] {
                let v = parse(c)?;
                xs[e].push(v);
            }
        }
        let blocks = xs
            .into_iter()
            .zip(ys)
            .enumerate()
            .map(|(e, (x, y))| EnvBlock::new(e, p, x, y))
            .collect::<Result<Vec<_>>>()?;
        Self::with_metadata(blocks, names, labels)
    }

    /// Serializes to the CSV format read by [`EnvironmentDataset::load_csv`].
    pub fn to_csv_string(&self) -> String {
        blocks_to_csv(&self.environments, &self.column_names, &self.labels)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv_string()).map_err(|e| WvmError::io(path, e))
    }

    /// Pooled predictor rows and targets across all environments.
    pub fn pooled(&self) -> (Vec<f64>, Vec<f64>) {
        let mut x = Vec::with_capacity(self.n * self.p);
        let mut y = Vec::with_capacity(self.n);
        for b in &self.environments {
            x.extend_from_slice(&b.x);
            y.extend_from_slice(&b.y);
        }
        (x, y)
    }
}

/// CSV text for raw blocks, without the dataset-level validation (a lone
/// environment can be written even though it cannot be analysed).
pub fn blocks_to_csv(blocks: &[EnvBlock], column_names: &[String], labels: &[i64]) -> String {
    let mut out = String::from("env,y");
    for name in column_names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (b, label) in blocks.iter().zip(labels) {
        for (i, row) in b.rows().enumerate() {
            let _ = write!(out, "{label},{}", b.y[i]);
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
    }
    out
}

/// Environment weights on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights(Vec<f64>);

impl Weights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() || w.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(WvmError::Domain("weights must be positive and finite".into()));
        }
        let total: f64 = w.iter().sum();
        Ok(Self(w.into_iter().map(|v| v / total).collect()))
    }

    pub fn uniform(n_envs: usize) -> Self {
        Self(vec![1.0 / n_envs as f64; n_envs])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `w_e = n_e / n`, renormalized so the entries sum to one.
pub fn proportional_weights(ds: &EnvironmentDataset) -> Weights {
    let n = ds.n() as f64;
    let w: Vec<f64> = ds.environments().iter().map(|b| b.len() as f64 / n).collect();
    Weights::new(w).expect("environment sizes are positive")
}

/// Per-column affine map applied by [`standardize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    /// Sample standard deviation; 1.0 for flagged constant columns.
    pub scale: Vec<f64>,
    pub constant: Vec<bool>,
}

impl Standardization {
    /// Maps coefficients fitted on standardized columns back to the original
    /// scale. Returns `(beta, intercept shift)`.
    pub fn unscale_coefficients(&self, beta_std: &[f64]) -> (Vec<f64>, f64) {
        let beta: Vec<f64> = beta_std
            .iter()
            .zip(&self.scale)
            .map(|(b, s)| b / s)
            .collect();
        let shift = -beta.iter().zip(&self.mean).map(|(b, m)| b * m).sum::<f64>();
        (beta, shift)
    }
}

/// Centers and scales every predictor column with pooled statistics.
pub fn standardize(ds: &EnvironmentDataset) -> (EnvironmentDataset, Standardization) {
    let p = ds.p();
    let n = ds.n() as f64;
    let mut mean = vec![0.0; p];
    for b in ds.environments() {
        for row in b.rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut ss = vec![0.0; p];
    for b in ds.environments() {
        for row in b.rows() {
            for j in 0..p {
                let d = row[j] - mean[j];
                ss[j] += d * d;
            }
        }
    }
    let mut scale = vec![1.0; p];
    let mut constant = vec![false; p];
    for j in 0..p {
        let sd = (ss[j] / (n - 1.0)).sqrt();
        if sd > 1e-12 * (1.0 + mean[j].abs()) {
            scale[j] = sd;
        } else {
            constant[j] = true;
        }
    }
    let blocks = ds
        .environments()
        .iter()
        .map(|b| {
            let mut x = b.x.clone();
            for row in x.chunks_mut(p.max(1)) {
                for j in 0..p {
                    row[j] = (row[j] - mean[j]) / scale[j];
                }
            }
            EnvBlock::new(b.env_id, p, x, b.y.clone()).expect("finite after scaling")
        })
        .collect();
    let out = ds.with_blocks(blocks).expect("shape preserved");
    (
        out,
        Standardization {
            mean,
            scale,
            constant,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block(e: usize, p: usize, x: &[f64], y: &[f64]) -> EnvBlock {
        EnvBlock::new(e, p, x.to_vec(), y.to_vec()).unwrap()
    }

    #[test]
    fn parses_two_environment_file() {
        let csv = "env,y,x1,x2\n0,1,2,3\n0,1.5,2,3\n0,2,0,1\n1,3,4,5\n1,0,0,0\n1,-1,1e-3,2\n";
        let ds = EnvironmentDataset::parse_csv(csv).unwrap();
        assert_eq!(ds.n_envs(), 2);
        assert_eq!(ds.n(), 6);
        assert_eq!(ds.p(), 2);
        assert_eq!(ds.env(1).row(2), &[1e-3, 2.0]);
    }

    #[test]
    fn single_environment_is_degenerate() {
        let csv = "env,y,x1\n3,1,2\n3,2,3\n3,4,5\n";
        assert!(matches!(
            EnvironmentDataset::parse_csv(csv),
            Err(WvmError::Degenerate(_))
        ));
    }

    #[test]
    fn tiny_environment_is_degenerate() {
        let csv = "env,y,x1\n0,1,2\n0,2,3\n1,4,5\n";
        assert!(matches!(
            EnvironmentDataset::parse_csv(csv),
            Err(WvmError::Degenerate(_))
        ));
    }

    #[test]
    fn labels_remapped_in_first_appearance_order() {
        let csv = "env,y,x1\n5,1,2\n2,2,3\n5,4,5\n2,0,0\n";
        let ds = EnvironmentDataset::parse_csv(csv).unwrap();
        assert_eq!(ds.labels(), &[5, 2]);
        assert_eq!(ds.env(0).env_id(), 0);
        assert_eq!(ds.env(1).env_id(), 1);
        assert_eq!(ds.env(0).y(), &[1.0, 4.0]);
    }

    #[test]
    fn parse_errors() {
        let short = "env,y,x1\n0,1\n0,2,3\n1,1,1\n1,1,1\n";
        assert!(matches!(
            EnvironmentDataset::parse_csv(short),
            Err(WvmError::Parse { line: 2, .. })
        ));
        let text = "env,y,x1\n0,1,a\n";
        assert!(matches!(
            EnvironmentDataset::parse_csv(text),
            Err(WvmError::Parse { .. })
        ));
        let label = "env,y,x1\n0.5,1,1\n";
        assert!(matches!(
            EnvironmentDataset::parse_csv(label),
            Err(WvmError::Parse { .. })
        ));
        let header = "y,env,x1\n";
        assert!(matches!(
            EnvironmentDataset::parse_csv(header),
            Err(WvmError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = EnvironmentDataset::load_csv("/definitely/not/here.csv").unwrap_err();
        assert!(matches!(err, WvmError::Io { .. }));
    }

    #[test]
    fn proportional_weight_examples() {
        let mk = |sizes: &[usize]| {
            let blocks = sizes
                .iter()
                .enumerate()
                .map(|(e, &n)| block(e, 0, &[], &vec![0.0; n]))
                .collect();
            EnvironmentDataset::new(blocks).unwrap()
        };
        assert_eq!(proportional_weights(&mk(&[500, 500])).as_slice(), &[0.5, 0.5]);
        assert_eq!(proportional_weights(&mk(&[100, 300])).as_slice(), &[0.25, 0.75]);
    }

    #[test]
    fn standardize_examples() {
        // column 0 constant at 7, column 1 pooled {0, 2, 4, 6}
        let ds = EnvironmentDataset::new(vec![
            block(0, 2, &[7.0, 0.0, 7.0, 2.0], &[0.0, 0.0]),
            block(1, 2, &[7.0, 4.0, 7.0, 6.0], &[0.0, 0.0]),
        ])
        .unwrap();
        let (std, t) = standardize(&ds);
        assert!(t.constant[0] && !t.constant[1]);
        assert_eq!(t.mean, vec![7.0, 3.0]);
        // sample variance of {0,2,4,6} is (9+1+1+9)/3 = 20/3
        let sd = (20.0f64 / 3.0).sqrt();
        assert!((t.scale[1] - sd).abs() < 1e-15);
        assert_eq!(std.env(0).row(0)[0], 0.0);
        assert!((std.env(0).row(0)[1] + 3.0 / sd).abs() < 1e-15);

        let unit = EnvironmentDataset::new(vec![
            block(0, 1, &[-1.0, 1.0], &[0.0, 0.0]),
            block(1, 1, &[-1.0, 1.0], &[0.0, 0.0]),
        ])
        .unwrap();
        let (_, t) = standardize(&unit);
        // pooled {-1,1,-1,1}: sample variance 4/3
        assert!((t.scale[0] - (4.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn unscale_recovers_original_coefficients() {
        let ds = EnvironmentDataset::new(vec![
            block(0, 1, &[1.0, 3.0, 5.0], &[0.0; 3]),
            block(1, 1, &[2.0, 4.0, 9.0], &[0.0; 3]),
        ])
        .unwrap();
        let (std, t) = standardize(&ds);
        let (beta, shift) = t.unscale_coefficients(&[2.0]);
        for (b_std, b_raw) in std.env(1).rows().zip(ds.env(1).rows()) {
            let lhs = 2.0 * b_std[0];
            let rhs = beta[0] * b_raw[0] + shift;
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}
