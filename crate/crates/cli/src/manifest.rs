use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Everything needed to re-run a command bit-exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Command line after the program name, as given.
    pub args: Vec<String>,
    /// Working directory that relative paths in `args` refer to.
    pub cwd: PathBuf,
    pub out_dir: PathBuf,
    pub config: serde_json::Value,
    pub seed: u64,
    pub version: String,
    pub threads: usize,
    pub inputs: Vec<PathBuf>,
    /// Files written into `out_dir`, excluding the manifest itself.
    pub outputs: Vec<String>,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(command: &str, args: &[String], out_dir: &Path, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            args: args.to_vec(),
            cwd: std::env::current_dir().unwrap_or_default(),
            out_dir: crate::commands::absolute(out_dir),
            config: serde_json::Value::Null,
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            threads: rayon::current_num_threads(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings: BTreeMap::new(),
        }
    }

    pub fn write(&self) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        crate::write_file(&self.out_dir.join(MANIFEST_FILE), &(text + "\n"))
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Data(format!("{}: not a run manifest: {e}", path.display())))
    }
}
