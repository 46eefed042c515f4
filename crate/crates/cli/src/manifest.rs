//! Run manifests.
//!
//! Every command writes `manifest.json` into its output directory after all
//! result files, so a manifest's presence means the run completed.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::{CliError, CliResult};

pub const MANIFEST_NAME: &str = "manifest.json";

/// Unix time, or `SOURCE_DATE_EPOCH` when set so that manifests can be
/// made byte-identical across runs.
pub fn now() -> u64 {
    if let Some(fixed) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.trim().parse().ok()) {
        return fixed;
    }
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: &'static str,
    /// Every parameter after defaults were applied.
    pub parameters: serde_json::Value,
    pub seed: u64,
    pub started_unix: u64,
    pub finished_unix: u64,
    /// Result files relative to the output directory, in write order.
    pub outputs: Vec<String>,
}

/// Output directory that records every file written into it.
pub struct OutputDir {
    dir: PathBuf,
    files: Vec<String>,
    command: String,
    parameters: serde_json::Value,
    seed: u64,
    started: u64,
}

impl OutputDir {
    pub fn create(dir: &Path, command: &str, parameters: &impl Serialize, seed: u64) -> CliResult<Self> {
        std::fs::create_dir_all(dir).map_err(|source| {
            CliError::Core(msplit::Error::Io {
                path: dir.to_path_buf(),
                source,
            })
        })?;
        let parameters = serde_json::to_value(parameters)
            .map_err(|e| CliError::Usage(format!("cannot record parameters: {e}")))?;
        Ok(OutputDir {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            command: command.to_string(),
            parameters,
            seed,
            started: now(),
        })
    }

    /// Path for result file `name`, which must be a bare file name.
    pub fn file(&mut self, name: &str) -> PathBuf {
        assert!(
            !name.contains(['/', '\\']) && name != ".." && name != MANIFEST_NAME,
            "output names are bare file names"
        );
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }

    /// Writes the manifest; call after every result file is complete.
    pub fn finish(self) -> CliResult<PathBuf> {
        let manifest = RunManifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            parameters: self.parameters,
            seed: self.seed,
            started_unix: self.started,
            finished_unix: now(),
            outputs: self.files,
        };
        let path = self.dir.join(MANIFEST_NAME);
        msplit::io::write_json(&path, &manifest)?;
        Ok(path)
    }
}
