use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub tool_version: String,
    pub core_version: String,
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    /// File name (relative to the output directory) to SHA-256.
    pub checksums: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

impl Manifest {
    pub fn build(cfg: &ExperimentConfig, root: &Path, files: &[std::path::PathBuf]) -> CliResult<Self> {
        let mut checksums = BTreeMap::new();
        for f in files {
            let name = f.strip_prefix(root).unwrap_or(f).to_string_lossy().replace('\\', "/");
            checksums.insert(name, sha256_file(f)?);
        }
        let mut seeds = vec![cfg.seed];
        if let Some((_, s)) = cfg.sweep_axes() {
            seeds.extend(s);
        }
        seeds.sort_unstable();
        seeds.dedup();
        Ok(Self {
            tool: env!("CARGO_PKG_NAME").into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            core_version: regulab_core::VERSION.into(),
            config: cfg.clone(),
            seeds,
            checksums,
        })
    }
}
