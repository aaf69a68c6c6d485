use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// JSON with object keys sorted, independent of the input's key order.
pub fn canonical_json<T: Serialize>(config: &T) -> Result<String> {
    // serde_json's default map is ordered by key
    let value = serde_json::to_value(config).map_err(|e| Error::Config(e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| Error::Config(e.to_string()))
}

/// Hex SHA-256 of the canonical JSON form.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let digest = Sha256::digest(canonical_json(config)?.as_bytes());
    Ok(hex::encode(digest))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub step: String,
    pub seconds: f64,
}

/// Everything needed to rerun a benchmark: the full config, its hash and the
/// toolkit version, plus what the run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub config: serde_json::Value,
    pub timings: Vec<Timing>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new<T: Serialize>(command: &str, config: &T, seed: u64) -> Result<Self> {
        Ok(Self {
            command: command.to_string(),
            config_hash: config_hash(config)?,
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: serde_json::to_value(config).map_err(|e| Error::Config(e.to_string()))?,
            timings: Vec::new(),
            outputs: Vec::new(),
        })
    }

    /// Run directory under `root`, named by command and hash prefix.
    pub fn run_dir(&self, root: &Path) -> PathBuf {
        root.join(format!("{}-{}", self.command, &self.config_hash[..16]))
    }

    /// Writes `manifest.json` into `dir` via a temporary file and rename.
    pub fn write_atomic(&self, dir: &Path) -> Result<PathBuf> {
        let io = |p: &Path, e| Error::Io { path: p.display().to_string(), source: e };
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let target = dir.join("manifest.json");
        let tmp = dir.join(".manifest.json.tmp");
        let body = serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(&tmp, body + "\n").map_err(|e| io(&tmp, e))?;
        std::fs::rename(&tmp, &target).map_err(|e| io(&target, e))?;
        Ok(target)
    }
}
