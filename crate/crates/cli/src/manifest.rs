use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use starris_gl::config::{hex_digest, ConfigFile};
use starris_gl::container::write_atomic;
use starris_gl::Result;

/// Provenance record written next to every artifact before the artifact itself.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    /// Derived from command, parameters and config hash only, so reruns share it.
    pub id: String,
    pub command: String,
    pub params: BTreeMap<String, String>,
    pub config_hash: String,
    pub shape_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub outputs: Vec<PathBuf>,
    pub tool_version: String,
    /// Fully resolved config, enough to rerun the command.
    pub config: String,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl RunManifest {
    pub fn new(command: &str, params: BTreeMap<String, String>, file: &ConfigFile, outputs: Vec<PathBuf>) -> Self {
        let tool_version = env!("CARGO_PKG_VERSION").to_string();
        let key = serde_json::json!({
            "command": command,
            "params": params,
            "config_hash": file.hash(),
            "tool_version": tool_version,
        });
        let id = hex_digest(key.to_string().as_bytes())[..16].to_string();
        let mut seeds = BTreeMap::new();
        seeds.insert("master".to_string(), file.experiment.seed);
        Self {
            id,
            command: command.to_string(),
            params,
            config_hash: file.hash(),
            shape_hash: file.shape_hash(),
            seeds,
            started_unix: now(),
            finished_unix: None,
            outputs,
            tool_version,
            config: file.to_toml_string(),
        }
    }

    pub fn path_in(&self, out_dir: &Path) -> PathBuf {
        out_dir.join(format!("{}-{}.manifest.json", self.command, self.id))
    }

    pub fn write(&self, out_dir: &Path) -> Result<PathBuf> {
        let path = self.path_in(out_dir);
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_atomic(&path, json.as_bytes())?;
        Ok(path)
    }

    pub fn finish(mut self, out_dir: &Path) -> Result<PathBuf> {
        self.finished_unix = Some(now());
        self.write(out_dir)
    }
}
