//! Provenance attached to every output file.

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::failure::Failure;

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config_sha256: String,
    pub master_seed: u64,
    /// Seconds since the Unix epoch; absent under `--deterministic`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<u64>,
}

/// Hash of the canonical (compact, defaults filled in) config serialization.
pub fn config_hash(config: &ExperimentConfig) -> String {
    let canonical = serde_json::to_vec(config).expect("config serializes");
    hex::encode(Sha256::digest(&canonical))
}

impl Manifest {
    pub fn new(config: &ExperimentConfig, command: &'static str, deterministic: bool) -> Self {
        let timestamp = (!deterministic).then(|| {
            SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        });
        Manifest {
            tool: "stochhom",
            version: env!("CARGO_PKG_VERSION"),
            command,
            config_sha256: config_hash(config),
            master_seed: config.master_seed,
            timestamp,
        }
    }

    /// `#`-prefixed header lines for CSV files.
    pub fn write_csv_header(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "# {} {} {}", self.tool, self.version, self.command)?;
        writeln!(out, "# config_sha256 {}", self.config_sha256)?;
        writeln!(out, "# master_seed {}", self.master_seed)?;
        if let Some(ts) = self.timestamp {
            writeln!(out, "# timestamp {ts}")?;
        }
        Ok(())
    }
}

/// Output directory with serialized writes.
pub struct OutDir {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

impl OutDir {
    pub fn create(dir: PathBuf, manifest: Manifest) -> Result<Self, Failure> {
        fs::create_dir_all(&dir).map_err(|e| Failure::Config(format!("cannot create {}: {e}", dir.display())))?;
        Ok(OutDir { dir, manifest })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Writes a CSV file: manifest header, then `body`.
    pub fn csv(&self, name: &str, body: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<PathBuf, Failure> {
        let mut buf = Vec::new();
        self.manifest.write_csv_header(&mut buf)?;
        body(&mut buf)?;
        let path = self.path(name);
        fs::write(&path, buf)?;
        Ok(path)
    }

    /// Writes `{"manifest": …, <fields of value>}` as pretty JSON.
    pub fn json(&self, name: &str, value: &impl Serialize) -> Result<PathBuf, Failure> {
        let mut obj = serde_json::Map::new();
        obj.insert("manifest".into(), serde_json::to_value(&self.manifest)?);
        match serde_json::to_value(value)? {
            serde_json::Value::Object(fields) => obj.extend(fields),
            other => {
                obj.insert("result".into(), other);
            }
        }
        let path = self.path(name);
        fs::write(&path, serde_json::to_string_pretty(&serde_json::Value::Object(obj))? + "\n")?;
        Ok(path)
    }

    /// The resolved config, defaults included, so what ran is on disk.
    pub fn dump_config(&self, config: &ExperimentConfig) -> Result<PathBuf, Failure> {
        self.json("config.resolved.json", &serde_json::json!({ "config": config }))
    }
}
