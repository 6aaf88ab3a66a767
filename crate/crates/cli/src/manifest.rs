//! Run manifests written next to every artifact.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use rrx_core::config::Config;
use rrx_numerics::snapshot::file_hash;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileRecord {
    pub fn of(path: &Path) -> Result<Self> {
        let sha256 = file_hash(path).with_context(|| format!("hashing {}", path.display()))?;
        Ok(Self { path: path.to_path_buf(), sha256 })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config_hash: String,
    /// Full resolved configuration in file form.
    pub config: String,
    pub seed: u64,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub snapshot_hashes: BTreeMap<String, String>,
    pub timings: BTreeMap<String, f64>,
    pub forward_passes: BTreeMap<String, usize>,
    #[serde(default)]
    pub results: serde_json::Value,
}

impl RunManifest {
    pub fn new(command: &str, cfg: &Config) -> Self {
        Self {
            command: command.to_string(),
            argv: std::env::args().collect(),
            config_hash: cfg.hash(),
            config: cfg.to_file_string(),
            seed: cfg.seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            snapshot_hashes: BTreeMap::new(),
            timings: BTreeMap::new(),
            forward_passes: BTreeMap::new(),
            results: serde_json::Value::Null,
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileRecord::of(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        self.outputs.push(FileRecord::of(path)?);
        Ok(())
    }

    pub fn time<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let clock = Instant::now();
        let out = f()?;
        self.timings.insert(name.to_string(), clock.elapsed().as_secs_f64());
        Ok(out)
    }

    /// `<artifact>.manifest.json`
    pub fn path_for(artifact: &Path) -> PathBuf {
        let mut p = artifact.as_os_str().to_owned();
        p.push(".manifest.json");
        PathBuf::from(p)
    }

    pub fn write_next_to(&self, artifact: &Path) -> Result<PathBuf> {
        let path = Self::path_for(artifact);
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    #[cfg(test)]
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }
}
