//! Reproducibility records: one JSON file per run under `<work_dir>/runs/`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::hex;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub tool_version: String,
    pub command: String,
    pub args: BTreeMap<String, String>,
    pub config_hash: Option<String>,
    pub seeds: BTreeMap<String, u64>,
    /// File path → SHA-256 of its contents.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

impl RunRecord {
    pub fn new(command: &str) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            ..Default::default()
        }
    }

    pub fn arg(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.args.insert(key.to_string(), value.to_string());
        self
    }

    pub fn seed(&mut self, key: &str, value: u64) -> &mut Self {
        self.seeds.insert(key.to_string(), value);
        self
    }

    pub fn input(&mut self, path: &Path) -> Result<&mut Self> {
        let h = sha256_file(path)?;
        self.inputs.insert(path.display().to_string(), h);
        Ok(self)
    }

    pub fn output(&mut self, path: &Path) -> Result<&mut Self> {
        let h = sha256_file(path)?;
        self.outputs.insert(path.display().to_string(), h);
        Ok(self)
    }

    /// Directories are recorded as one digest over their sorted file list.
    pub fn output_dir(&mut self, dir: &Path) -> Result<&mut Self> {
        let mut names: Vec<PathBuf> = std::fs::read_dir(dir)
            .with_context(|| format!("listing {}", dir.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        names.sort();
        let mut h = Sha256::new();
        for p in &names {
            h.update(p.file_name().unwrap_or_default().as_encoded_bytes());
            h.update(sha256_file(p)?.as_bytes());
        }
        self.outputs
            .insert(format!("{}/ ({} files)", dir.display(), names.len()), hex(&h.finalize()));
        Ok(self)
    }

    /// Writes `<work_dir>/runs/<command>-<args digest>.json` and returns the path.
    pub fn write(&self, work_dir: &Path) -> Result<PathBuf> {
        let dir = work_dir.join("runs");
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let key = serde_json::to_vec(&self.args).expect("args serialize");
        let name = format!("{}-{}.json", self.command, &hex(&Sha256::digest(&key))[..12]);
        let path = dir.join(name);
        let mut body = serde_json::to_vec_pretty(self).expect("record serializes");
        body.push(b'\n');
        std::fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
