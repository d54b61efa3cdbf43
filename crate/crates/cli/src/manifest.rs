//! Run manifests: what produced each output file.
//!
//! Every command writes `<command>.manifest.json` next to its outputs. The
//! manifest holds the resolved config, the dataset fingerprint and the
//! SHA-256 of each input and output, so any artifact can be traced back to
//! the run that wrote it. Nothing time- or host-dependent is recorded.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vqpu::{Error, Result};

use crate::config::RunConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    /// Relative to the output directory for outputs; as given for inputs.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub command: String,
    pub config: RunConfig,
    pub dataset_fingerprint: Option<String>,
    pub notes: Vec<String>,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub summary: serde_json::Value,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn manifest_path(out: &Path, command: &str) -> PathBuf {
    out.join(format!("{command}.manifest.json"))
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            tool: format!("vqpu {}", env!("CARGO_PKG_VERSION")),
            command: command.to_string(),
            config: config.clone(),
            dataset_fingerprint: None,
            notes: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            summary: serde_json::Value::Null,
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileRecord {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    /// Records `name` (relative to `out`) after it has been written.
    pub fn add_output(&mut self, out: &Path, name: &str) -> Result<()> {
        self.outputs.push(FileRecord {
            path: name.to_string(),
            sha256: sha256_file(&out.join(name))?,
        });
        Ok(())
    }

    pub fn write(&self, out: &Path) -> Result<PathBuf> {
        let path = manifest_path(out, &self.command);
        write_json(&path, self)?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            message: e.to_string(),
        })
    }

    /// Output records whose file is missing or no longer matches its hash.
    pub fn stale_outputs(&self, out: &Path) -> Vec<String> {
        self.outputs
            .iter()
            .filter(|r| sha256_file(&out.join(&r.path)).ok().as_deref() != Some(r.sha256.as_str()))
            .map(|r| r.path.clone())
            .collect()
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("plain data serializes") + "\n";
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}
