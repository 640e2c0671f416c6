//! Run reports and hashed output bookkeeping.
//!
//! A report echoes the config, hashes every input file and every output
//! artifact, and carries the command's metrics. Wall-clock time goes to a
//! separate timing file so reports stay byte-identical across reruns.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Files read by a run, keyed by display path.
#[derive(Debug, Default, Clone)]
pub struct Inputs {
    files: BTreeMap<String, String>,
}

impl Inputs {
    /// Hashes `path`, recorded under `name`.
    pub fn add(&mut self, name: impl Into<String>, path: &Path) -> Result<()> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        self.files.insert(name.into(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn extend(&mut self, other: Inputs) {
        self.files.extend(other.files);
    }

    /// One hash over the sorted `(name, file hash)` list: any renamed,
    /// added, removed or modified input changes it.
    pub fn combined_hash(&self) -> String {
        let mut h = Sha256::new();
        for (name, hash) in &self.files {
            h.update(name.as_bytes());
            h.update([0]);
            h.update(hash.as_bytes());
            h.update(*b"\n");
        }
        hex::encode(h.finalize())
    }
}

/// Writes artifacts under the output directory and remembers their hashes.
#[derive(Debug)]
pub struct Outputs {
    root: PathBuf,
    files: BTreeMap<String, String>,
}

impl Outputs {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| CliError::io(&root, e))?;
        Ok(Self { root, files: BTreeMap::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Writes `bytes` to `rel` (slash-separated, relative to the root).
    pub fn write(&mut self, rel: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        fs::write(&path, bytes.as_ref()).map_err(|e| CliError::io(&path, e))?;
        self.files.insert(rel.to_string(), sha256_hex(bytes.as_ref()));
        Ok(path)
    }

    pub fn write_json(&mut self, rel: &str, value: &impl Serialize) -> Result<PathBuf> {
        let text = serde_json::to_string_pretty(value).expect("artifact serializes") + "\n";
        self.write(rel, text)
    }

    /// Records a file another writer already produced under the root.
    pub fn adopt(&mut self, rel: &str) -> Result<()> {
        let path = self.root.join(rel);
        let bytes = fs::read(&path).map_err(|e| CliError::io(&path, e))?;
        self.files.insert(rel.to_string(), sha256_hex(&bytes));
        Ok(())
    }
}

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config: Value,
    pub input_hash: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub metrics: Value,
}

/// Writes `report-<command>.json` and `timing-<command>.json`.
pub fn finish(
    command: &str,
    config: Value,
    inputs: &Inputs,
    outputs: Outputs,
    metrics: Value,
    elapsed_s: f64,
) -> Result<RunReport> {
    let mut outputs = outputs;
    let report = RunReport {
        tool: "ecog",
        version: TOOL_VERSION,
        command: command.to_string(),
        config,
        input_hash: inputs.combined_hash(),
        inputs: inputs.files.clone(),
        outputs: outputs.files.clone(),
        metrics,
    };
    outputs.write_json(&format!("report-{command}.json"), &report)?;
    let timing = serde_json::json!({ "command": command, "wall_clock_s": elapsed_s });
    outputs.write_json(&format!("timing-{command}.json"), &timing)?;
    Ok(report)
}
