//! Per-run manifest: resolved config, input hashes, outputs and timings.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::config::{flatten, RunConfig};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub started_unix: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Resolved configuration as flat dotted keys.
    pub config: Map<String, Value>,
    pub seed: u64,
    /// Git-style SHA-256 object hash of every input file.
    pub inputs: BTreeMap<String, String>,
    /// Hash over the sorted `inputs` listing.
    pub input_hash: String,
    pub outputs: Vec<String>,
    pub timings: Timings,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 of `blob <len>\0<content>`, the object hash git uses.
pub fn blob_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    hex(&h.finalize())
}

pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(blob_hash(&bytes))
}

/// Collects inputs and outputs while a command runs.
pub struct Recorder {
    command: String,
    started: Instant,
    started_unix: f64,
    inputs: BTreeMap<String, String>,
    outputs: Vec<PathBuf>,
}

impl Recorder {
    pub fn start(command: &str) -> Self {
        let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64());
        Self { command: command.into(), started: Instant::now(), started_unix, inputs: BTreeMap::new(), outputs: Vec::new() }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), file_hash(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    pub fn finish(self, config: &RunConfig) -> RunManifest {
        let listing: String = self.inputs.iter().map(|(p, h)| format!("{h}  {p}\n")).collect();
        RunManifest {
            command: self.command,
            config: flatten(&serde_json::to_value(config).expect("config serializes")),
            seed: config.seed,
            input_hash: blob_hash(listing.as_bytes()),
            inputs: self.inputs,
            outputs: self.outputs.iter().map(|p| p.display().to_string()).collect(),
            timings: Timings { started_unix: self.started_unix, wall_seconds: self.started.elapsed().as_secs_f64() },
        }
    }
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        prompter_core::io::write_atomic(path, text.as_bytes())?;
        Ok(())
    }
}
