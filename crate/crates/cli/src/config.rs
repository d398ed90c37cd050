//! Run configuration: JSON files with flat dotted keys, overridden by
//! `--set key=value` flags.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use prompter_core::data::GenConfig;
use prompter_core::training::TrainConfig;
use prompter_core::transformer::ModelConfig;
use prompter_core::Error;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Maximum generated value length.
    pub max_decode: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { max_decode: 16 }
    }
}

/// Everything a subcommand may read. `seed` drives model initialization,
/// example sampling and corpus generation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub gen: GenConfig,
    pub eval: EvalConfig,
}

fn config_err(msg: String) -> anyhow::Error {
    anyhow!(Error::Config(msg))
}

/// Sets `value` at a dotted path that must already exist in `root`.
fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut node = root;
    let mut parts = key.split('.').peekable();
    while let Some(part) = parts.next() {
        let obj = node.as_object_mut().ok_or_else(|| config_err(format!("config key {key:?} goes through a non-object")))?;
        let slot = obj.get_mut(part).ok_or_else(|| config_err(format!("unknown config key {key:?}")))?;
        if parts.peek().is_none() {
            *slot = value;
            return Ok(());
        }
        node = slot;
    }
    Err(config_err("empty config key".into()))
}

/// Leaf values keyed by dotted path. Arrays are leaves.
pub fn flatten(value: &Value) -> Map<String, Value> {
    fn walk(prefix: &str, v: &Value, out: &mut Map<String, Value>) {
        match v {
            Value::Object(m) if !m.is_empty() => {
                for (k, child) in m {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, child, out);
                }
            }
            _ => {
                out.insert(prefix.to_string(), v.clone());
            }
        }
    }
    let mut out = Map::new();
    walk("", value, &mut out);
    out
}

/// `key=value`; the value is read as JSON when it parses, else as a string.
fn parse_override(s: &str) -> Result<(String, Value)> {
    let (k, v) = s.split_once('=').ok_or_else(|| config_err(format!("override {s:?} is not KEY=VALUE")))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

impl RunConfig {
    /// Applies the file's keys, then the overrides, on top of `base`.
    pub fn resolve(base: RunConfig, file: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
        let mut value = serde_json::to_value(&base)?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            let parsed: Value = serde_json::from_str(&text)
                .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
            let Value::Object(entries) = parsed else {
                bail!(Error::Config(format!("{}: config must be a JSON object", path.display())));
            };
            for (k, v) in entries {
                set_path(&mut value, &k, v)?;
            }
        }
        for o in overrides {
            let (k, v) = parse_override(o)?;
            set_path(&mut value, &k, v)?;
        }
        let mut cfg: RunConfig = serde_json::from_value(value).map_err(|e| config_err(e.to_string()))?;
        cfg.train.seed = cfg.seed;
        Ok(cfg)
    }

    pub fn to_flat_json(&self) -> String {
        let flat = flatten(&serde_json::to_value(self).expect("config serializes"));
        serde_json::to_string_pretty(&flat).expect("config serializes") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_apply_in_order() {
        let cfg = RunConfig::resolve(
            RunConfig::default(),
            None,
            &["train.max_steps=5".into(), "model.mode=baseline".into(), "train.freeze.encoder=up-to-2".into()],
        )
        .unwrap();
        assert_eq!(cfg.train.max_steps, 5);
        assert_eq!(cfg.model.mode.as_str(), "baseline");
        assert_eq!(cfg.train.freeze.encoder.to_string(), "up-to-2");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for bad in ["train.nope=1", "model.d_model.x=1", "novalue"] {
            assert!(RunConfig::resolve(RunConfig::default(), None, &[bad.into()]).is_err(), "{bad}");
        }
    }

    #[test]
    fn flat_snapshot_round_trips() {
        let mut base = RunConfig::default();
        base.seed = 9;
        base.train.stop_below_loss = Some(0.5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, base.to_flat_json()).unwrap();
        assert_eq!(RunConfig::resolve(RunConfig::default(), Some(&path), &[]).unwrap(), {
            let mut b = base.clone();
            b.train.seed = 9;
            b
        });
    }
}
