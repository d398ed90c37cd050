use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Real;
use crate::transformer::Model;

/// Which transformer blocks of one stack stay trainable after warmup.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum LayerSelector {
    All,
    /// Layers `0` and `L-1`.
    FirstLast,
    /// Layers `0, 1, L-2, L-1`.
    FirstTwoLastTwo,
    /// Layers `0..k`, i.e. "up to the k-th layer".
    UpTo(usize),
    Layers(Vec<usize>),
}

impl LayerSelector {
    pub fn resolve(&self, n_layers: usize) -> BTreeSet<usize> {
        let last = n_layers.saturating_sub(1);
        let set: BTreeSet<usize> = match self {
            Self::All => (0..n_layers).collect(),
            Self::FirstLast => [0, last].into(),
            Self::FirstTwoLastTwo => [0, 1, last.saturating_sub(1), last].into(),
            Self::UpTo(k) => (0..*k).collect(),
            Self::Layers(ls) => ls.iter().copied().collect(),
        };
        set.into_iter().filter(|&i| i < n_layers).collect()
    }
}

impl fmt::Display for LayerSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::All => f.write_str("all"),
            Self::FirstLast => f.write_str("first-last"),
            Self::FirstTwoLastTwo => f.write_str("first-two-last-two"),
            Self::UpTo(k) => write!(f, "up-to-{k}"),
            Self::Layers(ls) => {
                let s: Vec<String> = ls.iter().map(usize::to_string).collect();
                write!(f, "layers:{}", s.join(","))
            }
        }
    }
}

impl FromStr for LayerSelector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown layer selector {s:?}"));
        Ok(match s {
            "all" => Self::All,
            "first-last" => Self::FirstLast,
            "first-two-last-two" => Self::FirstTwoLastTwo,
            _ => {
                if let Some(k) = s.strip_prefix("up-to-") {
                    let k: usize = k.parse().map_err(|_| bad())?;
                    if k == 0 {
                        return Err(bad());
                    }
                    Self::UpTo(k)
                } else if let Some(list) = s.strip_prefix("layers:") {
                    let ls = list.split(',').map(|x| x.trim().parse::<usize>()).collect::<Result<Vec<_>, _>>();
                    Self::Layers(ls.map_err(|_| bad())?)
                } else {
                    return Err(bad());
                }
            }
        })
    }
}

impl TryFrom<String> for LayerSelector {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<LayerSelector> for String {
    fn from(s: LayerSelector) -> Self {
        s.to_string()
    }
}

/// Semi-frozen training: everything trains during warmup, afterwards only
/// the selected encoder/decoder blocks plus the prompt generator.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FreezeSchedule {
    /// Counted in optimizer steps.
    pub warmup_steps: usize,
    pub encoder: LayerSelector,
    pub decoder: LayerSelector,
    /// Keep token and position embeddings trainable after warmup.
    pub embeddings: bool,
}

impl Default for FreezeSchedule {
    fn default() -> Self {
        Self { warmup_steps: 1000, encoder: LayerSelector::FirstLast, decoder: LayerSelector::FirstLast, embeddings: false }
    }
}

enum Group {
    EncoderLayer(usize),
    DecoderLayer(usize),
    Prompter,
    Embedding,
    Other,
}

fn group(name: &str) -> Group {
    let layer = |rest: &str| rest.split('.').next().and_then(|i| i.parse().ok());
    if let Some(i) = name.strip_prefix("encoder.layers.").and_then(layer) {
        Group::EncoderLayer(i)
    } else if let Some(i) = name.strip_prefix("decoder.layers.").and_then(layer) {
        Group::DecoderLayer(i)
    } else if name.starts_with("prompter.") {
        Group::Prompter
    } else if name == "shared.embedding" || name.ends_with(".position") {
        Group::Embedding
    } else {
        Group::Other
    }
}

/// Trainability mask over `model.params` at optimizer step `step`.
pub fn resolve_freeze<F: Real>(schedule: &FreezeSchedule, model: &Model<F>, step: usize) -> Result<Vec<bool>> {
    let c = &model.config;
    let enc = schedule.encoder.resolve(c.enc_layers);
    let dec = schedule.decoder.resolve(c.dec_layers);
    for (set, sel, stack) in [(&enc, &schedule.encoder, "encoder"), (&dec, &schedule.decoder, "decoder")] {
        if set.is_empty() {
            return Err(Error::Config(format!("{stack} selector {sel} matches no layer")));
        }
    }
    if step < schedule.warmup_steps {
        return Ok(vec![true; model.params.len()]);
    }
    Ok(model
        .params
        .names()
        .iter()
        .map(|n| match group(n) {
            Group::EncoderLayer(i) => enc.contains(&i),
            Group::DecoderLayer(i) => dec.contains(&i),
            Group::Prompter => true,
            Group::Embedding => schedule.embeddings,
            Group::Other => false,
        })
        .collect())
}

/// Names of the trainable parameters at `step`.
pub fn trainable_names<F: Real>(schedule: &FreezeSchedule, model: &Model<F>, step: usize) -> Result<BTreeSet<String>> {
    let mask = resolve_freeze(schedule, model, step)?;
    Ok(model.params.names().iter().zip(mask).filter(|(_, m)| *m).map(|(n, _)| n.clone()).collect())
}
