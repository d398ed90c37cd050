//! Binary checkpoint: `PRMT`, u32 version, u64 manifest length, JSON
//! manifest, then every parameter as little-endian f32 in manifest order.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Vocab;
use crate::error::{shape_err, Error, Result};
use crate::tensor::{ParamSet, Tensor};
use crate::transformer::{layout, Model, ModelConfig};

pub const MAGIC: &[u8; 4] = b"PRMT";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub config: ModelConfig,
    #[serde(default)]
    pub vocab: Option<Vocab>,
    pub tensors: Vec<TensorEntry>,
    pub payload_bytes: usize,
    /// Hex SHA-256 of the payload.
    pub payload_sha256: String,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub vocab: Option<Vocab>,
    pub metadata: serde_json::Value,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn encode_checkpoint(model: &Model<f32>, vocab: Option<&Vocab>, metadata: serde_json::Value) -> Vec<u8> {
    let mut payload = Vec::with_capacity(model.params.total_numel() * 4);
    let mut tensors = Vec::with_capacity(model.params.len());
    for (_, name, t) in model.params.iter() {
        tensors.push(TensorEntry { name: name.to_string(), shape: t.shape().to_vec(), offset: payload.len() });
        for x in t.data() {
            payload.extend_from_slice(&x.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        config: model.config.clone(),
        vocab: vocab.cloned(),
        tensors,
        payload_bytes: payload.len(),
        payload_sha256: hex(&Sha256::digest(&payload)),
        metadata,
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut out = Vec::with_capacity(HEADER_LEN + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    out
}

/// Splits a checkpoint into its manifest and payload without validating the
/// payload.
pub fn read_manifest(bytes: &[u8]) -> Result<(Manifest, &[u8])> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(Error::Integrity("missing PRMT header".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Version { found: version, expected: FORMAT_VERSION });
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let end = HEADER_LEN
        .checked_add(len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Integrity(format!("manifest length {len} exceeds file")))?;
    let manifest: Manifest = serde_json::from_slice(&bytes[HEADER_LEN..end])
        .map_err(|e| Error::Integrity(format!("unreadable manifest: {e}")))?;
    if manifest.format_version != version {
        return Err(Error::Version { found: manifest.format_version, expected: FORMAT_VERSION });
    }
    Ok((manifest, &bytes[end..]))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let (manifest, payload) = read_manifest(bytes)?;
    let config = manifest.config;
    config.validate()?;
    if let Some(v) = &manifest.vocab {
        if v.len() != config.vocab_size {
            return Err(Error::Config(format!(
                "checkpoint vocabulary has {} entries, config says {}",
                v.len(),
                config.vocab_size
            )));
        }
    }
    let expected = layout(&config);
    if expected.len() != manifest.tensors.len() {
        return Err(shape_err!("manifest lists {} tensors, config needs {}", manifest.tensors.len(), expected.len()));
    }
    let mut offset = 0usize;
    for ((name, shape, _), entry) in expected.iter().zip(&manifest.tensors) {
        if *name != entry.name || *shape != entry.shape {
            return Err(shape_err!(
                "manifest entry {} {:?} does not match {} {:?}",
                entry.name,
                entry.shape,
                name,
                shape
            ));
        }
        if entry.offset != offset {
            return Err(Error::Integrity(format!("tensor {} at offset {}, expected {offset}", entry.name, entry.offset)));
        }
        offset += shape.iter().product::<usize>() * 4;
    }
    if manifest.payload_bytes != offset || payload.len() != offset {
        return Err(Error::Integrity(format!(
            "payload has {} bytes, manifest says {}, shapes need {offset}",
            payload.len(),
            manifest.payload_bytes
        )));
    }
    if hex(&Sha256::digest(payload)) != manifest.payload_sha256 {
        return Err(Error::Integrity("payload hash mismatch".into()));
    }
    let mut params = ParamSet::new();
    for entry in &manifest.tensors {
        let n: usize = entry.shape.iter().product();
        let data = payload[entry.offset..entry.offset + n * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        params.register(entry.name.clone(), Tensor::new(entry.shape.clone(), data)?)?;
    }
    Ok(Checkpoint { model: Model::from_params(config, params)?, vocab: manifest.vocab, metadata: manifest.metadata })
}

pub fn save_checkpoint(
    path: &Path,
    model: &Model<f32>,
    vocab: Option<&Vocab>,
    metadata: serde_json::Value,
) -> Result<()> {
    crate::io::write_atomic(path, &encode_checkpoint(model, vocab, metadata))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
