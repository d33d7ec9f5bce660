//! Checkpoint files.
//!
//! Layout: `ASVITCKP` magic, u64 LE header length, a JSON header, then the
//! parameters as little-endian f64 in manifest order.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::tensor::Tensor;

use super::{ModelConfig, ModelError, ModelParams};

const MAGIC: &[u8; 8] = b"ASVITCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestItem {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset of the first value, counted in f64 elements.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub config: ModelConfig,
    pub manifest: Vec<ManifestItem>,
    /// Hex SHA-256 of the payload bytes.
    pub sha256: String,
    /// Caller-defined extras such as normalization statistics.
    #[serde(default)]
    pub metadata: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub metadata: serde_json::Value,
}

impl Checkpoint {
    /// Fails with the first tensor whose name or shape differs from what
    /// `cfg` requires.
    pub fn check_against(&self, cfg: &ModelConfig) -> Result<(), ModelError> {
        self.params.check(cfg)
    }
}

pub fn encode_checkpoint(
    params: &ModelParams,
    cfg: &ModelConfig,
    metadata: &serde_json::Value,
) -> Result<Vec<u8>, ModelError> {
    params.check(cfg)?;
    let mut payload = Vec::with_capacity(params.numel() * 8);
    let mut manifest = Vec::with_capacity(params.len());
    let mut offset = 0;
    for (name, t) in params.iter() {
        manifest.push(ManifestItem {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset,
        });
        offset += t.numel();
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        config: cfg.clone(),
        manifest,
        sha256: hex::encode(Sha256::digest(&payload)),
        metadata: metadata.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, ModelError> {
    let bad = |m: String| ModelError::Checkpoint(m);
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file".into()));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    if header_len > body.len() {
        return Err(bad("truncated header".into()));
    }
    let header: CheckpointHeader =
        serde_json::from_slice(&body[..header_len]).map_err(|e| bad(format!("header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {}", header.format_version)));
    }
    let payload = &body[header_len..];
    if hex::encode(Sha256::digest(payload)) != header.sha256 {
        return Err(bad("payload hash does not match the header".into()));
    }
    if payload.len() % 8 != 0 {
        return Err(bad("payload is not a whole number of f64 values".into()));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut named = Vec::with_capacity(header.manifest.len());
    for item in &header.manifest {
        let n: usize = item.shape.iter().product();
        let slice = values
            .get(item.offset..item.offset + n)
            .ok_or_else(|| bad(format!("tensor {} runs past the payload", item.name)))?;
        named.push((item.name.clone(), Tensor::new(item.shape.clone(), slice.to_vec())?));
    }
    let params = ModelParams::from_named(&header.config, named)?;
    Ok(Checkpoint {
        config: header.config,
        params,
        metadata: header.metadata,
    })
}

pub fn save_checkpoint(
    path: &Path,
    params: &ModelParams,
    cfg: &ModelConfig,
    metadata: &serde_json::Value,
) -> Result<(), ModelError> {
    let bytes = encode_checkpoint(params, cfg, metadata)?;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| ModelError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    std::fs::write(path, bytes).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    let bytes = std::fs::read(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_checkpoint(&bytes)
}
