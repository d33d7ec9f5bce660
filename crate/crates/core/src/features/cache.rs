//! On-disk spectrogram cache: one file per instance.
//!
//! Layout: `ASVF` magic, u32 version, 32-byte config hash, u32 mel bins,
//! u32 frames, then `mel_bins · frames` little-endian f32 values row-major.

use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{FeatureError, Spectrogram};

const MAGIC: &[u8; 4] = b"ASVF";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 32 + 4 + 4;

/// SHA-256 of the JSON encoding of any serializable configuration.
pub fn config_hash<T: Serialize>(config: &T) -> [u8; 32] {
    let json = serde_json::to_vec(config).expect("configuration serializes to JSON");
    Sha256::digest(&json).into()
}

pub fn encode_record(spec: &Spectrogram, hash: &[u8; 32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * spec.values.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(hash);
    out.extend_from_slice(&(spec.mel_bins as u32).to_le_bytes());
    out.extend_from_slice(&(spec.frames as u32).to_le_bytes());
    for &v in &spec.values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

/// Decodes a record. Returns `Ok(None)` when the record was written under a
/// different configuration hash.
pub fn decode_record(bytes: &[u8], hash: &[u8; 32]) -> Result<Option<Spectrogram>, FeatureError> {
    let bad = |reason: &str| FeatureError::Cache(reason.to_string());
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(bad("not a feature cache record"));
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    if u32_at(4) != VERSION {
        return Err(bad("unsupported cache version"));
    }
    if &bytes[8..40] != hash {
        return Ok(None);
    }
    let (mel_bins, frames) = (u32_at(40) as usize, u32_at(44) as usize);
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != 4 * mel_bins * frames {
        return Err(bad("payload length does not match the header dimensions"));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Spectrogram::new(mel_bins, frames, values).map(Some)
}

pub fn write_record(path: &Path, spec: &Spectrogram, hash: &[u8; 32]) -> Result<(), FeatureError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| FeatureError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    std::fs::write(path, encode_record(spec, hash)).map_err(|source| FeatureError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a cached record; a missing file or a stale hash yields `None`.
pub fn read_record(path: &Path, hash: &[u8; 32]) -> Result<Option<Spectrogram>, FeatureError> {
    match std::fs::read(path) {
        Ok(bytes) => decode_record(&bytes, hash),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(source) => Err(FeatureError::Io {
            path: path.to_path_buf(),
            source,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureConfig;

    #[test]
    fn round_trip_and_invalidation() {
        let spec = Spectrogram::new(16, 20, (0..320).map(|i| i as f64 * 0.25 - 7.0).collect()).unwrap();
        let cfg = FeatureConfig::default();
        let hash = config_hash(&cfg);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a/b.feat");
        write_record(&path, &spec, &hash).unwrap();
        assert_eq!(read_record(&path, &hash).unwrap(), Some(spec));

        let other = config_hash(&FeatureConfig {
            hop_ms: 20.0,
            ..cfg
        });
        assert_ne!(hash, other);
        assert_eq!(read_record(&path, &other).unwrap(), None);
        assert_eq!(read_record(&dir.path().join("missing"), &hash).unwrap(), None);
    }

    #[test]
    fn truncated_record_is_an_error() {
        let spec = Spectrogram::new(16, 16, vec![0.0; 256]).unwrap();
        let hash = [7u8; 32];
        let bytes = encode_record(&spec, &hash);
        assert!(decode_record(&bytes[..bytes.len() - 1], &hash).is_err());
        assert!(decode_record(b"nope", &hash).is_err());
    }
}
