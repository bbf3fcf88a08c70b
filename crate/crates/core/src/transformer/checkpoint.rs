//! Binary checkpoint format.
//!
//! Layout: the 8-byte magic `SPCKPT1\0`, a little-endian `u64` header length,
//! the UTF-8 JSON header, zero padding to an 8-byte boundary, then the tensor
//! payloads as row-major little-endian `f32`. Tensor offsets are relative to
//! the start of the payload section; every payload starts on an 8-byte
//! boundary of the file.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

use super::config::ModelConfig;
use super::weights::{tensor_manifest, WeightSet};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SPCKPT1\0";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    pub tensors: Vec<ManifestEntry>,
}

fn align8(n: u64) -> u64 {
    n.div_ceil(8) * 8
}

/// Serialize to an in-memory buffer.
pub fn write_checkpoint(config: &ModelConfig, weights: &WeightSet) -> Result<Vec<u8>> {
    config.validate()?;
    let named = weights.named_tensors();
    let expected = tensor_manifest(config);
    if expected.len() != named.len() {
        return Err(Error::MalformedHeader(format!(
            "weights hold {} tensors, config implies {}",
            named.len(),
            expected.len()
        )));
    }
    let mut tensors = Vec::with_capacity(named.len());
    let mut offset = 0u64;
    for ((name, t), (want_name, want_shape)) in named.iter().zip(&expected) {
        if name != want_name || t.shape() != *want_shape {
            return Err(Error::CheckpointShape {
                name: name.clone(),
                expected: *want_shape,
                got: t.shape(),
            });
        }
        tensors.push(ManifestEntry {
            name: name.clone(),
            rows: t.rows(),
            cols: t.cols(),
            offset,
        });
        offset = align8(offset + 4 * t.data().len() as u64);
    }
    let header = serde_json::to_vec(&CheckpointHeader {
        config: config.clone(),
        tensors,
    })?;
    let data_start = align8(16 + header.len() as u64);
    let mut out = Vec::with_capacity((data_start + offset) as usize);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.resize(data_start as usize, 0);
    for (_, t) in &named {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.resize(align8(out.len() as u64) as usize, 0);
    }
    Ok(out)
}

pub fn save_checkpoint(config: &ModelConfig, weights: &WeightSet, path: impl AsRef<Path>) -> Result<()> {
    let bytes = write_checkpoint(config, weights)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    Ok(())
}

/// Parse a checkpoint from bytes.
pub fn read_checkpoint(bytes: &[u8]) -> Result<(ModelConfig, WeightSet)> {
    if bytes.len() < 8 {
        return Err(Error::Truncated(format!("{} bytes, shorter than the magic", bytes.len())));
    }
    if &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < 16 {
        return Err(Error::Truncated("missing header length".into()));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let header_end = 16u64
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len() as u64)
        .ok_or_else(|| Error::Truncated(format!("header of {header_len} bytes does not fit")))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[16..header_end as usize])
        .map_err(|e| Error::MalformedHeader(e.to_string()))?;
    let config = header.config;
    config.validate()?;
    let data_start = align8(header_end);
    let expected = tensor_manifest(&config);
    if expected.len() != header.tensors.len() {
        return Err(Error::MalformedHeader(format!(
            "config implies {} tensors, manifest lists {}",
            expected.len(),
            header.tensors.len()
        )));
    }
    let mut tensors = Vec::with_capacity(expected.len());
    for (entry, (want_name, want_shape)) in header.tensors.iter().zip(&expected) {
        if &entry.name != want_name {
            return Err(Error::MalformedHeader(format!(
                "expected tensor `{want_name}`, found `{}`",
                entry.name
            )));
        }
        if (entry.rows, entry.cols) != *want_shape {
            return Err(Error::CheckpointShape {
                name: entry.name.clone(),
                expected: *want_shape,
                got: (entry.rows, entry.cols),
            });
        }
        if entry.offset % 8 != 0 {
            return Err(Error::MalformedHeader(format!("offset of `{}` is not 8-byte aligned", entry.name)));
        }
        let n = entry.rows * entry.cols;
        let start = data_start + entry.offset;
        let end = start + 4 * n as u64;
        if end > bytes.len() as u64 {
            return Err(Error::Truncated(format!(
                "tensor `{}` needs bytes {start}..{end}, file has {}",
                entry.name,
                bytes.len()
            )));
        }
        let data = bytes[start as usize..end as usize]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        tensors.push((entry.name.clone(), Tensor::from_vec(entry.rows, entry.cols, data)?));
    }
    let weights = WeightSet::from_manifest_order(&config, tensors)?;
    Ok((config, weights))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelConfig, WeightSet)> {
    read_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transformer::config::{MlpActivation, NormKind, Preset};
    use crate::transformer::weights::init_weights;

    fn tiny() -> (ModelConfig, WeightSet) {
        let c = Preset::Tiny.config();
        let w = init_weights(&c, 21).unwrap();
        (c, w)
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let (c, w) = tiny();
        let bytes = write_checkpoint(&c, &w).unwrap();
        let (c2, w2) = read_checkpoint(&bytes).unwrap();
        assert_eq!(c, c2);
        assert_eq!(w, w2);
        assert_eq!(write_checkpoint(&c2, &w2).unwrap(), bytes);
    }

    #[test]
    fn roundtrip_through_file() {
        let c = ModelConfig {
            norm_kind: NormKind::Rmsnorm,
            activation: MlpActivation::Swiglu,
            weight_tying: false,
            ..Preset::Tiny.config()
        };
        let w = init_weights(&c, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.spckpt");
        save_checkpoint(&c, &w, &p).unwrap();
        let (c2, w2) = load_checkpoint(&p).unwrap();
        assert_eq!((c, w), (c2, w2));
    }

    #[test]
    fn payloads_are_aligned() {
        let (c, w) = tiny();
        let bytes = write_checkpoint(&c, &w).unwrap();
        let hl = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let header: CheckpointHeader = serde_json::from_slice(&bytes[16..16 + hl as usize]).unwrap();
        let start = align8(16 + hl);
        for e in &header.tensors {
            assert_eq!((start + e.offset) % 8, 0);
        }
        assert_eq!(bytes.len() % 8, 0);
    }

    #[test]
    fn wrong_magic() {
        let (c, w) = tiny();
        let mut bytes = write_checkpoint(&c, &w).unwrap();
        bytes[0] = b'X';
        assert!(matches!(read_checkpoint(&bytes), Err(Error::BadMagic)));
    }

    #[test]
    fn truncated_payload() {
        let (c, w) = tiny();
        let bytes = write_checkpoint(&c, &w).unwrap();
        let cut = &bytes[..bytes.len() - 100];
        assert!(matches!(read_checkpoint(cut), Err(Error::Truncated(_))));
        assert!(matches!(read_checkpoint(&bytes[..5]), Err(Error::Truncated(_))));
        assert!(matches!(read_checkpoint(&bytes[..40]), Err(Error::Truncated(_))));
    }

    #[test]
    fn header_shape_mismatch() {
        let c = ModelConfig {
            d_model: 768,
            n_heads: 12,
            d_mlp: 768,
            n_layers: 1,
            vocab_size: 4,
            max_seq: 8,
            ..Preset::Tiny.config()
        };
        let w = init_weights(&c, 1).unwrap();
        let bytes = write_checkpoint(&c, &w).unwrap();
        let hl = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let mut header: CheckpointHeader = serde_json::from_slice(&bytes[16..16 + hl]).unwrap();
        let q = header.tensors.iter_mut().find(|e| e.name == "layers.0.attn.w_q").unwrap();
        q.cols = 767;
        let new_header = serde_json::to_vec(&header).unwrap();
        let mut forged = CHECKPOINT_MAGIC.to_vec();
        forged.extend_from_slice(&(new_header.len() as u64).to_le_bytes());
        forged.extend_from_slice(&new_header);
        forged.resize(align8(forged.len() as u64) as usize, 0);
        forged.extend_from_slice(&bytes[align8(16 + hl as u64) as usize..]);
        assert!(matches!(
            read_checkpoint(&forged),
            Err(Error::CheckpointShape { expected: (768, 768), got: (768, 767), .. })
        ));
    }
}
