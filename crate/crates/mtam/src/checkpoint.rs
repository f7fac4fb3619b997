//! Checkpoint files.
//!
//! Layout: the 8-byte magic `MTAMCKPT`, a `u32` little-endian manifest
//! length, the JSON manifest, then every tensor's values as little-endian
//! `f64` in directory order. The manifest carries the SHA-256 of that
//! payload, which is checked before any tensor is decoded.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use mtam_core::data::Vocabulary;
use mtam_core::model::ModelParams;
use mtam_core::{ParamStore, Tensor};

use crate::artifact::{sha256_hex, Cursor};
use crate::config::{ModelConfigRecord, TrainConfigRecord};
use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 8] = b"MTAMCKPT";
pub const VERSION: u32 = 1;
const DTYPE: &str = "f64le";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub padding_rows: usize,
    /// Byte offset into the payload.
    pub offset: usize,
    pub dtype: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    pub model: ModelConfigRecord,
    pub train: Option<TrainConfigRecord>,
    /// External item ids in internal order, padding excluded.
    pub items: Vec<String>,
    pub categories: Vec<String>,
    pub tensors: Vec<TensorEntry>,
    pub payload_sha256: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub train: Option<TrainConfigRecord>,
    pub items: Vocabulary,
    pub categories: Vocabulary,
}

impl Checkpoint {
    /// Whether this checkpoint was trained over exactly these vocabularies.
    pub fn check_vocab(&self, items: &Vocabulary, categories: &Vocabulary) -> Result<()> {
        if self.items != *items || self.categories != *categories {
            return Err(CliError::Compatibility(format!(
                "checkpoint vocabulary ({} items, {} categories) does not match the dataset \
                 ({} items, {} categories)",
                self.items.len(),
                self.categories.len(),
                items.len(),
                categories.len()
            )));
        }
        Ok(())
    }
}

pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let store = &ckpt.params.store;
    let mut payload = Vec::with_capacity(store.total_values() * 8);
    let mut tensors = Vec::with_capacity(store.len());
    for (id, name, t) in store.iter() {
        tensors.push(TensorEntry {
            name: name.to_string(),
            rows: t.rows(),
            cols: t.cols(),
            padding_rows: store.padding_rows(id),
            offset: payload.len(),
            dtype: DTYPE.into(),
        });
        for v in t.values() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = CheckpointManifest {
        version: VERSION,
        model: (&ckpt.params.config).into(),
        train: ckpt.train.clone(),
        items: ckpt.items.externals().to_vec(),
        categories: ckpt.categories.externals().to_vec(),
        tensors,
        payload_sha256: sha256_hex(&payload),
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut out = Vec::with_capacity(12 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    out
}

fn incompatible(msg: impl Into<String>) -> CliError {
    CliError::Compatibility(msg.into())
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(incompatible("not a checkpoint file"));
    }
    let len = Cursor::new(&bytes[8..12], "checkpoint header").u32()? as usize;
    let body = &bytes[12..];
    if body.len() < len {
        return Err(incompatible("checkpoint manifest is truncated"));
    }
    let (json, payload) = body.split_at(len);
    let manifest: CheckpointManifest = serde_json::from_slice(json)
        .map_err(|e| incompatible(format!("unreadable checkpoint manifest: {e}")))?;
    if manifest.version != VERSION {
        return Err(incompatible(format!(
            "checkpoint version {} is not supported (expected {VERSION})",
            manifest.version
        )));
    }
    if sha256_hex(payload) != manifest.payload_sha256 {
        return Err(incompatible("checkpoint payload does not match its digest"));
    }

    let mut store = ParamStore::new();
    for e in &manifest.tensors {
        let n = e.rows * e.cols;
        let end = e.offset + 8 * n;
        if e.dtype != DTYPE || end > payload.len() {
            return Err(incompatible(format!("tensor {} is malformed", e.name)));
        }
        let values = payload[e.offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        store.add_padded(
            &e.name,
            Tensor::new(e.rows, e.cols, values)?,
            e.padding_rows,
        );
    }
    let config = manifest.model.to_config()?;
    let params = ModelParams::with_store(config, store)
        .map_err(|e| incompatible(format!("checkpoint does not fit its config: {e}")))?;
    let vocab =
        |ids: Vec<String>| Vocabulary::from_external(ids).map_err(|e| incompatible(e.to_string()));
    let ckpt = Checkpoint {
        params,
        train: manifest.train,
        items: vocab(manifest.items)?,
        categories: vocab(manifest.categories)?,
    };
    if ckpt.items.table_rows() != ckpt.params.config.n_items
        || ckpt.categories.table_rows() != ckpt.params.config.n_categories
    {
        return Err(incompatible(
            "checkpoint vocabulary disagrees with its config",
        ));
    }
    Ok(ckpt)
}

/// Writes `ckpt` and returns the hex digest of the whole file.
pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<String> {
    let bytes = encode(ckpt);
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    }
    fs::write(path, &bytes).map_err(CliError::io(path))?;
    Ok(sha256_hex(&bytes))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    decode(&fs::read(path).map_err(CliError::io(path))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use mtam_core::model::{ModelConfig, Variant};

    fn ckpt(variant: Variant) -> Checkpoint {
        let items = Vocabulary::from_external(["a", "b", "c"].map(String::from)).unwrap();
        let categories = Vocabulary::from_external(["x"].map(String::from)).unwrap();
        let mut cfg = ModelConfig::new(items.table_rows(), categories.table_rows());
        cfg.d = 3;
        cfg.max_len = 4;
        cfg.capacity = 2;
        cfg.hops = 2;
        cfg.variant = variant;
        Checkpoint {
            params: ModelParams::init(cfg, 11).unwrap(),
            train: None,
            items,
            categories,
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        for v in Variant::ALL {
            let c = ckpt(v);
            let back = decode(&encode(&c)).unwrap();
            assert_eq!(back, c, "{v}");
        }
    }

    #[test]
    fn flipped_payload_byte_is_rejected() {
        let mut bytes = encode(&ckpt(Variant::Mtam));
        let last = bytes.len() - 3;
        bytes[last] ^= 0x40;
        let err = decode(&bytes).unwrap_err();
        assert!(err.to_string().contains("digest"), "{err}");
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn wrong_magic_and_version_are_incompatible() {
        let bytes = encode(&ckpt(Variant::Gru));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(decode(&bad).unwrap_err().exit_code(), 4);
        let key = b"\"version\":1";
        let at = bytes.windows(key.len()).position(|w| w == key).unwrap();
        let mut bad = bytes;
        bad[at + key.len() - 1] = b'7';
        let err = decode(&bad).unwrap_err();
        assert!(err.to_string().contains("version 7"), "{err}");
    }

    #[test]
    fn vocab_mismatch_is_incompatible() {
        let c = ckpt(Variant::Tgru);
        let other = Vocabulary::from_external(["a", "b"].map(String::from)).unwrap();
        assert_eq!(
            c.check_vocab(&other, &c.categories)
                .unwrap_err()
                .exit_code(),
            4
        );
        c.check_vocab(&c.items, &c.categories).unwrap();
    }
}
