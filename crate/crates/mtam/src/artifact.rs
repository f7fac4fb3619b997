//! On-disk form of a preprocessed dataset.
//!
//! A directory holding `manifest.json`, `vocab.json` and little-endian
//! arrays: `sequences.bin` (per user: `u32` length, then `u32` item, `u32`
//! category, `f64` timestamp per behavior) and `train.bin` / `test.bin` /
//! `valid.bin` (`u32` user, `u32` prefix length per pair).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use mtam_core::data::{
    Behavior, DatasetSplit, DatasetStats, ExampleRef, IndexedSequences, Vocabularies, Vocabulary,
};

use crate::error::{CliError, Result};

pub const FORMAT: &str = "mtam-dataset";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsRecord {
    pub users: usize,
    pub items: usize,
    pub categories: usize,
    pub events: usize,
    pub avg_behaviors: f64,
    pub density: f64,
}

impl From<DatasetStats> for StatsRecord {
    fn from(s: DatasetStats) -> Self {
        StatsRecord {
            users: s.users,
            items: s.items,
            categories: s.categories,
            events: s.events,
            avg_behaviors: s.avg_behaviors,
            density: s.density,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub stats: StatsRecord,
    pub train_pairs: usize,
    pub test_pairs: usize,
    pub valid_pairs: usize,
    /// Hex SHA-256 of each array file, keyed by file name.
    pub digests: Vec<(String, String)>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    users: Vec<String>,
    items: Vec<String>,
    categories: Vec<String>,
}

fn encode_sequences(seqs: &[Vec<Behavior>]) -> Vec<u8> {
    let mut out = Vec::new();
    for seq in &seqs[1..] {
        out.extend_from_slice(&(seq.len() as u32).to_le_bytes());
        for b in seq {
            out.extend_from_slice(&b.item.to_le_bytes());
            out.extend_from_slice(&b.category.to_le_bytes());
            out.extend_from_slice(&b.timestamp.to_le_bytes());
        }
    }
    out
}

fn encode_pairs(pairs: &[ExampleRef]) -> Vec<u8> {
    let mut out = Vec::with_capacity(pairs.len() * 8);
    for p in pairs {
        out.extend_from_slice(&p.user.to_le_bytes());
        out.extend_from_slice(&p.prefix_len.to_le_bytes());
    }
    out
}

/// Little-endian cursor over a byte buffer.
pub(crate) struct Cursor<'a> {
    bytes: &'a [u8],
    what: &'a str,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(bytes: &'a [u8], what: &'a str) -> Self {
        Cursor { bytes, what }
    }

    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        if self.bytes.len() < N {
            return Err(CliError::Data(format!("{} is truncated", self.what)));
        }
        let (head, rest) = self.bytes.split_at(N);
        self.bytes = rest;
        Ok(head.try_into().expect("length checked"))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        self.take::<4>().map(u32::from_le_bytes)
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        self.take::<8>().map(f64::from_le_bytes)
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }
}

fn decode_sequences(bytes: &[u8], users: usize) -> Result<Vec<Vec<Behavior>>> {
    let mut c = Cursor::new(bytes, "sequences.bin");
    let mut seqs = vec![Vec::new()];
    for _ in 0..users {
        let n = c.u32()? as usize;
        let mut seq = Vec::with_capacity(n);
        for _ in 0..n {
            seq.push(Behavior {
                item: c.u32()?,
                category: c.u32()?,
                timestamp: c.f64()?,
            });
        }
        seqs.push(seq);
    }
    if !c.is_empty() {
        return Err(CliError::Data("sequences.bin has trailing bytes".into()));
    }
    Ok(seqs)
}

fn decode_pairs(bytes: &[u8], what: &str) -> Result<Vec<ExampleRef>> {
    let mut c = Cursor::new(bytes, what);
    let mut out = Vec::with_capacity(bytes.len() / 8);
    while !c.is_empty() {
        out.push(ExampleRef {
            user: c.u32()?,
            prefix_len: c.u32()?,
        });
    }
    Ok(out)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(CliError::io(path))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(CliError::io(path))
}

pub fn write_split(dir: &Path, split: &DatasetSplit) -> Result<DatasetManifest> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    let files = [
        ("sequences.bin", encode_sequences(&split.data.sequences)),
        ("train.bin", encode_pairs(&split.train)),
        ("test.bin", encode_pairs(&split.test)),
        ("valid.bin", encode_pairs(&split.valid)),
    ];
    let mut digests = Vec::new();
    for (name, bytes) in &files {
        write(&dir.join(name), bytes)?;
        digests.push((name.to_string(), sha256_hex(bytes)));
    }
    let v = &split.data.vocab;
    let vocab = VocabFile {
        users: v.users.externals().to_vec(),
        items: v.items.externals().to_vec(),
        categories: v.categories.externals().to_vec(),
    };
    write(
        &dir.join("vocab.json"),
        &serde_json::to_vec(&vocab).expect("vocabulary serializes"),
    )?;
    let manifest = DatasetManifest {
        format: FORMAT.into(),
        version: VERSION,
        stats: split.stats().into(),
        train_pairs: split.train.len(),
        test_pairs: split.test.len(),
        valid_pairs: split.valid.len(),
        digests,
    };
    write(
        &dir.join("manifest.json"),
        &serde_json::to_vec_pretty(&manifest).expect("manifest serializes"),
    )?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join("manifest.json");
    let m: DatasetManifest = serde_json::from_slice(&read(&path)?)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if m.format != FORMAT || m.version != VERSION {
        return Err(CliError::Compatibility(format!(
            "{} is {} v{}, expected {FORMAT} v{VERSION}",
            path.display(),
            m.format,
            m.version
        )));
    }
    Ok(m)
}

pub fn read_split(dir: &Path) -> Result<DatasetSplit> {
    let manifest = read_manifest(dir)?;
    let load = |name: &str| -> Result<Vec<u8>> {
        let bytes = read(&dir.join(name))?;
        let expected = manifest
            .digests
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, d)| d.as_str());
        if expected != Some(sha256_hex(&bytes).as_str()) {
            return Err(CliError::Data(format!("{name} does not match its digest")));
        }
        Ok(bytes)
    };
    let vocab_path = dir.join("vocab.json");
    let vocab: VocabFile = serde_json::from_slice(&read(&vocab_path)?)
        .map_err(|e| CliError::Data(format!("{}: {e}", vocab_path.display())))?;
    let vocab = Vocabularies {
        users: Vocabulary::from_external(vocab.users)?,
        items: Vocabulary::from_external(vocab.items)?,
        categories: Vocabulary::from_external(vocab.categories)?,
    };
    let sequences = decode_sequences(&load("sequences.bin")?, vocab.users.len())?;
    let split = DatasetSplit {
        data: IndexedSequences { sequences, vocab },
        train: decode_pairs(&load("train.bin")?, "train.bin")?,
        test: decode_pairs(&load("test.bin")?, "test.bin")?,
        valid: decode_pairs(&load("valid.bin")?, "valid.bin")?,
    };
    validate(&split)?;
    Ok(split)
}

fn validate(split: &DatasetSplit) -> Result<()> {
    let n_items = split.n_items() as u32;
    let n_cats = split.n_categories() as u32;
    for seq in &split.data.sequences {
        for b in seq {
            if b.item == 0 || b.item >= n_items || b.category == 0 || b.category >= n_cats {
                return Err(CliError::Data("behavior id outside the vocabulary".into()));
            }
        }
    }
    for e in split.train.iter().chain(&split.test).chain(&split.valid) {
        let len = split
            .data
            .sequences
            .get(e.user as usize)
            .map_or(0, Vec::len);
        if e.user == 0 || e.prefix_len == 0 || e.prefix_len as usize >= len {
            return Err(CliError::Data(format!(
                "pair (user {}, prefix {}) is out of range",
                e.user, e.prefix_len
            )));
        }
    }
    Ok(())
}
