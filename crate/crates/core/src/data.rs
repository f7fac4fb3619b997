//! Event logs, frequency filtering, dense indexing and sequence splitting.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// One interaction after indexing. Ids are dense; 0 is padding.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Behavior {
    pub item: u32,
    pub category: u32,
    /// Seconds.
    pub timestamp: f64,
}

/// Raw interaction with external identifiers.
#[derive(Clone, Debug, PartialEq)]
pub struct Event {
    pub user: String,
    pub item: String,
    pub category: String,
    pub timestamp: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EventLog {
    pub events: Vec<Event>,
}

impl EventLog {
    pub fn new(events: Vec<Event>) -> Self {
        EventLog { events }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Keeps `round(fraction · users)` users chosen by a seeded shuffle.
    pub fn sample_users<R: Rng>(&self, fraction: f64, rng: &mut R) -> Result<EventLog> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::data(format!(
                "user sample fraction must be in (0, 1], got {fraction}"
            )));
        }
        let mut users: Vec<&str> = Vec::new();
        let mut seen = BTreeMap::new();
        for e in &self.events {
            if seen.insert(e.user.as_str(), ()).is_none() {
                users.push(e.user.as_str());
            }
        }
        users.shuffle(rng);
        let keep = libm::round(fraction * users.len() as f64) as usize;
        let kept: BTreeMap<&str, ()> = users[..keep].iter().map(|u| (*u, ())).collect();
        Ok(EventLog {
            events: self
                .events
                .iter()
                .filter(|e| kept.contains_key(e.user.as_str()))
                .cloned()
                .collect(),
        })
    }
}

/// Bidirectional map between external ids and dense internal ids.
///
/// Internal id 0 is reserved for padding and has no external id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Vocabulary {
    external: Vec<String>,
    index: BTreeMap<String, u32>,
}

pub const PADDING_LABEL: &str = "<pad>";

impl Vocabulary {
    pub fn new() -> Self {
        Vocabulary {
            external: vec![PADDING_LABEL.to_string()],
            index: BTreeMap::new(),
        }
    }

    /// Rebuilds a vocabulary from its external ids, padding excluded.
    pub fn from_external(ids: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut v = Vocabulary::new();
        for id in ids {
            if v.index.contains_key(&id) {
                return Err(Error::data(format!("duplicate external id {id:?}")));
            }
            v.intern(&id);
        }
        Ok(v)
    }

    pub fn intern(&mut self, external: &str) -> u32 {
        if let Some(&id) = self.index.get(external) {
            return id;
        }
        let id = self.external.len() as u32;
        self.external.push(external.to_string());
        self.index.insert(external.to_string(), id);
        id
    }

    pub fn get(&self, external: &str) -> Option<u32> {
        self.index.get(external).copied()
    }

    pub fn external(&self, internal: u32) -> Option<&str> {
        if internal == 0 {
            return None;
        }
        self.external.get(internal as usize).map(String::as_str)
    }

    /// Number of rows an embedding table needs (padding included).
    pub fn table_rows(&self) -> usize {
        self.external.len()
    }

    /// Number of real entries.
    pub fn len(&self) -> usize {
        self.external.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// External ids in internal-id order, padding excluded.
    pub fn externals(&self) -> &[String] {
        &self.external[1..]
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Vocabularies {
    pub users: Vocabulary,
    pub items: Vocabulary,
    pub categories: Vocabulary,
}

/// Per-user, time-sorted behavior sequences. `sequences[u]` belongs to
/// internal user `u`; `sequences[0]` is the empty padding user.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IndexedSequences {
    pub sequences: Vec<Vec<Behavior>>,
    pub vocab: Vocabularies,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub categories: usize,
    pub events: usize,
    pub avg_behaviors: f64,
    /// `events / (users · items)`.
    pub density: f64,
}

impl IndexedSequences {
    pub fn stats(&self) -> DatasetStats {
        let users = self.vocab.users.len();
        let items = self.vocab.items.len();
        let events: usize = self.sequences.iter().map(Vec::len).sum();
        DatasetStats {
            users,
            items,
            categories: self.vocab.categories.len(),
            events,
            avg_behaviors: if users == 0 {
                0.0
            } else {
                events as f64 / users as f64
            },
            density: if users == 0 || items == 0 {
                0.0
            } else {
                events as f64 / (users as f64 * items as f64)
            },
        }
    }
}

/// Drops rare items and short users until both thresholds hold, then sorts
/// each user's events by time (stable) and assigns dense ids.
pub fn filter_and_index(
    log: &EventLog,
    min_user_len: usize,
    min_item_count: usize,
) -> Result<IndexedSequences> {
    if log.is_empty() {
        return Err(Error::data("event log is empty"));
    }
    // Sequences shorter than two cannot yield a test pair.
    let min_user_len = min_user_len.max(2);
    let mut alive = vec![true; log.events.len()];
    loop {
        let mut item_counts: BTreeMap<&str, usize> = BTreeMap::new();
        for (e, _) in log.events.iter().zip(&alive).filter(|(_, a)| **a) {
            *item_counts.entry(e.item.as_str()).or_default() += 1;
        }
        let mut changed = false;
        for (e, a) in log.events.iter().zip(alive.iter_mut()) {
            if *a && item_counts[e.item.as_str()] < min_item_count {
                *a = false;
                changed = true;
            }
        }
        let mut user_counts: BTreeMap<&str, usize> = BTreeMap::new();
        for (e, _) in log.events.iter().zip(&alive).filter(|(_, a)| **a) {
            *user_counts.entry(e.user.as_str()).or_default() += 1;
        }
        for (e, a) in log.events.iter().zip(alive.iter_mut()) {
            if *a && user_counts[e.user.as_str()] < min_user_len {
                *a = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let mut vocab = Vocabularies {
        users: Vocabulary::new(),
        items: Vocabulary::new(),
        categories: Vocabulary::new(),
    };
    let mut sequences: Vec<Vec<Behavior>> = vec![Vec::new()];
    for (e, _) in log.events.iter().zip(&alive).filter(|(_, a)| **a) {
        let u = vocab.users.intern(&e.user) as usize;
        if u == sequences.len() {
            sequences.push(Vec::new());
        }
        sequences[u].push(Behavior {
            item: vocab.items.intern(&e.item),
            category: vocab.categories.intern(&e.category),
            timestamp: e.timestamp,
        });
    }
    if vocab.users.is_empty() {
        return Err(Error::data(
            "no users survive the length and item-frequency filters",
        ));
    }
    for seq in &mut sequences {
        // `sort_by` is stable: equal timestamps keep input order.
        seq.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    }
    Ok(IndexedSequences { sequences, vocab })
}

/// A (prefix, next item) pair, stored as a view into the user's sequence:
/// the prefix is `sequence[..prefix_len]` and the label `sequence[prefix_len]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct ExampleRef {
    pub user: u32,
    pub prefix_len: u32,
}

/// A resolved training or test example.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainingExample<'a> {
    pub user: u32,
    pub prefix: &'a [Behavior],
    pub label_item: u32,
    pub label_time: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetSplit {
    pub data: IndexedSequences,
    pub train: Vec<ExampleRef>,
    pub test: Vec<ExampleRef>,
    /// Held-out training pairs; empty unless [`DatasetSplit::hold_out_validation`] ran.
    pub valid: Vec<ExampleRef>,
}

/// Expands every sequence `(b1..bn)` into training pairs
/// `([b1], b2) .. ([b1..b(n-2)], b(n-1))` and the test pair `([b1..b(n-1)], bn)`.
pub fn split_sequences(data: IndexedSequences) -> Result<DatasetSplit> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (u, seq) in data.sequences.iter().enumerate().skip(1) {
        let n = seq.len();
        if n < 2 {
            return Err(Error::contract(format!(
                "user {u} has {n} behaviors; splitting needs at least 2"
            )));
        }
        for prefix_len in 1..n - 1 {
            train.push(ExampleRef {
                user: u as u32,
                prefix_len: prefix_len as u32,
            });
        }
        test.push(ExampleRef {
            user: u as u32,
            prefix_len: (n - 1) as u32,
        });
    }
    Ok(DatasetSplit {
        data,
        train,
        test,
        valid: Vec::new(),
    })
}

impl DatasetSplit {
    pub fn resolve(&self, ex: ExampleRef) -> TrainingExample<'_> {
        let seq = &self.data.sequences[ex.user as usize];
        let n = ex.prefix_len as usize;
        TrainingExample {
            user: ex.user,
            prefix: &seq[..n],
            label_item: seq[n].item,
            label_time: seq[n].timestamp,
        }
    }

    pub fn train_examples(&self) -> impl Iterator<Item = TrainingExample<'_>> + '_ {
        self.train.iter().map(|e| self.resolve(*e))
    }

    pub fn test_examples(&self) -> impl Iterator<Item = TrainingExample<'_>> + '_ {
        self.test.iter().map(|e| self.resolve(*e))
    }

    /// Item-table rows (padding included).
    pub fn n_items(&self) -> usize {
        self.data.vocab.items.table_rows()
    }

    pub fn n_categories(&self) -> usize {
        self.data.vocab.categories.table_rows()
    }

    pub fn stats(&self) -> DatasetStats {
        self.data.stats()
    }

    /// Moves every user's last training pair into `valid`.
    pub fn hold_out_validation(&mut self) {
        let mut last: BTreeMap<u32, u32> = BTreeMap::new();
        for e in &self.train {
            let p = last.entry(e.user).or_default();
            *p = (*p).max(e.prefix_len);
        }
        let (valid, train) = self
            .train
            .iter()
            .partition(|e| last.get(&e.user) == Some(&e.prefix_len));
        self.train = train;
        self.valid = valid;
    }

    pub fn valid_examples(&self) -> impl Iterator<Item = TrainingExample<'_>> + '_ {
        self.valid.iter().map(|e| self.resolve(*e))
    }

    /// Behaviors visible to training for `user`: everything except the
    /// held-out last behavior.
    pub fn training_history(&self, user: u32) -> &[Behavior] {
        let seq = &self.data.sequences[user as usize];
        &seq[..seq.len().saturating_sub(1)]
    }
}
