//! Hit ratio and NDCG over full-corpus rankings.

use alloc::vec::Vec;

use crate::data::TrainingExample;
use crate::error::{Error, Result};

/// 1-based rank of `label` among `scores[1..]`. Items scoring higher rank
/// ahead; equal scores rank ahead when their id is smaller.
pub fn rank_of(scores: &[f64], label: usize) -> Result<usize> {
    if label == 0 || label >= scores.len() {
        return Err(Error::Index {
            what: "label item",
            index: label,
            extent: scores.len(),
        });
    }
    let s = scores[label];
    if s.is_nan() {
        return Err(Error::NonFinite("label score"));
    }
    let ahead = scores[1..]
        .iter()
        .enumerate()
        .filter(|&(i, &x)| {
            let j = i + 1;
            j != label && (x > s || (x == s && j < label))
        })
        .count();
    Ok(ahead + 1)
}

pub fn hit(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0
    } else {
        0.0
    }
}

pub fn ndcg(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0 / libm::log2(1.0 + rank as f64)
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CutoffMetrics {
    pub k: usize,
    pub hr: f64,
    pub ndcg: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub cutoffs: Vec<CutoffMetrics>,
    pub n_users: usize,
    /// Seconds spent evaluating; filled in by callers that can measure it.
    pub wall_time: f64,
}

impl MetricReport {
    /// Means over `ranks` (in a fixed order) for each cutoff.
    pub fn from_ranks(ranks: &[usize], ks: &[usize]) -> Result<Self> {
        if ranks.is_empty() {
            return Err(Error::contract("no test examples to evaluate"));
        }
        if ks.contains(&0) {
            return Err(Error::contract("cutoffs must be at least 1"));
        }
        let mut ks = ks.to_vec();
        ks.sort_unstable();
        ks.dedup();
        let n = ranks.len() as f64;
        let cutoffs = ks
            .into_iter()
            .map(|k| CutoffMetrics {
                k,
                hr: ranks.iter().map(|&r| hit(r, k)).sum::<f64>() / n,
                ndcg: ranks.iter().map(|&r| ndcg(r, k)).sum::<f64>() / n,
            })
            .collect();
        Ok(MetricReport {
            cutoffs,
            n_users: ranks.len(),
            wall_time: 0.0,
        })
    }

    pub fn at(&self, k: usize) -> Option<&CutoffMetrics> {
        self.cutoffs.iter().find(|c| c.k == k)
    }
}

/// Anything that scores the whole corpus for an example.
pub trait Scorer {
    /// One score per item-table row; index 0 is the padding item.
    fn scores(&self, ex: &TrainingExample<'_>) -> Result<Vec<f64>>;
}

/// Label ranks of `examples`, in order.
pub fn rank_examples<'a, S: Scorer + ?Sized>(
    scorer: &S,
    examples: impl IntoIterator<Item = TrainingExample<'a>>,
) -> Result<Vec<usize>> {
    examples
        .into_iter()
        .map(|ex| rank_of(&scorer.scores(&ex)?, ex.label_item as usize))
        .collect()
}

pub fn evaluate<'a, S: Scorer + ?Sized>(
    scorer: &S,
    examples: impl IntoIterator<Item = TrainingExample<'a>>,
    ks: &[usize],
) -> Result<MetricReport> {
    MetricReport::from_ranks(&rank_examples(scorer, examples)?, ks)
}
