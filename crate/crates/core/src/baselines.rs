//! Popularity baselines.

use alloc::vec;
use alloc::vec::Vec;

use crate::data::{DatasetSplit, TrainingExample};
use crate::error::{Error, Result};
use crate::metrics::Scorer;
use crate::model::{top_k, RankingResult};

/// Interaction counts per item over every user's training history.
pub fn global_counts(split: &DatasetSplit) -> Vec<u64> {
    let mut counts = vec![0u64; split.n_items()];
    for user in 1..split.data.sequences.len() {
        for b in split.training_history(user as u32) {
            counts[b.item as usize] += 1;
        }
    }
    counts
}

fn as_scores(counts: &[u64]) -> Vec<f64> {
    let mut s: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    if let Some(first) = s.first_mut() {
        *first = f64::NEG_INFINITY;
    }
    s
}

/// Ranks items by global popularity.
#[derive(Clone, Debug)]
pub struct TopPop {
    scores: Vec<f64>,
}

impl TopPop {
    pub fn fit(split: &DatasetSplit) -> Result<Self> {
        if split.train.is_empty() && split.data.sequences.len() <= 1 {
            return Err(Error::contract("Top-Pop needs training data"));
        }
        Ok(TopPop {
            scores: as_scores(&global_counts(split)),
        })
    }

    pub fn recommend(&self, k: usize) -> Result<RankingResult> {
        top_k(&self.scores, k)
    }
}

impl Scorer for TopPop {
    fn scores(&self, _ex: &TrainingExample<'_>) -> Result<Vec<f64>> {
        Ok(self.scores.clone())
    }
}

/// Ranks the user's own items by how often they interacted with them,
/// then everything else by global popularity.
#[derive(Clone, Debug)]
pub struct PersonalPop {
    global: Vec<u64>,
    max_global: u64,
}

impl PersonalPop {
    pub fn fit(split: &DatasetSplit) -> Result<Self> {
        if split.data.sequences.len() <= 1 {
            return Err(Error::contract("P-Pop needs training data"));
        }
        let global = global_counts(split);
        let max_global = global.iter().copied().max().unwrap_or(0);
        Ok(PersonalPop { global, max_global })
    }

    /// Scores for a user whose visible history is `history`.
    pub fn scores_for(&self, history: impl IntoIterator<Item = u32>) -> Result<Vec<f64>> {
        let mut own = vec![0u64; self.global.len()];
        for item in history {
            let slot = own.get_mut(item as usize).ok_or(Error::Index {
                what: "history item",
                index: item as usize,
                extent: self.global.len(),
            })?;
            *slot += 1;
        }
        let counts: Vec<u64> = own
            .iter()
            .zip(&self.global)
            .map(|(&u, &g)| if u > 0 { u * (self.max_global + 1) } else { g })
            .collect();
        Ok(as_scores(&counts))
    }

    pub fn recommend(
        &self,
        history: impl IntoIterator<Item = u32>,
        k: usize,
    ) -> Result<RankingResult> {
        top_k(&self.scores_for(history)?, k)
    }
}

impl Scorer for PersonalPop {
    fn scores(&self, ex: &TrainingExample<'_>) -> Result<Vec<f64>> {
        self.scores_for(ex.prefix.iter().map(|b| b.item))
    }
}
