//! Ranking evaluation spread over worker threads.

use std::num::NonZeroUsize;
use std::thread;
use std::time::Instant;

use mtam_core::data::TrainingExample;
use mtam_core::metrics::{rank_examples, MetricReport, Scorer};
use mtam_core::model::{score_vector, user_vector, ModelParams};

use crate::error::Result;

/// Scores the corpus with a trained model.
pub struct ModelScorer<'p> {
    pub params: &'p ModelParams,
}

impl Scorer for ModelScorer<'_> {
    fn scores(&self, ex: &TrainingExample<'_>) -> mtam_core::Result<Vec<f64>> {
        let v = user_vector(self.params, ex.prefix, ex.label_time)?;
        score_vector(self.params, &v)
    }
}

pub fn default_threads() -> usize {
    thread::available_parallelism().map_or(1, NonZeroUsize::get)
}

/// Label ranks of `examples` in input order. Each thread takes one
/// contiguous chunk; chunks are concatenated in order afterwards.
pub fn parallel_ranks<S: Scorer + Sync + ?Sized>(
    scorer: &S,
    examples: &[TrainingExample<'_>],
    threads: usize,
) -> Result<Vec<usize>> {
    let threads = threads.clamp(1, examples.len().max(1));
    if threads == 1 {
        return Ok(rank_examples(scorer, examples.iter().copied())?);
    }
    let chunk = examples.len().div_ceil(threads);
    let parts: Vec<mtam_core::Result<Vec<usize>>> = thread::scope(|s| {
        let handles: Vec<_> = examples
            .chunks(chunk)
            .map(|part| s.spawn(move || rank_examples(scorer, part.iter().copied())))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("evaluation worker panicked"))
            .collect()
    });
    let mut ranks = Vec::with_capacity(examples.len());
    for p in parts {
        ranks.extend(p?);
    }
    Ok(ranks)
}

pub fn evaluate<S: Scorer + Sync + ?Sized>(
    scorer: &S,
    examples: &[TrainingExample<'_>],
    ks: &[usize],
    threads: usize,
) -> Result<MetricReport> {
    let start = Instant::now();
    let ranks = parallel_ranks(scorer, examples, threads)?;
    let mut report = MetricReport::from_ranks(&ranks, ks)?;
    report.wall_time = start.elapsed().as_secs_f64();
    Ok(report)
}
