//! Mini-batch training with a stepped exponential learning-rate decay.

use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;

use crate::data::{DatasetSplit, TrainingExample};
use crate::error::{Error, Result};
use crate::model::{loss_batch, Dropout, LossOptions, ModelParams};
use crate::rng::SeedStreams;
use crate::tape::Tape;
use crate::tensor::{Gradients, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Adam { .. } => "adam",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    /// Multiplicative decay applied every `decay_every` iterations.
    pub decay: f64,
    pub decay_every: usize,
    pub l2: f64,
    pub dropout: f64,
    pub batch_size: usize,
    /// Upper bound on epochs.
    pub epochs: usize,
    /// Stop once an epoch improves the mean training loss by less than this
    /// fraction. Zero disables early stopping.
    pub min_rel_improvement: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 1e-3,
            decay: 0.995,
            decay_every: 100,
            l2: 1e-5,
            dropout: 0.5,
            batch_size: 128,
            epochs: 30,
            min_rel_improvement: 1e-4,
            seed: 0,
            optimizer: Optimizer::Sgd,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let rate = |x: f64| x > 0.0 && x <= 1.0;
        if !rate(self.lr0) || !rate(self.decay) {
            return Err(Error::contract(
                "learning rate and decay must lie in (0, 1]",
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..=1.0).contains(&self.l2) {
            return Err(Error::contract(
                "dropout must lie in [0, 1) and l2 in [0, 1]",
            ));
        }
        if self.batch_size == 0 || self.decay_every == 0 {
            return Err(Error::contract(
                "batch size and decay interval must be positive",
            ));
        }
        Ok(())
    }

    /// Learning rate at zero-based iteration `t`.
    pub fn lr_at(&self, t: usize) -> f64 {
        self.lr0 * libm::pow(self.decay, (t / self.decay_every) as f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub trace: Vec<TraceRow>,
    /// Mean batch loss of every completed epoch.
    pub epoch_losses: Vec<f64>,
    pub stopped_early: bool,
}

struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

fn apply_update(
    store: &mut ParamStore,
    grads: &Gradients,
    lr: f64,
    optimizer: Optimizer,
    adam: &mut AdamState,
) {
    if let Optimizer::Adam { .. } = optimizer {
        adam.t += 1;
    }
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let Some(g) = grads.get(id) else { continue };
        let skip = store.padding_rows(id) * store.get(id).cols();
        let values = store.get_mut(id).values_mut();
        match optimizer {
            Optimizer::Sgd => {
                for (w, gi) in values.iter_mut().zip(g).skip(skip) {
                    *w -= lr * gi;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let (m, v) = (&mut adam.m[id.index()], &mut adam.v[id.index()]);
                let c1 = 1.0 - libm::pow(beta1, adam.t as f64);
                let c2 = 1.0 - libm::pow(beta2, adam.t as f64);
                for i in skip..values.len() {
                    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                    values[i] -= lr * (m[i] / c1) / (libm::sqrt(v[i] / c2) + eps);
                }
            }
        }
    }
}

/// Trains `params` in place on `split.train`, calling `on_step` after every
/// iteration.
pub fn train(
    params: &mut ModelParams,
    split: &DatasetSplit,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&TraceRow),
) -> Result<TrainReport> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(Error::contract("no training examples"));
    }
    let streams = SeedStreams::new(cfg.seed);
    let mut adam = AdamState {
        m: params
            .store
            .iter()
            .map(|(_, _, t)| vec![0.0; t.values().len()])
            .collect(),
        v: params
            .store
            .iter()
            .map(|(_, _, t)| vec![0.0; t.values().len()])
            .collect(),
        t: 0,
    };
    let mut report = TrainReport::default();
    let mut order = split.train.clone();
    let mut iteration = 0usize;
    let mut last_norm = 0.0;
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut streams.indexed("shuffle", epoch as u64));
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let lr = cfg.lr_at(iteration);
            let batch: Vec<TrainingExample<'_>> = chunk.iter().map(|e| split.resolve(*e)).collect();
            let diverged = |_| Error::Divergence {
                iteration,
                lr,
                grad_norm: last_norm,
            };
            let mut rng = streams.indexed("dropout", iteration as u64);
            let (loss, grads) = {
                let mut tape = Tape::new(&params.store);
                let mut opts = LossOptions {
                    l2: cfg.l2,
                    dropout: (cfg.dropout > 0.0).then_some(Dropout {
                        rate: cfg.dropout,
                        rng: &mut rng,
                    }),
                };
                let l = loss_batch(&mut tape, params, &batch, &mut opts).map_err(|e| match e {
                    Error::NonFinite(_) => diverged(()),
                    other => other,
                })?;
                let loss = tape.scalar(l);
                (
                    loss,
                    tape.backward(l).map_err(|e| match e {
                        Error::NonFinite(_) => diverged(()),
                        other => other,
                    })?,
                )
            };
            let grad_norm = grads.norm();
            if !loss.is_finite() || !grad_norm.is_finite() {
                return Err(Error::Divergence {
                    iteration,
                    lr,
                    grad_norm,
                });
            }
            apply_update(&mut params.store, &grads, lr, cfg.optimizer, &mut adam);
            if !params.store.all_finite() {
                return Err(Error::Divergence {
                    iteration,
                    lr,
                    grad_norm,
                });
            }
            last_norm = grad_norm;
            let row = TraceRow {
                iteration,
                epoch,
                lr,
                loss,
                grad_norm,
            };
            on_step(&row);
            report.trace.push(row);
            total += loss;
            batches += 1;
            iteration += 1;
        }
        let mean = total / batches as f64;
        let prev = report.epoch_losses.last().copied();
        report.epoch_losses.push(mean);
        if let Some(prev) = prev {
            if cfg.min_rel_improvement > 0.0
                && (prev - mean) / libm::fabs(prev) < cfg.min_rel_improvement
            {
                report.stopped_early = true;
                break;
            }
        }
    }
    Ok(report)
}
