//! End-to-end assembly: embed, encode, remember, read, score.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use rand::Rng;

use crate::data::{Behavior, TrainingExample};
use crate::embeddings::EmbeddingTables;
use crate::error::{Error, Result};
use crate::memory::{read_multi_hop, write_memory, HopParams, MultiHopRead};
use crate::recurrent::{encode_states, GruParams, RnnGate, TemporalGateParams};
use crate::rng::{SeedStreams, StreamRng};
use crate::tape::{Tape, Var};
use crate::tensor::{ParamId, ParamStore};

/// Architecture switches for the full model and its ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Mtam,
    /// Plain GRU recommender: no temporal gate, no memory.
    Gru,
    /// Time-gated recurrence without memory.
    Tgru,
    /// Full model with the recurrent temporal gate fixed open.
    MtamGateOffRnn,
    /// Full model reading memory with plain dot-product attention.
    MtamGateOffAttn,
    /// Full model whose memory holds recurrent hidden states.
    MtamHiddenMem,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Mtam,
        Variant::Gru,
        Variant::Tgru,
        Variant::MtamGateOffRnn,
        Variant::MtamGateOffAttn,
        Variant::MtamHiddenMem,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Mtam => "mtam",
            Variant::Gru => "gru",
            Variant::Tgru => "tgru",
            Variant::MtamGateOffRnn => "mtam-gateoff-rnn",
            Variant::MtamGateOffAttn => "mtam-gateoff-attn",
            Variant::MtamHiddenMem => "mtam-hidden-mem",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Variant::ALL.into_iter().find(|v| v.name() == name)
    }

    pub fn rnn_gated(self) -> bool {
        !matches!(self, Variant::Gru | Variant::MtamGateOffRnn)
    }

    pub fn has_memory(self) -> bool {
        !matches!(self, Variant::Gru | Variant::Tgru)
    }

    pub fn attention_gated(self) -> bool {
        self.has_memory() && self != Variant::MtamGateOffAttn
    }

    pub fn memory_source(self) -> MemorySource {
        if self == Variant::MtamHiddenMem {
            MemorySource::HiddenStates
        } else {
            MemorySource::Behaviors
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MemorySource {
    Behaviors,
    HiddenStates,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub d: usize,
    /// Item-table rows, padding included.
    pub n_items: usize,
    /// Category-table rows, padding included.
    pub n_categories: usize,
    /// Longest prefix window fed to the encoder.
    pub max_len: usize,
    /// Memory slots.
    pub capacity: usize,
    pub hops: usize,
    pub variant: Variant,
    /// Time intervals are divided by this before entering the gates.
    pub time_divisor: f64,
}

impl ModelConfig {
    pub fn new(n_items: usize, n_categories: usize) -> Self {
        ModelConfig {
            d: 128,
            n_items,
            n_categories,
            max_len: 50,
            capacity: 50,
            hops: 4,
            variant: Variant::Mtam,
            time_divisor: 1.0,
        }
    }

    /// Hops actually read: zero for variants without memory.
    pub fn effective_hops(&self) -> usize {
        if self.variant.has_memory() {
            self.hops
        } else {
            0
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.max_len == 0 || self.capacity == 0 {
            return Err(Error::contract("d, max_len and capacity must be positive"));
        }
        if self.n_items < 2 || self.n_categories < 2 {
            return Err(Error::contract(
                "item and category tables need padding plus at least one entry",
            ));
        }
        if !(self.time_divisor.is_finite() && self.time_divisor > 0.0) {
            return Err(Error::contract("time divisor must be positive and finite"));
        }
        Ok(())
    }
}

/// All learned tensors of one model plus its configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub tables: EmbeddingTables,
    pub gru: GruParams,
    pub tgate: Option<TemporalGateParams>,
    pub memory: Option<HopParams>,
}

impl ModelParams {
    /// Fresh parameters. Every component draws from its own named stream,
    /// so variants share the values of the components they have in common.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let streams = SeedStreams::new(seed);
        let mut store = ParamStore::new();
        let tables = EmbeddingTables::init(
            &mut store,
            &mut streams.stream("init.embeddings"),
            config.n_items,
            config.n_categories,
            config.max_len,
            config.d,
        )?;
        let gru = GruParams::init(&mut store, &mut streams.stream("init.gru"), config.d);
        let tgate = config.variant.rnn_gated().then(|| {
            TemporalGateParams::init(&mut store, &mut streams.stream("init.tgate"), config.d)
        });
        let memory = (config.effective_hops() > 0).then(|| {
            HopParams::init(
                &mut store,
                &mut streams.stream("init.memory"),
                config.d,
                config.hops,
                config.capacity,
                config.variant.attention_gated(),
            )
        });
        Ok(ModelParams {
            config,
            store,
            tables,
            gru,
            tgate,
            memory,
        })
    }

    /// Rebuilds the parameter layout for `config` and fills it from `store`
    /// (for example a loaded checkpoint), checking names and shapes.
    pub fn with_store(config: ModelConfig, store: ParamStore) -> Result<Self> {
        let mut fresh = ModelParams::init(config, 0)?;
        if fresh.store.len() != store.len() {
            return Err(Error::contract(alloc::format!(
                "expected {} tensors, found {}",
                fresh.store.len(),
                store.len()
            )));
        }
        for (id, name, tensor) in fresh.store.iter() {
            let other = store
                .find(name)
                .ok_or_else(|| Error::contract(alloc::format!("missing tensor {name}")))?;
            if other != id || store.get(other).shape() != tensor.shape() {
                return Err(Error::contract(alloc::format!(
                    "tensor {name} has the wrong slot or shape"
                )));
            }
        }
        fresh.store = store;
        Ok(fresh)
    }

    fn rnn_gate(&self) -> RnnGate<'_> {
        match &self.tgate {
            Some(p) => RnnGate::Temporal(p),
            None => RnnGate::Fixed(1.0),
        }
    }

    /// Parameter ids grouped by component, for reporting.
    pub fn groups(&self) -> Vec<(&'static str, Vec<ParamId>)> {
        let mut out = vec![
            (
                "embeddings",
                vec![self.tables.item, self.tables.category, self.tables.position],
            ),
            ("gru", self.gru.ids()),
        ];
        if let Some(g) = &self.tgate {
            out.push(("temporal-gate", g.ids()));
        }
        if let Some(m) = &self.memory {
            out.push(("memory", m.ids()));
        }
        out
    }
}

/// Inverted dropout applied during training.
pub struct Dropout<'r> {
    pub rate: f64,
    pub rng: &'r mut StreamRng,
}

impl Dropout<'_> {
    fn apply(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        if self.rate <= 0.0 {
            return Ok(x);
        }
        let shape = tape.shape(x);
        let keep = 1.0 - self.rate;
        let scale = 1.0 / keep;
        let mask = (0..shape.len())
            .map(|_| {
                if self.rng.gen::<f64>() < keep {
                    scale
                } else {
                    0.0
                }
            })
            .collect();
        let mask = tape.constant(shape.rows, shape.cols, mask)?;
        tape.mul(x, mask)
    }
}

/// Intermediate values of one forward pass.
#[derive(Clone, Debug)]
pub struct UserForward {
    pub vector: Var,
    pub c_short: Var,
    pub read: Option<MultiHopRead>,
}

/// The user vector at `t_target` given `prefix`.
pub fn forward_user(
    tape: &mut Tape,
    params: &ModelParams,
    prefix: &[Behavior],
    t_target: f64,
    dropout: Option<&mut Dropout<'_>>,
) -> Result<UserForward> {
    let hops = params.config.effective_hops();
    forward_user_hops(tape, params, prefix, t_target, hops, dropout)
}

/// [`forward_user`] reading only the first `hops` hops of memory.
pub fn forward_user_hops(
    tape: &mut Tape,
    params: &ModelParams,
    prefix: &[Behavior],
    t_target: f64,
    hops: usize,
    mut dropout: Option<&mut Dropout<'_>>,
) -> Result<UserForward> {
    if prefix.is_empty() {
        return Err(Error::contract("forward needs a non-empty prefix"));
    }
    let cfg = &params.config;
    let mut seq = params.tables.embed_sequence(tape, prefix)?;
    let last = *seq.times.last().expect("non-empty");
    if t_target < last {
        return Err(Error::Ordering {
            earlier: last,
            later: t_target,
        });
    }
    if let Some(d) = dropout.as_deref_mut() {
        seq.vectors = d.apply(tape, seq.vectors)?;
    }
    let states = encode_states(tape, &params.gru, params.rnn_gate(), &seq, cfg.time_divisor)?;
    let c_short = *states.last().expect("non-empty");

    let mut out = UserForward {
        vector: c_short,
        c_short,
        read: None,
    };
    if let Some(hop_params) = &params.memory {
        let source = match cfg.variant.memory_source() {
            MemorySource::Behaviors => seq.vectors,
            MemorySource::HiddenStates => tape.stack_rows(&states)?,
        };
        let mem = write_memory(tape, source, &seq.times, cfg.capacity)?;
        let read = read_multi_hop(
            tape,
            hop_params,
            c_short,
            t_target,
            &mem,
            hops,
            cfg.time_divisor,
        )?;
        out.vector = read.output;
        out.read = Some(read);
    }
    if let Some(d) = dropout {
        out.vector = d.apply(tape, out.vector)?;
    }
    Ok(out)
}

/// Largest `|output(k−1) + hop_k − output(k)|` over hops `1..=k′`, each
/// truncated read run on its own tape.
pub fn hop_residual_gap(params: &ModelParams, prefix: &[Behavior], t_target: f64) -> Result<f64> {
    let mut gap: f64 = 0.0;
    for k in 1..=params.config.effective_hops() {
        let mut tape = Tape::new(&params.store);
        let prev = forward_user_hops(&mut tape, params, prefix, t_target, k - 1, None)?;
        let full = forward_user_hops(&mut tape, params, prefix, t_target, k, None)?;
        let hop = *full
            .read
            .as_ref()
            .and_then(|r| r.hop_outputs.last())
            .expect("k ≥ 1 hops were read");
        for ((a, h), c) in tape
            .value(prev.vector)
            .iter()
            .zip(tape.value(hop))
            .zip(tape.value(full.vector))
        {
            gap = gap.max(libm::fabs(a + h - c));
        }
    }
    Ok(gap)
}

/// `user_vecs · itemsᵀ`, one row of corpus scores per user.
pub fn score_corpus(tape: &mut Tape, params: &ModelParams, user_vecs: Var) -> Result<Var> {
    let items = tape.param(params.tables.item);
    tape.matmul_nt(user_vecs, items)
}

/// Plain dot-product scores of one user vector against every item, with the
/// padding item at −∞.
pub fn score_vector(params: &ModelParams, user_vec: &[f64]) -> Result<Vec<f64>> {
    let table = params.store.get(params.tables.item);
    if user_vec.len() != table.cols() {
        return Err(Error::Dimension {
            op: "score_vector",
            lhs: crate::tensor::Shape::new(1, user_vec.len()),
            rhs: table.shape(),
        });
    }
    let mut scores: Vec<f64> = (0..table.rows())
        .map(|j| table.row(j).iter().zip(user_vec).map(|(a, b)| a * b).sum())
        .collect();
    scores[0] = f64::NEG_INFINITY;
    Ok(scores)
}

/// Options for [`loss_batch`].
pub struct LossOptions<'r> {
    pub l2: f64,
    pub dropout: Option<Dropout<'r>>,
}

impl LossOptions<'_> {
    pub fn eval() -> Self {
        LossOptions {
            l2: 0.0,
            dropout: None,
        }
    }
}

/// Batch objective: mean cross-entropy of each label under the full
/// softmax over real items, plus `l2 · Σ‖θ‖²` (padding rows excluded).
pub fn loss_batch(
    tape: &mut Tape,
    params: &ModelParams,
    batch: &[TrainingExample<'_>],
    opts: &mut LossOptions<'_>,
) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::contract("loss needs a non-empty batch"));
    }
    let mut vecs = Vec::with_capacity(batch.len());
    let mut labels = Vec::with_capacity(batch.len());
    for ex in batch {
        let label = ex.label_item as usize;
        if label == 0 || label >= params.config.n_items {
            return Err(Error::data(alloc::format!(
                "label item {label} is padding or out of range"
            )));
        }
        let f = forward_user(
            tape,
            params,
            ex.prefix,
            ex.label_time,
            opts.dropout.as_mut(),
        )?;
        vecs.push(f.vector);
        labels.push(label);
    }
    let users = tape.stack_rows(&vecs)?;
    let logits = score_corpus(tape, params, users)?;
    let mut col_mask = vec![true; params.config.n_items];
    col_mask[0] = false;
    let ce = tape.cross_entropy(logits, &labels, Some(&col_mask))?;
    let ce = tape.sum(ce)?;
    let mut loss = tape.scale(ce, 1.0 / batch.len() as f64)?;
    if opts.l2 > 0.0 {
        let ids: Vec<ParamId> = params.store.ids().collect();
        for id in ids {
            let p = tape.param(id);
            let sq = tape.sum_squares(p, params.store.padding_rows(id))?;
            let sq = tape.scale(sq, opts.l2)?;
            loss = tape.add(loss, sq)?;
        }
    }
    Ok(loss)
}

/// Ordered Top-K items and their scores.
#[derive(Clone, Debug, PartialEq)]
pub struct RankingResult {
    pub items: Vec<u32>,
    pub scores: Vec<f64>,
}

/// Indices of the `k` largest entries of `scores[1..]`, ties by ascending
/// index.
pub fn top_k(scores: &[f64], k: usize) -> Result<RankingResult> {
    let n = scores.len();
    if k == 0 || k >= n {
        return Err(Error::contract(alloc::format!(
            "K = {k} outside [1, {})",
            n
        )));
    }
    let mut order: Vec<u32> = (1..n as u32).collect();
    let cmp = |a: &u32, b: &u32| {
        scores[*b as usize]
            .total_cmp(&scores[*a as usize])
            .then(a.cmp(b))
    };
    if k < order.len() {
        order.select_nth_unstable_by(k - 1, cmp);
        order.truncate(k);
    }
    order.sort_unstable_by(cmp);
    Ok(RankingResult {
        scores: order.iter().map(|&i| scores[i as usize]).collect(),
        items: order,
    })
}

/// User vector at `t_target` as plain values (no dropout).
pub fn user_vector(params: &ModelParams, prefix: &[Behavior], t_target: f64) -> Result<Vec<f64>> {
    let mut tape = Tape::new(&params.store);
    let f = forward_user(&mut tape, params, prefix, t_target, None)?;
    Ok(tape.value(f.vector).to_vec())
}

pub fn recommend_topk(
    params: &ModelParams,
    prefix: &[Behavior],
    t_target: f64,
    k: usize,
) -> Result<RankingResult> {
    let v = user_vector(params, prefix, t_target)?;
    top_k(&score_vector(params, &v)?, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn b(item: u32, category: u32, timestamp: f64) -> Behavior {
        Behavior {
            item,
            category,
            timestamp,
        }
    }

    fn small(variant: Variant, hops: usize) -> ModelParams {
        let mut cfg = ModelConfig::new(6, 3);
        cfg.d = 4;
        cfg.max_len = 5;
        cfg.capacity = 3;
        cfg.hops = hops;
        cfg.variant = variant;
        ModelParams::init(cfg, 11).unwrap()
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(Variant::from_name(v.name()), Some(v));
        }
        assert_eq!(Variant::from_name("nope"), None);
    }

    #[test]
    fn zero_hops_yield_short_term_state() {
        let p = small(Variant::Mtam, 0);
        assert!(p.memory.is_none());
        let prefix = [b(1, 1, 0.0), b(2, 2, 100.0)];
        let mut tape = Tape::new(&p.store);
        let f = forward_user(&mut tape, &p, &prefix, 200.0, None).unwrap();
        assert_eq!(f.vector, f.c_short);
    }

    #[test]
    fn mtam_without_hops_equals_tgru() {
        let prefix = [b(1, 1, 0.0), b(2, 2, 100.0), b(5, 1, 7000.0)];
        let a = user_vector(&small(Variant::Mtam, 0), &prefix, 9000.0).unwrap();
        let t = user_vector(&small(Variant::Tgru, 3), &prefix, 9000.0).unwrap();
        assert_eq!(a, t);
    }

    #[test]
    fn empty_prefix_is_contract_error() {
        let p = small(Variant::Mtam, 1);
        let mut tape = Tape::new(&p.store);
        assert!(matches!(
            forward_user(&mut tape, &p, &[], 1.0, None),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn forward_is_deterministic() {
        let p = small(Variant::Mtam, 2);
        let prefix = [b(1, 1, 0.0), b(3, 2, 10.0)];
        assert_eq!(
            user_vector(&p, &prefix, 20.0).unwrap(),
            user_vector(&p, &prefix, 20.0).unwrap()
        );
    }

    #[test]
    fn scores_follow_item_rows() {
        let mut p = small(Variant::Gru, 0);
        let mut table = Tensor::zeros(6, 4);
        for j in 1..6 {
            table.set(j, (j - 1) % 4, 1.0 + j as f64);
        }
        *p.store.get_mut(p.tables.item) = table;
        let s = score_vector(&p, &[0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(s[0], f64::NEG_INFINITY);
        assert_eq!(top_k(&s, 1).unwrap().items, [2]);
        let zero = score_vector(&p, &[0.0; 4]).unwrap();
        assert!(zero[1..].iter().all(|v| *v == 0.0));
        assert_eq!(top_k(&zero, 3).unwrap().items, [1, 2, 3]);
    }

    #[test]
    fn top_k_examples() {
        let s = [f64::NEG_INFINITY, 5.0, 4.0, 3.0, 2.0];
        assert_eq!(top_k(&s, 2).unwrap().items, [1, 2]);
        assert_eq!(top_k(&s, 4).unwrap().items, [1, 2, 3, 4]);
        assert!(top_k(&s, 0).is_err());
        assert!(top_k(&s, 5).is_err());
        let tied = [f64::NEG_INFINITY, 1.0, 3.0, 3.0, 1.0];
        assert_eq!(top_k(&tied, 3).unwrap().items, [2, 3, 1]);
    }

    #[test]
    fn single_item_corpus_leaves_only_regularization() {
        let mut cfg = ModelConfig::new(2, 2);
        cfg.d = 3;
        cfg.hops = 1;
        let p = ModelParams::init(cfg, 1).unwrap();
        let seq = [b(1, 1, 0.0), b(1, 1, 5.0)];
        let ex = TrainingExample {
            user: 1,
            prefix: &seq[..1],
            label_item: 1,
            label_time: 5.0,
        };
        let mut tape = Tape::new(&p.store);
        let l = loss_batch(&mut tape, &p, &[ex], &mut LossOptions::eval()).unwrap();
        assert_eq!(tape.scalar(l), 0.0);
        let mut tape = Tape::new(&p.store);
        let mut opts = LossOptions {
            l2: 1e-5,
            dropout: None,
        };
        let l = loss_batch(&mut tape, &p, &[ex], &mut opts).unwrap();
        let expect: f64 = p
            .store
            .iter()
            .map(|(id, _, t)| {
                let skip = p.store.padding_rows(id) * t.cols();
                t.values()[skip..].iter().map(|v| v * v).sum::<f64>()
            })
            .sum::<f64>()
            * 1e-5;
        assert!((tape.scalar(l) - expect).abs() < 1e-15);
    }

    #[test]
    fn uniform_scores_give_log_n() {
        let mut p = small(Variant::Gru, 0);
        // All real item rows equal ⇒ every real item gets the same score.
        let mut table = Tensor::filled(6, 4, 0.2);
        table.row_mut(0).fill(0.0);
        *p.store.get_mut(p.tables.item) = table;
        let seq = [b(1, 1, 0.0), b(4, 2, 5.0)];
        let ex = TrainingExample {
            user: 1,
            prefix: &seq[..1],
            label_item: 4,
            label_time: 5.0,
        };
        let mut tape = Tape::new(&p.store);
        let l = loss_batch(&mut tape, &p, &[ex, ex], &mut LossOptions::eval()).unwrap();
        assert!((tape.scalar(l) - libm::log(5.0)).abs() < 1e-12);
    }

    #[test]
    fn padding_label_is_data_error() {
        let p = small(Variant::Mtam, 1);
        let seq = [b(1, 1, 0.0)];
        let ex = TrainingExample {
            user: 1,
            prefix: &seq,
            label_item: 0,
            label_time: 1.0,
        };
        let mut tape = Tape::new(&p.store);
        assert!(matches!(
            loss_batch(&mut tape, &p, &[ex], &mut LossOptions::eval()),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn with_store_checks_layout() {
        let p = small(Variant::Mtam, 2);
        let q = ModelParams::with_store(p.config.clone(), p.store.clone()).unwrap();
        assert_eq!(p, q);
        let other = small(Variant::Gru, 0);
        assert!(ModelParams::with_store(p.config.clone(), other.store).is_err());
    }

    #[test]
    fn truncated_reads_are_residual() {
        let p = small(Variant::Mtam, 3);
        let seq = [b(1, 1, 0.0), b(2, 2, 50.0), b(3, 1, 400.0), b(4, 2, 9000.0)];
        assert_eq!(hop_residual_gap(&p, &seq, 9100.0).unwrap(), 0.0);
        let mut tape = Tape::new(&p.store);
        let f = forward_user_hops(&mut tape, &p, &seq, 9100.0, 0, None).unwrap();
        assert_eq!(tape.value(f.vector), tape.value(f.c_short));
    }
}
