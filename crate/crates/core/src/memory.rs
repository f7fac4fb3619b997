//! FIFO long-term memory and its multi-hop time-aware reader.

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

use crate::attention::{time_attention, AttentionGate, AttentionGateParams, TimedSequence};
use crate::error::{Error, Result};
use crate::rng::uniform_tensor;
use crate::tape::{Tape, Var};
use crate::tensor::{ParamId, ParamStore};

const WEIGHT_BOUND: f64 = 0.08;

/// The latest `capacity` vectors, newest in slot 0, zero-padded to the right.
#[derive(Clone, Debug)]
pub struct MemoryState {
    pub slots: Var,
    pub times: Vec<f64>,
    pub mask: Vec<bool>,
    pub capacity: usize,
}

impl MemoryState {
    pub fn occupied(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

/// Stores the last `capacity` rows of `vectors` (oldest first, one per
/// timestamp in `times`) newest-first.
pub fn write_memory(
    tape: &mut Tape,
    vectors: Var,
    times: &[f64],
    capacity: usize,
) -> Result<MemoryState> {
    if capacity == 0 {
        return Err(Error::contract("memory needs at least one slot"));
    }
    let shape = tape.shape(vectors);
    if shape.rows != times.len() {
        return Err(Error::contract(alloc::format!(
            "{} memory rows but {} timestamps",
            shape.rows,
            times.len()
        )));
    }
    let n = times.len();
    let kept = n.min(capacity);
    let newest: Vec<usize> = (n - kept..n).rev().collect();
    let mut slot_times: Vec<f64> = newest.iter().map(|&i| times[i]).collect();
    let mut mask = vec![true; kept];
    slot_times.resize(capacity, 0.0);
    mask.resize(capacity, false);

    let mut parts = Vec::with_capacity(2);
    if kept > 0 {
        parts.push(tape.gather_rows(vectors, &newest)?);
    }
    if kept < capacity {
        parts.push(tape.zeros(capacity - kept, shape.cols)?);
    }
    let slots = if parts.len() == 1 {
        parts[0]
    } else {
        tape.stack_rows(&parts)?
    };
    Ok(MemoryState {
        slots,
        times: slot_times,
        mask,
        capacity,
    })
}

/// Reader projections: one query matrix per hop, shared key/value matrices
/// and (optionally) a shared time gate over the memory slots.
#[derive(Clone, Debug, PartialEq)]
pub struct HopParams {
    pub w_q: Vec<ParamId>,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub gate: Option<AttentionGateParams>,
}

impl HopParams {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        d: usize,
        hops: usize,
        capacity: usize,
        time_gated: bool,
    ) -> Self {
        let w_q = (0..hops)
            .map(|k| {
                store.add(
                    &alloc::format!("memory.w_q.{}", k + 1),
                    uniform_tensor(rng, d, d, WEIGHT_BOUND),
                )
            })
            .collect();
        let w_k = store.add("memory.w_k", uniform_tensor(rng, d, d, WEIGHT_BOUND));
        let w_v = store.add("memory.w_v", uniform_tensor(rng, d, d, WEIGHT_BOUND));
        let gate = time_gated
            .then(|| AttentionGateParams::init(store, rng, "memory.gate", 1, capacity, d));
        HopParams {
            w_q,
            w_k,
            w_v,
            gate,
        }
    }

    pub fn hops(&self) -> usize {
        self.w_q.len()
    }

    pub fn ids(&self) -> Vec<ParamId> {
        let mut ids = self.w_q.clone();
        ids.push(self.w_k);
        ids.push(self.w_v);
        if let Some(g) = &self.gate {
            ids.extend(g.ids());
        }
        ids
    }

    fn attention_gate(&self) -> AttentionGate<'_> {
        match &self.gate {
            Some(g) => AttentionGate::Temporal(g),
            None => AttentionGate::Fixed(1.0),
        }
    }
}

struct Projected {
    keys: TimedSequence,
    values: Var,
}

fn project(tape: &mut Tape, p: &HopParams, mem: &MemoryState) -> Result<Projected> {
    if mem.occupied() == 0 {
        return Err(Error::DegenerateMemory);
    }
    let w_k = tape.param(p.w_k);
    let w_v = tape.param(p.w_v);
    let k = tape.matmul(mem.slots, w_k)?;
    let values = tape.matmul(mem.slots, w_v)?;
    Ok(Projected {
        keys: TimedSequence {
            vectors: k,
            times: mem.times.clone(),
            mask: mem.mask.clone(),
        },
        values,
    })
}

fn hop_output(
    tape: &mut Tape,
    p: &HopParams,
    hop: usize,
    query: Var,
    t_target: f64,
    kv: &Projected,
    time_divisor: f64,
) -> Result<Var> {
    let w_q = *p.w_q.get(hop).ok_or(Error::Index {
        what: "hop",
        index: hop,
        extent: p.hops(),
    })?;
    let w_q = tape.param(w_q);
    let q = tape.matmul(query, w_q)?;
    let q = TimedSequence::new(q, vec![t_target]);
    time_attention(
        tape,
        p.attention_gate(),
        &q,
        &kv.keys,
        kv.values,
        time_divisor,
    )
}

/// One attention read of `mem` by `query` at `t_target` using the
/// projections of hop `hop` (zero-based).
pub fn read_once(
    tape: &mut Tape,
    p: &HopParams,
    hop: usize,
    query: Var,
    t_target: f64,
    mem: &MemoryState,
    time_divisor: f64,
) -> Result<Var> {
    let kv = project(tape, p, mem)?;
    hop_output(tape, p, hop, query, t_target, &kv, time_divisor)
}

/// Result of a multi-hop read.
#[derive(Clone, Debug)]
pub struct MultiHopRead {
    /// `c^{k′}`.
    pub output: Var,
    /// Attention output of every hop, in order.
    pub hop_outputs: Vec<Var>,
    /// `c^0 ..= c^{k′}`.
    pub queries: Vec<Var>,
}

/// `c^k = c^{k−1} + read(c^{k−1})` for `k = 1..=hops`, starting at `c_short`.
pub fn read_multi_hop(
    tape: &mut Tape,
    p: &HopParams,
    c_short: Var,
    t_target: f64,
    mem: &MemoryState,
    hops: usize,
    time_divisor: f64,
) -> Result<MultiHopRead> {
    let mut read = MultiHopRead {
        output: c_short,
        hop_outputs: Vec::with_capacity(hops),
        queries: vec![c_short],
    };
    if hops == 0 {
        return Ok(read);
    }
    if hops > p.hops() {
        return Err(Error::contract(alloc::format!(
            "{hops} hops requested but only {} query projections exist",
            p.hops()
        )));
    }
    let mut c = c_short;
    for hop in 0..hops {
        let o = read_once(tape, p, hop, c, t_target, mem, time_divisor)?;
        c = tape.add(c, o)?;
        read.hop_outputs.push(o);
        read.queries.push(c);
    }
    read.output = c;
    Ok(read)
}
