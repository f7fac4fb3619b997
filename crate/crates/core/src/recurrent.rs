//! GRU and the time-gated T-GRU unit.
//!
//! A T-GRU step is a GRU step whose history term `z ⊙ h` is additionally
//! scaled by a temporal gate `g ∈ (0,1)^d`. The gate mixes a feature of the
//! log time interval since the previous behavior with a feature of the
//! current input and history:
//!
//! ```text
//! δ = tanh(log(1 + Δt) · W_δ + b_δ)
//! τ = tanh([x, h] W_τ + b_τ)
//! g = σ(δ ⊙ W_gδ + τ ⊙ W_gτ + b_g)
//! h' = z ⊙ g ⊙ h + (1 − z) ⊙ tanh([x, h ⊙ r] W_h + b_h)
//! ```

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

use crate::embeddings::EmbeddedSequence;
use crate::error::{Error, Result};
use crate::rng::uniform_tensor;
use crate::tape::{Tape, Var};
use crate::tensor::{ParamId, ParamStore, Tensor};

const WEIGHT_BOUND: f64 = 0.08;

#[derive(Clone, Debug, PartialEq)]
pub struct GruParams {
    pub w_z: ParamId,
    pub w_r: ParamId,
    pub w_h: ParamId,
    pub b_z: ParamId,
    pub b_r: ParamId,
    pub b_h: ParamId,
    pub d: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TemporalGateParams {
    pub w_delta: ParamId,
    pub b_delta: ParamId,
    pub w_tau: ParamId,
    pub b_tau: ParamId,
    pub w_g_delta: ParamId,
    pub w_g_tau: ParamId,
    pub b_g: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct RnnState {
    pub h: Var,
    pub t_prev: f64,
}

/// How the history gate of a recurrent step is obtained.
#[derive(Clone, Copy, Debug)]
pub enum RnnGate<'a> {
    /// Learned temporal gate.
    Temporal(&'a TemporalGateParams),
    /// Every coordinate fixed to the given value. `Fixed(1.0)` is a plain GRU.
    Fixed(f64),
}

impl GruParams {
    pub fn init<R: Rng>(store: &mut ParamStore, rng: &mut R, d: usize) -> Self {
        GruParams {
            w_z: store.add("gru.w_z", uniform_tensor(rng, 2 * d, d, WEIGHT_BOUND)),
            w_r: store.add("gru.w_r", uniform_tensor(rng, 2 * d, d, WEIGHT_BOUND)),
            w_h: store.add("gru.w_h", uniform_tensor(rng, 2 * d, d, WEIGHT_BOUND)),
            b_z: store.add("gru.b_z", Tensor::zeros(1, d)),
            b_r: store.add("gru.b_r", Tensor::zeros(1, d)),
            b_h: store.add("gru.b_h", Tensor::zeros(1, d)),
            d,
        }
    }

    pub fn ids(&self) -> Vec<ParamId> {
        vec![self.w_z, self.w_r, self.w_h, self.b_z, self.b_r, self.b_h]
    }
}

impl TemporalGateParams {
    pub fn init<R: Rng>(store: &mut ParamStore, rng: &mut R, d: usize) -> Self {
        TemporalGateParams {
            w_delta: store.add("tgate.w_delta", uniform_tensor(rng, 1, d, WEIGHT_BOUND)),
            b_delta: store.add("tgate.b_delta", Tensor::zeros(1, d)),
            w_tau: store.add("tgate.w_tau", uniform_tensor(rng, 2 * d, d, WEIGHT_BOUND)),
            b_tau: store.add("tgate.b_tau", Tensor::zeros(1, d)),
            w_g_delta: store.add("tgate.w_g_delta", uniform_tensor(rng, 1, d, WEIGHT_BOUND)),
            w_g_tau: store.add("tgate.w_g_tau", uniform_tensor(rng, 1, d, WEIGHT_BOUND)),
            b_g: store.add("tgate.b_g", Tensor::zeros(1, d)),
        }
    }

    pub fn ids(&self) -> Vec<ParamId> {
        vec![
            self.w_delta,
            self.b_delta,
            self.w_tau,
            self.b_tau,
            self.w_g_delta,
            self.w_g_tau,
            self.b_g,
        ]
    }
}

impl RnnState {
    pub fn zero(tape: &mut Tape, d: usize, t_prev: f64) -> Result<Self> {
        Ok(RnnState {
            h: tape.zeros(1, d)?,
            t_prev,
        })
    }
}

fn check_width(tape: &Tape, x: Var, h: Var, d: usize) -> Result<()> {
    let (sx, sh) = (tape.shape(x), tape.shape(h));
    if sx.rows != 1 || sx.cols != d || sh != sx {
        return Err(Error::Dimension {
            op: "recurrent step",
            lhs: sx,
            rhs: sh,
        });
    }
    Ok(())
}

/// Scaled interval `(t_now − t_prev) / divisor`; negative intervals are an
/// ordering error.
fn interval(t_prev: f64, t_now: f64, divisor: f64) -> Result<f64> {
    if t_now < t_prev {
        return Err(Error::Ordering {
            earlier: t_prev,
            later: t_now,
        });
    }
    Ok((t_now - t_prev) / divisor)
}

/// Shared GRU body; `gate` (when present) scales the history term.
fn step(tape: &mut Tape, p: &GruParams, x: Var, h: Var, gate: Option<Var>) -> Result<Var> {
    check_width(tape, x, h, p.d)?;
    let xh = tape.concat_cols(x, h)?;
    let (w_z, b_z) = (tape.param(p.w_z), tape.param(p.b_z));
    let (w_r, b_r) = (tape.param(p.w_r), tape.param(p.b_r));
    let (w_h, b_h) = (tape.param(p.w_h), tape.param(p.b_h));

    let z = tape.matmul(xh, w_z)?;
    let z = tape.add(z, b_z)?;
    let z = tape.sigmoid(z)?;
    let r = tape.matmul(xh, w_r)?;
    let r = tape.add(r, b_r)?;
    let r = tape.sigmoid(r)?;
    let hr = tape.mul(h, r)?;
    let xhr = tape.concat_cols(x, hr)?;
    let cand = tape.matmul(xhr, w_h)?;
    let cand = tape.add(cand, b_h)?;
    let cand = tape.tanh(cand)?;

    let keep = match gate {
        Some(g) => tape.mul(z, g)?,
        None => z,
    };
    let history = tape.mul(keep, h)?;
    let one_minus_z = tape.one_minus(z)?;
    let fresh = tape.mul(one_minus_z, cand)?;
    tape.add(history, fresh)
}

/// One plain GRU step. Time is carried through unchanged.
pub fn gru_step(tape: &mut Tape, p: &GruParams, x: Var, state: RnnState) -> Result<RnnState> {
    let h = step(tape, p, x, state.h, None)?;
    Ok(RnnState {
        h,
        t_prev: state.t_prev,
    })
}

/// Temporal gate `g` for input `x` at `t_now` given the previous state.
pub fn temporal_gate_step(
    tape: &mut Tape,
    p: &TemporalGateParams,
    x: Var,
    state: RnnState,
    t_now: f64,
    time_divisor: f64,
) -> Result<Var> {
    let dt = interval(state.t_prev, t_now, time_divisor)?;
    let dt = tape.constant_scalar(dt)?;
    let log_dt = tape.log1p(dt)?;
    let w_delta = tape.param(p.w_delta);
    let b_delta = tape.param(p.b_delta);
    let delta = tape.mul(log_dt, w_delta)?;
    let delta = tape.add(delta, b_delta)?;
    let delta = tape.tanh(delta)?;

    let xh = tape.concat_cols(x, state.h)?;
    let w_tau = tape.param(p.w_tau);
    let b_tau = tape.param(p.b_tau);
    let tau = tape.matmul(xh, w_tau)?;
    let tau = tape.add(tau, b_tau)?;
    let tau = tape.tanh(tau)?;

    let w_gd = tape.param(p.w_g_delta);
    let w_gt = tape.param(p.w_g_tau);
    let b_g = tape.param(p.b_g);
    let a = tape.mul(delta, w_gd)?;
    let b = tape.mul(tau, w_gt)?;
    let s = tape.add(a, b)?;
    let s = tape.add(s, b_g)?;
    tape.sigmoid(s)
}

/// One T-GRU step. With `RnnGate::Fixed(1.0)` this is exactly [`gru_step`].
pub fn tgru_step(
    tape: &mut Tape,
    gru: &GruParams,
    gate: RnnGate<'_>,
    x: Var,
    state: RnnState,
    t_now: f64,
    time_divisor: f64,
) -> Result<RnnState> {
    // Validate ordering even when the gate is fixed.
    interval(state.t_prev, t_now, time_divisor)?;
    let g = match gate {
        RnnGate::Temporal(p) => Some(temporal_gate_step(tape, p, x, state, t_now, time_divisor)?),
        RnnGate::Fixed(1.0) => None,
        RnnGate::Fixed(v) => Some(tape.constant(1, gru.d, vec![v; gru.d])?),
    };
    let h = step(tape, gru, x, state.h, g)?;
    Ok(RnnState { h, t_prev: t_now })
}

/// Hidden state after every behavior of `seq`, starting from a zero state
/// whose previous time is the first behavior's timestamp.
pub fn encode_states(
    tape: &mut Tape,
    gru: &GruParams,
    gate: RnnGate<'_>,
    seq: &EmbeddedSequence,
    time_divisor: f64,
) -> Result<Vec<Var>> {
    if seq.is_empty() {
        return Err(Error::contract("cannot encode an empty sequence"));
    }
    let width = tape.shape(seq.vectors);
    if width.cols != gru.d || width.rows != seq.len() {
        return Err(Error::contract(format!(
            "sequence embedding {width} does not match {} behaviors of width {}",
            seq.len(),
            gru.d
        )));
    }
    let mut state = RnnState::zero(tape, gru.d, seq.times[0])?;
    let mut states = Vec::with_capacity(seq.len());
    for (i, &t) in seq.times.iter().enumerate() {
        let x = tape.row(seq.vectors, i)?;
        state = tgru_step(tape, gru, gate, x, state, t, time_divisor)?;
        states.push(state.h);
    }
    Ok(states)
}

/// Short-term intent: the final hidden state over `seq`.
pub fn encode_short_term(
    tape: &mut Tape,
    gru: &GruParams,
    gate: RnnGate<'_>,
    seq: &EmbeddedSequence,
    time_divisor: f64,
) -> Result<Var> {
    let states = encode_states(tape, gru, gate, seq, time_divisor)?;
    Ok(*states.last().expect("non-empty"))
}
