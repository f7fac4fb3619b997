//! Scaled dot-product attention and its time-aware variant.
//!
//! The time-aware score multiplies every query/key logit by a gate computed
//! from the absolute time gap between the two behaviors and a bilinear
//! semantic feature:
//!
//! ```text
//! δ = tanh(log(1 + |t_x ^- t_y|) ⊙ W_δ + b_δ)
//! τ = tanh(x W_τ yᵀ + b_τ)
//! g = σ(δ ⊙ W_gδ + τ ⊙ W_gτ + b_g)
//! T-Score = softmax((x yᵀ ⊙ g) / √d)
//! ```
//!
//! where `^-` is the pairwise difference `C[i][j] = t_x[i] − t_y[j]`. All gate
//! parameters except `W_τ` are position-wise, shaped `l_x × l_y`.

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::uniform_tensor;
use crate::tape::{Tape, Var};
use crate::tensor::{ParamId, ParamStore, Shape, Tensor};

const WEIGHT_BOUND: f64 = 0.08;

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionGateParams {
    pub w_delta: ParamId,
    pub w_g_delta: ParamId,
    pub w_g_tau: ParamId,
    pub b_delta: ParamId,
    pub b_tau: ParamId,
    pub b_g: ParamId,
    pub w_tau: ParamId,
    pub lx: usize,
    pub ly: usize,
}

impl AttentionGateParams {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        prefix: &str,
        lx: usize,
        ly: usize,
        d: usize,
    ) -> Self {
        let name = |s: &str| alloc::format!("{prefix}.{s}");
        AttentionGateParams {
            w_delta: store.add(&name("w_delta"), uniform_tensor(rng, lx, ly, WEIGHT_BOUND)),
            w_g_delta: store.add(
                &name("w_g_delta"),
                uniform_tensor(rng, lx, ly, WEIGHT_BOUND),
            ),
            w_g_tau: store.add(&name("w_g_tau"), uniform_tensor(rng, lx, ly, WEIGHT_BOUND)),
            b_delta: store.add(&name("b_delta"), Tensor::zeros(lx, ly)),
            b_tau: store.add(&name("b_tau"), Tensor::zeros(lx, ly)),
            b_g: store.add(&name("b_g"), Tensor::zeros(lx, ly)),
            w_tau: store.add(&name("w_tau"), uniform_tensor(rng, d, d, WEIGHT_BOUND)),
            lx,
            ly,
        }
    }

    pub fn ids(&self) -> Vec<ParamId> {
        vec![
            self.w_delta,
            self.w_g_delta,
            self.w_g_tau,
            self.b_delta,
            self.b_tau,
            self.b_g,
            self.w_tau,
        ]
    }
}

/// Vectors with per-row timestamps and validity flags.
#[derive(Clone, Debug)]
pub struct TimedSequence {
    pub vectors: Var,
    pub times: Vec<f64>,
    pub mask: Vec<bool>,
}

impl TimedSequence {
    /// All rows valid.
    pub fn new(vectors: Var, times: Vec<f64>) -> Self {
        let mask = vec![true; times.len()];
        TimedSequence {
            vectors,
            times,
            mask,
        }
    }
}

/// How the attention logits are gated.
#[derive(Clone, Copy, Debug)]
pub enum AttentionGate<'a> {
    Temporal(&'a AttentionGateParams),
    /// Every gate entry fixed; `Fixed(1.0)` is plain scaled dot-product attention.
    Fixed(f64),
}

/// `C[i][j] = t_x[i] − t_y[j]`.
pub fn interval_matrix(t_x: &[f64], t_y: &[f64]) -> Tensor {
    let values = t_x
        .iter()
        .flat_map(|a| t_y.iter().map(move |b| a - b))
        .collect();
    Tensor::new(t_x.len(), t_y.len(), values).expect("extent matches")
}

fn key_mask(mask: &[bool], rows: usize) -> Result<Vec<bool>> {
    if !mask.iter().any(|m| *m) {
        return Err(Error::DegenerateRow { row: 0 });
    }
    Ok(mask
        .iter()
        .copied()
        .cycle()
        .take(rows * mask.len())
        .collect())
}

fn check_kv(tape: &Tape, q: Var, k: Var, v: Var, mask_len: usize) -> Result<()> {
    let (sq, sk, sv) = (tape.shape(q), tape.shape(k), tape.shape(v));
    if sq.cols != sk.cols {
        return Err(Error::Dimension {
            op: "attention query/key",
            lhs: sq,
            rhs: sk,
        });
    }
    if sk.rows != sv.rows {
        return Err(Error::Dimension {
            op: "attention key/value",
            lhs: sk,
            rhs: sv,
        });
    }
    if mask_len != sk.rows {
        return Err(Error::Dimension {
            op: "attention mask",
            lhs: sk,
            rhs: Shape::new(1, mask_len),
        });
    }
    Ok(())
}

fn attend(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    mask: &[bool],
    gate: Option<Var>,
) -> Result<Var> {
    check_kv(tape, q, k, v, mask.len())?;
    let d = tape.shape(q).cols;
    let lq = tape.shape(q).rows;
    let logits = tape.matmul_nt(q, k)?;
    let logits = match gate {
        Some(g) => tape.mul(logits, g)?,
        None => logits,
    };
    let logits = tape.scale(logits, 1.0 / libm::sqrt(d as f64))?;
    let full_mask = key_mask(mask, lq)?;
    let scores = tape.row_softmax(logits, Some(&full_mask))?;
    tape.matmul(scores, v)
}

/// `softmax(q kᵀ / √d) v` with masked keys excluded.
pub fn dot_attention(tape: &mut Tape, q: Var, k: Var, v: Var, mask: &[bool]) -> Result<Var> {
    attend(tape, q, k, v, mask, None)
}

/// Temporal gate matrix `g ∈ (0,1)^{l_x×l_y}` between two timed sequences.
pub fn time_gate(
    tape: &mut Tape,
    p: &AttentionGateParams,
    x: &TimedSequence,
    y: &TimedSequence,
    time_divisor: f64,
) -> Result<Var> {
    let (sx, sy) = (tape.shape(x.vectors), tape.shape(y.vectors));
    if sx.rows != p.lx || sy.rows != p.ly || x.times.len() != p.lx || y.times.len() != p.ly {
        return Err(Error::Dimension {
            op: "time_gate extents",
            lhs: Shape::new(sx.rows, sy.rows),
            rhs: Shape::new(p.lx, p.ly),
        });
    }
    let mut gaps = interval_matrix(&x.times, &y.times);
    for v in gaps.values_mut() {
        *v /= time_divisor;
    }
    let gaps = tape.input(gaps)?;
    let gaps = tape.abs(gaps)?;
    let log_gaps = tape.log1p(gaps)?;
    let w_delta = tape.param(p.w_delta);
    let b_delta = tape.param(p.b_delta);
    let delta = tape.mul(log_gaps, w_delta)?;
    let delta = tape.add(delta, b_delta)?;
    let delta = tape.tanh(delta)?;

    let w_tau = tape.param(p.w_tau);
    let b_tau = tape.param(p.b_tau);
    let xw = tape.matmul(x.vectors, w_tau)?;
    let tau = tape.matmul_nt(xw, y.vectors)?;
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

/// Time-aware attention of `q` over keys `k` (with their times and mask)
/// and values `v`.
pub fn time_attention(
    tape: &mut Tape,
    gate: AttentionGate<'_>,
    q: &TimedSequence,
    k: &TimedSequence,
    v: Var,
    time_divisor: f64,
) -> Result<Var> {
    let g = match gate {
        AttentionGate::Temporal(p) => Some(time_gate(tape, p, q, k, time_divisor)?),
        AttentionGate::Fixed(1.0) => None,
        AttentionGate::Fixed(x) => {
            let (lq, lk) = (tape.shape(q.vectors).rows, tape.shape(k.vectors).rows);
            Some(tape.constant(lq, lk, vec![x; lq * lk])?)
        }
    };
    attend(tape, q.vectors, k.vectors, v, &k.mask, g)
}

/// The attention weights alone (`T-Score`), for inspection and tests.
pub fn time_scores(
    tape: &mut Tape,
    gate: AttentionGate<'_>,
    q: &TimedSequence,
    k: &TimedSequence,
    time_divisor: f64,
) -> Result<Var> {
    let d = tape.shape(q.vectors).cols;
    let lq = tape.shape(q.vectors).rows;
    let logits = tape.matmul_nt(q.vectors, k.vectors)?;
    let logits = match gate {
        AttentionGate::Temporal(p) => {
            let g = time_gate(tape, p, q, k, time_divisor)?;
            tape.mul(logits, g)?
        }
        AttentionGate::Fixed(1.0) => logits,
        AttentionGate::Fixed(x) => tape.scale(logits, x)?,
    };
    let logits = tape.scale(logits, 1.0 / libm::sqrt(d as f64))?;
    let full_mask = key_mask(&k.mask, lq)?;
    tape.row_softmax(logits, Some(&full_mask))
}
