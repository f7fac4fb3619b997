//! Central finite-difference checks of tape gradients.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::Variant;
use crate::tape::{OpKind, Tape, Var};
use crate::tensor::{ParamId, ParamStore, Tensor};

/// `|a − n| / (|a| + |n| + 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    libm::fabs(analytic - numeric) / (libm::fabs(analytic) + libm::fabs(numeric) + 1e-12)
}

fn evaluate<F>(store: &ParamStore, f: &F) -> Result<f64>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new(store);
    let out = f(&mut tape)?;
    if !tape.shape(out).is_scalar() {
        return Err(Error::contract("gradient check needs a scalar function"));
    }
    let v = tape.scalar(out);
    if !v.is_finite() {
        return Err(Error::NonFinite("gradient check evaluation"));
    }
    Ok(v)
}

/// Largest relative error between the tape gradient of `f` at `theta` and
/// central differences with step `eps`.
pub fn grad_check<F>(f: F, theta: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut store = ParamStore::new();
    let id = store.add("theta", theta.clone());
    let wrapped = |tape: &mut Tape| {
        let p = tape.param(id);
        f(tape, p)
    };
    let reports = check_params(&store, &wrapped, eps, None)?;
    Ok(reports[0].max_rel_error)
}

/// Outcome of checking one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamReport {
    pub id: ParamId,
    pub name: String,
    pub max_rel_error: f64,
    /// Flat index of the worst coordinate.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Checks every parameter of `store` (or the `only` subset) against central
/// differences of `f`.
pub fn check_params<F>(
    store: &ParamStore,
    f: &F,
    eps: f64,
    only: Option<&[ParamId]>,
) -> Result<Vec<ParamReport>>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new(store);
        let loss = f(&mut tape)?;
        tape.backward(loss)?
    };
    let mut probe = store.clone();
    let ids: Vec<ParamId> = match only {
        Some(ids) => ids.to_vec(),
        None => store.ids().collect(),
    };
    let mut reports = Vec::with_capacity(ids.len());
    for id in ids {
        let n = store.get(id).values().len();
        let mut report = ParamReport {
            id,
            name: store.name(id).to_string(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in 0..n {
            let original = store.get(id).values()[i];
            probe.get_mut(id).values_mut()[i] = original + eps;
            let plus = evaluate(&probe, f)?;
            probe.get_mut(id).values_mut()[i] = original - eps;
            let minus = evaluate(&probe, f)?;
            probe.get_mut(id).values_mut()[i] = original;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.get(id).map_or(0.0, |g| g[i]);
            let err = relative_error(a, numeric);
            if err > report.max_rel_error || i == 0 {
                report.max_rel_error = err;
                report.worst_index = i;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
        reports.push(report);
    }
    Ok(reports)
}

/// Largest relative error a passing check may show.
pub const TOLERANCE: f64 = 1e-4;

/// Step for central differences.
pub const EPS: f64 = 1e-5;

/// Which parameter groups a suite run covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    All,
    Rnn,
    Attention,
    Memory,
    Model,
}

impl Scope {
    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "all" => Scope::All,
            "rnn" => Scope::Rnn,
            "attention" => Scope::Attention,
            "memory" => Scope::Memory,
            "model" => Scope::Model,
            _ => return None,
        })
    }

    fn covers(self, other: Scope) -> bool {
        self == Scope::All || self == other
    }
}

/// One line of a suite run.
#[derive(Clone, Debug, PartialEq)]
pub struct SuiteRow {
    pub suite: String,
    pub report: ParamReport,
}

impl SuiteRow {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < TOLERANCE
    }
}

/// Runs the finite-difference suites of `scope` on micro-instances
/// (d = 4, L = 3, six items, two hops). `fault` negates one backward rule.
pub fn run_suites(scope: Scope, fault: Option<OpKind>) -> Result<Vec<SuiteRow>> {
    let mut rows = Vec::new();
    let mut push = |suite: &str, reports: Vec<ParamReport>| {
        rows.extend(reports.into_iter().map(|report| SuiteRow {
            suite: suite.to_string(),
            report,
        }))
    };
    if scope.covers(Scope::Rnn) {
        push("rnn", suites::rnn(fault)?);
    }
    if scope.covers(Scope::Attention) {
        push("attention", suites::attention(fault)?);
    }
    if scope.covers(Scope::Memory) {
        push("memory", suites::memory(fault)?);
    }
    if scope.covers(Scope::Model) {
        for v in Variant::ALL {
            push(&alloc::format!("model/{v}"), suites::model(v, fault)?);
        }
    }
    Ok(rows)
}

/// Micro-instances used by [`run_suites`].
pub mod suites {
    use super::*;
    use crate::attention::{time_attention, AttentionGate, AttentionGateParams, TimedSequence};
    use crate::data::{Behavior, TrainingExample};
    use crate::embeddings::EmbeddedSequence;
    use crate::memory::{read_multi_hop, write_memory, HopParams};
    use crate::model::{loss_batch, LossOptions, ModelConfig, ModelParams};
    use crate::recurrent::{encode_states, GruParams, RnnGate, TemporalGateParams};
    use crate::rng::SeedStreams;
    use rand::Rng;

    pub const D: usize = 4;
    pub const SLOTS: usize = 3;
    pub const ITEMS: usize = 6;
    pub const HOPS: usize = 2;

    /// Redraws every non-padding value with magnitude in [0.1, 0.5] and a
    /// random sign, keeping gradients well away from zero.
    pub fn randomize(store: &mut ParamStore, seed: u64) {
        let mut rng = SeedStreams::new(seed).stream("gradcheck");
        let ids: Vec<ParamId> = store.ids().collect();
        for id in ids {
            let skip = store.padding_rows(id) * store.get(id).cols();
            for v in store.get_mut(id).values_mut().iter_mut().skip(skip) {
                let m: f64 = rng.gen_range(0.1..0.5);
                *v = if rng.gen_bool(0.5) { m } else { -m };
            }
        }
    }

    fn weights(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
        crate::rng::uniform_tensor(rng, rows, cols, 1.0)
    }

    /// Scalar probe `Σ (x ⊙ w)` with fixed random weights.
    fn probe(tape: &mut Tape, x: Var, seed: u64) -> Result<Var> {
        let s = tape.shape(x);
        let w = weights(&mut SeedStreams::new(seed).stream("probe"), s.rows, s.cols);
        let w = tape.input(w)?;
        let y = tape.mul(x, w)?;
        tape.sum(y)
    }

    const TIMES: [f64; 4] = [0.0, 40.0, 4000.0, 4100.0];

    pub fn rnn(fault: Option<OpKind>) -> Result<Vec<ParamReport>> {
        let mut store = ParamStore::new();
        let mut rng = SeedStreams::new(1).stream("init");
        let gru = GruParams::init(&mut store, &mut rng, D);
        let gate = TemporalGateParams::init(&mut store, &mut rng, D);
        let x = store.add("inputs", Tensor::zeros(TIMES.len(), D));
        randomize(&mut store, 1);
        let f = |tape: &mut Tape| {
            if let Some(k) = fault {
                tape.inject_fault(k);
            }
            let seq = EmbeddedSequence {
                vectors: tape.param(x),
                times: TIMES.to_vec(),
            };
            let states = encode_states(tape, &gru, RnnGate::Temporal(&gate), &seq, 60.0)?;
            let all = tape.stack_rows(&states)?;
            probe(tape, all, 1)
        };
        check_params(&store, &f, EPS, None)
    }

    pub fn attention(fault: Option<OpKind>) -> Result<Vec<ParamReport>> {
        let mut store = ParamStore::new();
        let mut rng = SeedStreams::new(2).stream("init");
        let gate = AttentionGateParams::init(&mut store, &mut rng, "att", 2, SLOTS, D);
        let q = store.add("query", Tensor::zeros(2, D));
        let k = store.add("keys", Tensor::zeros(SLOTS, D));
        let v = store.add("values", Tensor::zeros(SLOTS, D));
        randomize(&mut store, 2);
        let f = |tape: &mut Tape| {
            if let Some(kind) = fault {
                tape.inject_fault(kind);
            }
            let qs = TimedSequence::new(tape.param(q), alloc::vec![5000.0, 9000.0]);
            let mut ks = TimedSequence::new(tape.param(k), alloc::vec![4000.0, 30.0, 0.0]);
            ks.mask[2] = false;
            let vv = tape.param(v);
            let o = time_attention(tape, AttentionGate::Temporal(&gate), &qs, &ks, vv, 60.0)?;
            probe(tape, o, 2)
        };
        check_params(&store, &f, EPS, None)
    }

    pub fn memory(fault: Option<OpKind>) -> Result<Vec<ParamReport>> {
        let mut store = ParamStore::new();
        let mut rng = SeedStreams::new(3).stream("init");
        let hops = HopParams::init(&mut store, &mut rng, D, HOPS, SLOTS, true);
        let history = store.add("history", Tensor::zeros(2, D));
        let c_short = store.add("c_short", Tensor::zeros(1, D));
        randomize(&mut store, 3);
        let f = |tape: &mut Tape| {
            if let Some(kind) = fault {
                tape.inject_fault(kind);
            }
            let h = tape.param(history);
            let mem = write_memory(tape, h, &[100.0, 3000.0], SLOTS)?;
            let c = tape.param(c_short);
            let read = read_multi_hop(tape, &hops, c, 7000.0, &mem, HOPS, 60.0)?;
            probe(tape, read.output, 3)
        };
        check_params(&store, &f, EPS, None)
    }

    fn b(item: u32, category: u32, timestamp: f64) -> Behavior {
        Behavior {
            item,
            category,
            timestamp,
        }
    }

    /// Micro-instance model of `variant`.
    pub fn micro_model(variant: Variant) -> Result<ModelParams> {
        let mut cfg = ModelConfig::new(ITEMS + 1, 3);
        cfg.d = D;
        cfg.max_len = 5;
        cfg.capacity = SLOTS;
        cfg.hops = HOPS;
        cfg.variant = variant;
        cfg.time_divisor = 60.0;
        let mut p = ModelParams::init(cfg, 4)?;
        randomize(&mut p.store, 4);
        Ok(p)
    }

    pub fn model(variant: Variant, fault: Option<OpKind>) -> Result<Vec<ParamReport>> {
        let p = micro_model(variant)?;
        let seq = [
            b(1, 1, 0.0),
            b(3, 2, 50.0),
            b(2, 1, 4000.0),
            b(6, 2, 4030.0),
            b(5, 1, 90_000.0),
            b(4, 2, 90_100.0),
        ];
        let batch = [
            TrainingExample {
                user: 1,
                prefix: &seq[..5],
                label_item: 4,
                label_time: 90_100.0,
            },
            TrainingExample {
                user: 1,
                prefix: &seq[..4],
                label_item: 5,
                label_time: 90_000.0,
            },
        ];
        let f = |tape: &mut Tape| {
            if let Some(kind) = fault {
                tape.inject_fault(kind);
            }
            let mut opts = LossOptions {
                l2: 1e-5,
                dropout: None,
            };
            loss_batch(tape, &p, &batch, &mut opts)
        };
        check_params(&p.store, &f, EPS, None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_function_has_zero_error() {
        let theta = Tensor::row_vector(&[0.3, -1.2]);
        let err = grad_check(|tape, _| tape.constant_scalar(4.0), &theta, 1e-5).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn quadratic_matches_differences() {
        let theta = Tensor::row_vector(&[1.0, 2.0]);
        let mut store = ParamStore::new();
        let id = store.add("theta", theta.clone());
        let mut tape = Tape::new(&store);
        let p = tape.param(id);
        let q = tape.matmul_nt(p, p).unwrap();
        let g = tape.backward(q).unwrap();
        assert_eq!(g.get(id).unwrap(), &[2.0, 4.0]);
        let err = grad_check(|tape, p| tape.matmul_nt(p, p), &theta, 1e-5).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn sigmoid_slope_at_zero() {
        let theta = Tensor::zeros(1, 3);
        let mut store = ParamStore::new();
        let id = store.add("theta", theta.clone());
        let mut tape = Tape::new(&store);
        let p = tape.param(id);
        let s = tape.sigmoid(p).unwrap();
        let l = tape.sum(s).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(id).unwrap(), &[0.25; 3]);
        let err = grad_check(
            |tape, p| {
                let s = tape.sigmoid(p)?;
                tape.sum(s)
            },
            &theta,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-9);
    }

    #[test]
    fn non_finite_evaluation_propagates() {
        let theta = Tensor::scalar(1.0);
        let r = grad_check(
            |tape, p| {
                let big = tape.constant_scalar(1e308)?;
                let x = tape.mul(p, big)?;
                tape.mul(x, big)
            },
            &theta,
            1e-5,
        );
        assert!(r.is_err());
    }

    #[test]
    fn sign_flip_is_detected() {
        let theta = Tensor::row_vector(&[0.4, -0.7]);
        let mut store = ParamStore::new();
        let id = store.add("theta", theta);
        let f = |tape: &mut Tape| {
            let p = tape.param(id);
            let t = tape.tanh(p)?;
            tape.sum(t)
        };
        let ok = check_params(&store, &f, 1e-5, None).unwrap();
        assert!(ok[0].max_rel_error < 1e-8);
        let faulty = |tape: &mut Tape| {
            tape.inject_fault(OpKind::Tanh);
            f(tape)
        };
        let bad = check_params(&store, &faulty, 1e-5, None).unwrap();
        assert!(bad[0].max_rel_error > 0.5);
    }
}
