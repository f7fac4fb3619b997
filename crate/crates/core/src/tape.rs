//! Reverse-mode differentiation over an operation tape.
//!
//! A [`Tape`] borrows a [`ParamStore`] read-only, records every operation
//! eagerly (values are computed at record time) and replays the recorded
//! operations in reverse on [`Tape::backward`]. Parameter leaves are not
//! copied onto the tape; their gradients are returned as a [`Gradients`] set
//! that the caller reduces into the store explicitly.
//!
//! A tape can be differentiated once. Calling `backward` a second time is a
//! contract error, so stale gradients never leak into a later step.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{Gradients, ParamId, ParamStore, Shape, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Element-wise operations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pointwise {
    Sigmoid,
    Tanh,
    Log1p,
    Abs,
    Add,
    Mul,
    Sub,
}

/// Operation categories, used for diagnostics and fault injection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    MatMul,
    MatMulNt,
    Add,
    Sub,
    Mul,
    Sigmoid,
    Tanh,
    Log1p,
    Abs,
    Scale,
    Softmax,
    Gather,
    Concat,
    Stack,
    Sum,
    CrossEntropy,
    SumSquares,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::MatMul => "matmul",
            OpKind::MatMulNt => "matmul_nt",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Tanh => "tanh",
            OpKind::Log1p => "log1p",
            OpKind::Abs => "abs",
            OpKind::Scale => "scale",
            OpKind::Softmax => "softmax",
            OpKind::Gather => "gather_rows",
            OpKind::Concat => "concat_cols",
            OpKind::Stack => "stack_rows",
            OpKind::Sum => "sum",
            OpKind::CrossEntropy => "cross_entropy",
            OpKind::SumSquares => "sum_squares",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        const ALL: [OpKind; 18] = [
            OpKind::Leaf,
            OpKind::MatMul,
            OpKind::MatMulNt,
            OpKind::Add,
            OpKind::Sub,
            OpKind::Mul,
            OpKind::Sigmoid,
            OpKind::Tanh,
            OpKind::Log1p,
            OpKind::Abs,
            OpKind::Scale,
            OpKind::Softmax,
            OpKind::Gather,
            OpKind::Concat,
            OpKind::Stack,
            OpKind::Sum,
            OpKind::CrossEntropy,
            OpKind::SumSquares,
        ];
        ALL.into_iter().find(|k| k.name() == name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    /// One operand is `1x1`.
    ScalarLhs,
    ScalarRhs,
    /// One operand is `1xd` against `mxd`.
    RowLhs,
    RowRhs,
}

impl Broadcast {
    fn resolve(op: &'static str, a: Shape, b: Shape) -> Result<(Self, Shape)> {
        if a == b {
            Ok((Broadcast::Same, a))
        } else if a.is_scalar() {
            Ok((Broadcast::ScalarLhs, b))
        } else if b.is_scalar() {
            Ok((Broadcast::ScalarRhs, a))
        } else if a.rows == 1 && a.cols == b.cols {
            Ok((Broadcast::RowLhs, b))
        } else if b.rows == 1 && a.cols == b.cols {
            Ok((Broadcast::RowRhs, a))
        } else {
            Err(Error::Dimension { op, lhs: a, rhs: b })
        }
    }

    #[inline]
    fn lhs_index(self, i: usize, cols: usize) -> usize {
        match self {
            Broadcast::ScalarLhs => 0,
            Broadcast::RowLhs => i % cols,
            _ => i,
        }
    }

    #[inline]
    fn rhs_index(self, i: usize, cols: usize) -> usize {
        match self {
            Broadcast::ScalarRhs => 0,
            Broadcast::RowRhs => i % cols,
            _ => i,
        }
    }
}

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Binary {
        kind: OpKind,
        lhs: Var,
        rhs: Var,
        bcast: Broadcast,
    },
    Unary {
        kind: OpKind,
        input: Var,
    },
    Scale(Var, f64),
    Softmax {
        input: Var,
        mask: Option<Vec<bool>>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    Concat(Var, Var),
    Stack(Vec<Var>),
    Sum(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
        col_mask: Option<Vec<bool>>,
    },
    SumSquares {
        input: Var,
        skip_rows: usize,
    },
}

impl Op {
    fn operands(&self) -> Vec<Var> {
        match self {
            Op::Input | Op::Param(_) => Vec::new(),
            Op::MatMul(a, b) | Op::MatMulNt(a, b) | Op::Concat(a, b) => vec![*a, *b],
            Op::Binary { lhs, rhs, .. } => vec![*lhs, *rhs],
            Op::Unary { input, .. }
            | Op::Softmax { input, .. }
            | Op::SumSquares { input, .. }
            | Op::Scale(input, _)
            | Op::Sum(input) => vec![*input],
            Op::Gather { table, .. } => vec![*table],
            Op::CrossEntropy { logits, .. } => vec![*logits],
            Op::Stack(parts) => parts.clone(),
        }
    }

    fn kind(&self) -> OpKind {
        match self {
            Op::Input | Op::Param(_) => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::MatMulNt(..) => OpKind::MatMulNt,
            Op::Binary { kind, .. } | Op::Unary { kind, .. } => *kind,
            Op::Scale(..) => OpKind::Scale,
            Op::Softmax { .. } => OpKind::Softmax,
            Op::Gather { .. } => OpKind::Gather,
            Op::Concat(..) => OpKind::Concat,
            Op::Stack(_) => OpKind::Stack,
            Op::Sum(_) => OpKind::Sum,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
            Op::SumSquares { .. } => OpKind::SumSquares,
        }
    }
}

#[derive(Debug)]
struct Node {
    shape: Shape,
    /// Empty for parameter leaves, whose values live in the store.
    values: Vec<f64>,
    op: Op,
}

/// Records operations over a borrowed parameter store.
pub struct Tape<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<Var>>,
    consumed: bool,
    fault: Option<OpKind>,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

fn grad_slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
            param_nodes: vec![None; store.len()],
            consumed: false,
            fault: None,
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    /// Makes every backward rule of `kind` push the negated gradient.
    ///
    /// Used by mutation tests to prove the gradient checker catches a broken
    /// rule. Never enable this outside verification runs.
    pub fn inject_fault(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of recorded operations that read `v`, counting repeats.
    pub fn consumers(&self, v: Var) -> usize {
        self.nodes
            .iter()
            .map(|n| n.op.operands().iter().filter(|&&o| o == v).count())
            .sum()
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(id) => self.store.get(id).values(),
            _ => &node.values,
        }
    }

    /// First element of a value; convenient for `1x1` results.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let s = self.shape(v);
        Tensor::new(s.rows, s.cols, self.value(v).to_vec()).expect("node extent is consistent")
    }

    fn push(&mut self, shape: Shape, values: Vec<f64>, op: Op) -> Result<Var> {
        debug_assert_eq!(values.len(), shape.len());
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(op.kind().name()));
        }
        self.nodes.push(Node { shape, values, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Parameter leaf; repeated calls for the same id share one node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.0] {
            return v;
        }
        let shape = self.store.get(id).shape();
        self.nodes.push(Node {
            shape,
            values: Vec::new(),
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(v);
        v
    }

    /// Constant leaf. Its gradient is computed but not reported.
    pub fn input(&mut self, t: Tensor) -> Result<Var> {
        let shape = t.shape();
        self.push(shape, t.into_values(), Op::Input)
    }

    pub fn constant(&mut self, rows: usize, cols: usize, values: Vec<f64>) -> Result<Var> {
        self.input(Tensor::new(rows, cols, values)?)
    }

    pub fn constant_scalar(&mut self, value: f64) -> Result<Var> {
        self.constant(1, 1, vec![value])
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Result<Var> {
        self.constant(rows, cols, vec![0.0; rows * cols])
    }

    /// `a · b` for `a: m×k`, `b: k×n`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.cols != sb.rows {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, k, n) = (sa.rows, sa.cols, sb.cols);
        let mut out = vec![0.0; m * n];
        {
            let av = self.value(a);
            let bv = self.value(b);
            for i in 0..m {
                let orow = &mut out[i * n..(i + 1) * n];
                for p in 0..k {
                    let aip = av[i * k + p];
                    if aip == 0.0 {
                        continue;
                    }
                    let brow = &bv[p * n..(p + 1) * n];
                    for (o, bpj) in orow.iter_mut().zip(brow) {
                        *o += aip * bpj;
                    }
                }
            }
        }
        self.push(Shape::new(m, n), out, Op::MatMul(a, b))
    }

    /// `a · bᵀ` for `a: m×k`, `b: n×k`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.cols != sb.cols {
            return Err(Error::Dimension {
                op: "matmul_nt",
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, k, n) = (sa.rows, sa.cols, sb.rows);
        let mut out = vec![0.0; m * n];
        {
            let av = self.value(a);
            let bv = self.value(b);
            for i in 0..m {
                let arow = &av[i * k..(i + 1) * k];
                for j in 0..n {
                    let brow = &bv[j * k..(j + 1) * k];
                    out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
                }
            }
        }
        self.push(Shape::new(m, n), out, Op::MatMulNt(a, b))
    }

    fn binary(&mut self, kind: OpKind, a: Var, b: Var) -> Result<Var> {
        let (bcast, shape) = Broadcast::resolve(kind.name(), self.shape(a), self.shape(b))?;
        let cols = shape.cols;
        let out: Vec<f64> = {
            let av = self.value(a);
            let bv = self.value(b);
            (0..shape.len())
                .map(|i| {
                    let x = av[bcast.lhs_index(i, cols)];
                    let y = bv[bcast.rhs_index(i, cols)];
                    match kind {
                        OpKind::Add => x + y,
                        OpKind::Sub => x - y,
                        _ => x * y,
                    }
                })
                .collect()
        };
        self.push(
            shape,
            out,
            Op::Binary {
                kind,
                lhs: a,
                rhs: b,
                bcast,
            },
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(OpKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(OpKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(OpKind::Mul, a, b)
    }

    fn unary(&mut self, kind: OpKind, a: Var) -> Result<Var> {
        let shape = self.shape(a);
        let out: Vec<f64> = {
            let av = self.value(a);
            if kind == OpKind::Log1p {
                if let Some(&bad) = av.iter().find(|x| **x < 0.0) {
                    return Err(Error::Domain {
                        op: "log1p",
                        value: bad,
                    });
                }
            }
            av.iter()
                .map(|&x| match kind {
                    OpKind::Sigmoid => sigmoid(x),
                    OpKind::Tanh => libm::tanh(x),
                    OpKind::Log1p => libm::log1p(x),
                    _ => libm::fabs(x),
                })
                .collect()
        };
        self.push(shape, out, Op::Unary { kind, input: a })
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(OpKind::Sigmoid, a)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(OpKind::Tanh, a)
    }

    /// `ln(1 + x)`; inputs below zero are a domain error.
    pub fn log1p(&mut self, a: Var) -> Result<Var> {
        self.unary(OpKind::Log1p, a)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(OpKind::Abs, a)
    }

    /// Dispatches an element-wise operation; binary kinds require `b`.
    pub fn pointwise(&mut self, op: Pointwise, a: Var, b: Option<Var>) -> Result<Var> {
        let need_rhs = || Error::contract("binary pointwise op needs two operands");
        match op {
            Pointwise::Sigmoid => self.sigmoid(a),
            Pointwise::Tanh => self.tanh(a),
            Pointwise::Log1p => self.log1p(a),
            Pointwise::Abs => self.abs(a),
            Pointwise::Add => self.add(a, b.ok_or_else(need_rhs)?),
            Pointwise::Mul => self.mul(a, b.ok_or_else(need_rhs)?),
            Pointwise::Sub => self.sub(a, b.ok_or_else(need_rhs)?),
        }
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let shape = self.shape(a);
        let out = self.value(a).iter().map(|x| x * factor).collect();
        self.push(shape, out, Op::Scale(a, factor))
    }

    /// `1 - a`, element-wise.
    pub fn one_minus(&mut self, a: Var) -> Result<Var> {
        let one = self.constant_scalar(1.0)?;
        self.sub(one, a)
    }

    /// Row-wise softmax. `mask` (row-major, same extent as `a`) marks the
    /// entries that take part; the others come out as exactly zero.
    pub fn row_softmax(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let shape = self.shape(a);
        if let Some(m) = mask {
            if m.len() != shape.len() {
                return Err(Error::Dimension {
                    op: "row_softmax mask",
                    lhs: shape,
                    rhs: Shape::new(1, m.len()),
                });
            }
        }
        let mut out = vec![0.0; shape.len()];
        {
            let av = self.value(a);
            let n = shape.cols;
            for r in 0..shape.rows {
                let row = &av[r * n..(r + 1) * n];
                let keep = |j: usize| mask.is_none_or(|m| m[r * n + j]);
                let max = (0..n)
                    .filter(|&j| keep(j))
                    .map(|j| row[j])
                    .fold(f64::NEG_INFINITY, f64::max);
                if max == f64::NEG_INFINITY {
                    return Err(Error::DegenerateRow { row: r });
                }
                let orow = &mut out[r * n..(r + 1) * n];
                let mut total = 0.0;
                for j in 0..n {
                    if keep(j) {
                        let e = libm::exp(row[j] - max);
                        orow[j] = e;
                        total += e;
                    }
                }
                for o in orow.iter_mut() {
                    *o /= total;
                }
            }
        }
        self.push(
            shape,
            out,
            Op::Softmax {
                input: a,
                mask: mask.map(|m| m.to_vec()),
            },
        )
    }

    /// Copies rows `ids` of `table` (any recorded value, including a
    /// parameter) into a new `|ids|×d` value.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let shape = self.shape(table);
        let d = shape.cols;
        let mut out = Vec::with_capacity(ids.len() * d);
        {
            let tv = self.value(table);
            for &id in ids {
                if id >= shape.rows {
                    return Err(Error::Index {
                        what: "gather_rows",
                        index: id,
                        extent: shape.rows,
                    });
                }
                out.extend_from_slice(&tv[id * d..(id + 1) * d]);
            }
        }
        self.push(
            Shape::new(ids.len(), d),
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    pub fn row(&mut self, a: Var, index: usize) -> Result<Var> {
        self.gather_rows(a, &[index])
    }

    /// `[a, b]` along columns; both operands must have equal row counts.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.rows != sb.rows {
            return Err(Error::Dimension {
                op: "concat_cols",
                lhs: sa,
                rhs: sb,
            });
        }
        let cols = sa.cols + sb.cols;
        let mut out = Vec::with_capacity(sa.rows * cols);
        {
            let av = self.value(a);
            let bv = self.value(b);
            for r in 0..sa.rows {
                out.extend_from_slice(&av[r * sa.cols..(r + 1) * sa.cols]);
                out.extend_from_slice(&bv[r * sb.cols..(r + 1) * sb.cols]);
            }
        }
        self.push(Shape::new(sa.rows, cols), out, Op::Concat(a, b))
    }

    /// Vertical concatenation of values with equal column counts.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("stack_rows needs at least one operand"))?;
        let cols = self.shape(*first).cols;
        let mut rows = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.cols != cols {
                return Err(Error::Dimension {
                    op: "stack_rows",
                    lhs: self.shape(*first),
                    rhs: s,
                });
            }
            rows += s.rows;
        }
        let mut out = Vec::with_capacity(rows * cols);
        for &p in parts {
            out.extend_from_slice(self.value(p));
        }
        self.push(Shape::new(rows, cols), out, Op::Stack(parts.to_vec()))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let total = self.value(a).iter().sum();
        self.push(Shape::scalar(), vec![total], Op::Sum(a))
    }

    /// Per-row softmax cross-entropy `-log softmax(logits_r)[labels_r]`,
    /// returned as an `m×1` column. `col_mask` excludes columns from every
    /// row's normalization.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        labels: &[usize],
        col_mask: Option<&[bool]>,
    ) -> Result<Var> {
        let shape = self.shape(logits);
        if labels.len() != shape.rows {
            return Err(Error::Dimension {
                op: "cross_entropy labels",
                lhs: shape,
                rhs: Shape::new(labels.len(), 1),
            });
        }
        if let Some(m) = col_mask {
            if m.len() != shape.cols {
                return Err(Error::Dimension {
                    op: "cross_entropy mask",
                    lhs: shape,
                    rhs: Shape::new(1, m.len()),
                });
            }
        }
        let n = shape.cols;
        let keep = |j: usize| col_mask.is_none_or(|m| m[j]);
        let mut probs = vec![0.0; shape.len()];
        let mut losses = Vec::with_capacity(shape.rows);
        {
            let lv = self.value(logits);
            for (r, &label) in labels.iter().enumerate() {
                if label >= n || !keep(label) {
                    return Err(Error::Index {
                        what: "cross_entropy label",
                        index: label,
                        extent: n,
                    });
                }
                let row = &lv[r * n..(r + 1) * n];
                let max = (0..n)
                    .filter(|&j| keep(j))
                    .map(|j| row[j])
                    .fold(f64::NEG_INFINITY, f64::max);
                let prow = &mut probs[r * n..(r + 1) * n];
                let mut total = 0.0;
                for j in 0..n {
                    if keep(j) {
                        let e = libm::exp(row[j] - max);
                        prow[j] = e;
                        total += e;
                    }
                }
                for p in prow.iter_mut() {
                    *p /= total;
                }
                losses.push(max + libm::log(total) - row[label]);
            }
        }
        self.push(
            Shape::new(shape.rows, 1),
            losses,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
                col_mask: col_mask.map(|m| m.to_vec()),
            },
        )
    }

    /// `Σ a²` over all rows except the first `skip_rows`.
    pub fn sum_squares(&mut self, a: Var, skip_rows: usize) -> Result<Var> {
        let cols = self.shape(a).cols;
        let start = (skip_rows * cols).min(self.value(a).len());
        let total = self.value(a)[start..].iter().map(|x| x * x).sum();
        self.push(
            Shape::scalar(),
            vec![total],
            Op::SumSquares {
                input: a,
                skip_rows,
            },
        )
    }

    /// Propagates `∂loss/∂·` back through every recorded operation and
    /// returns the gradients of all parameters the loss depends on.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::contract(
                "tape already differentiated; record a new tape for the next step",
            ));
        }
        let ls = self.shape(loss);
        if !ls.is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got {ls}"
            )));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(mut g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if self.fault == Some(node.op.kind()) {
                for v in g.iter_mut() {
                    *v = -*v;
                }
            }
            self.backward_node(idx, &g, &mut grads);
            if matches!(node.op, Op::Param(_)) {
                grads[idx] = Some(g);
            }
        }

        let mut out = Gradients::empty(self.store.len());
        for (pid, node) in self.param_nodes.iter().enumerate() {
            if let Some(v) = node {
                if v.0 <= loss.0 {
                    out.per_param[pid] = grads[v.0].take();
                }
            }
        }
        Ok(out)
    }

    fn backward_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out_vals = &node.values;
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa.rows, sa.cols, sb.cols);
                let av = self.value(*a);
                let bv = self.value(*b);
                // da = g · bᵀ
                {
                    let da = grad_slot(grads, *a, m * k);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            da[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
                // db = aᵀ · g
                let db = grad_slot(grads, *b, k * n);
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let aip = av[i * k + p];
                        if aip == 0.0 {
                            continue;
                        }
                        let drow = &mut db[p * n..(p + 1) * n];
                        for (d, gij) in drow.iter_mut().zip(grow) {
                            *d += aip * gij;
                        }
                    }
                }
            }
            Op::MatMulNt(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa.rows, sa.cols, sb.rows);
                let av = self.value(*a);
                let bv = self.value(*b);
                // da = g · b
                {
                    let da = grad_slot(grads, *a, m * k);
                    for i in 0..m {
                        let drow = &mut da[i * k..(i + 1) * k];
                        for j in 0..n {
                            let gij = g[i * n + j];
                            if gij == 0.0 {
                                continue;
                            }
                            for (d, bjp) in drow.iter_mut().zip(&bv[j * k..(j + 1) * k]) {
                                *d += gij * bjp;
                            }
                        }
                    }
                }
                // db = gᵀ · a
                let db = grad_slot(grads, *b, n * k);
                for i in 0..m {
                    let arow = &av[i * k..(i + 1) * k];
                    for j in 0..n {
                        let gij = g[i * n + j];
                        if gij == 0.0 {
                            continue;
                        }
                        for (d, aip) in db[j * k..(j + 1) * k].iter_mut().zip(arow) {
                            *d += gij * aip;
                        }
                    }
                }
            }
            Op::Binary {
                kind,
                lhs,
                rhs,
                bcast,
            } => {
                let cols = node.shape.cols;
                let (la, lb) = (self.value(*lhs).len(), self.value(*rhs).len());
                match kind {
                    OpKind::Add | OpKind::Sub => {
                        {
                            let da = grad_slot(grads, *lhs, la);
                            for (i, gi) in g.iter().enumerate() {
                                da[bcast.lhs_index(i, cols)] += gi;
                            }
                        }
                        let sign = if *kind == OpKind::Sub { -1.0 } else { 1.0 };
                        let db = grad_slot(grads, *rhs, lb);
                        for (i, gi) in g.iter().enumerate() {
                            db[bcast.rhs_index(i, cols)] += sign * gi;
                        }
                    }
                    _ => {
                        let av = self.value(*lhs);
                        let bv = self.value(*rhs);
                        {
                            let da = grad_slot(grads, *lhs, la);
                            for (i, gi) in g.iter().enumerate() {
                                da[bcast.lhs_index(i, cols)] += gi * bv[bcast.rhs_index(i, cols)];
                            }
                        }
                        let db = grad_slot(grads, *rhs, lb);
                        for (i, gi) in g.iter().enumerate() {
                            db[bcast.rhs_index(i, cols)] += gi * av[bcast.lhs_index(i, cols)];
                        }
                    }
                }
            }
            Op::Unary { kind, input } => {
                let xv = self.value(*input);
                let dx = grad_slot(grads, *input, xv.len());
                for i in 0..g.len() {
                    let y = out_vals[i];
                    let local = match kind {
                        OpKind::Sigmoid => y * (1.0 - y),
                        OpKind::Tanh => 1.0 - y * y,
                        OpKind::Log1p => 1.0 / (1.0 + xv[i]),
                        _ => {
                            if xv[i] > 0.0 {
                                1.0
                            } else if xv[i] < 0.0 {
                                -1.0
                            } else {
                                0.0
                            }
                        }
                    };
                    dx[i] += g[i] * local;
                }
            }
            Op::Scale(a, factor) => {
                let dx = grad_slot(grads, *a, g.len());
                for (d, gi) in dx.iter_mut().zip(g) {
                    *d += gi * factor;
                }
            }
            Op::Softmax { input, mask } => {
                let n = node.shape.cols;
                let dx = grad_slot(grads, *input, g.len());
                for r in 0..node.shape.rows {
                    let y = &out_vals[r * n..(r + 1) * n];
                    let gr = &g[r * n..(r + 1) * n];
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        if mask.as_ref().is_none_or(|m| m[r * n + j]) {
                            dx[r * n + j] += y[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::Gather { table, ids } => {
                let ts = self.shape(*table);
                let d = ts.cols;
                let dt = grad_slot(grads, *table, ts.len());
                for (r, &id) in ids.iter().enumerate() {
                    for (dst, src) in dt[id * d..(id + 1) * d]
                        .iter_mut()
                        .zip(&g[r * d..(r + 1) * d])
                    {
                        *dst += src;
                    }
                }
            }
            Op::Concat(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let cols = sa.cols + sb.cols;
                {
                    let da = grad_slot(grads, *a, sa.len());
                    for r in 0..sa.rows {
                        for c in 0..sa.cols {
                            da[r * sa.cols + c] += g[r * cols + c];
                        }
                    }
                }
                let db = grad_slot(grads, *b, sb.len());
                for r in 0..sb.rows {
                    for c in 0..sb.cols {
                        db[r * sb.cols + c] += g[r * cols + sa.cols + c];
                    }
                }
            }
            Op::Stack(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.shape(*p).len();
                    let dp = grad_slot(grads, *p, len);
                    for (d, gi) in dp.iter_mut().zip(&g[offset..offset + len]) {
                        *d += gi;
                    }
                    offset += len;
                }
            }
            Op::Sum(a) => {
                let len = self.shape(*a).len();
                let dx = grad_slot(grads, *a, len);
                for d in dx.iter_mut() {
                    *d += g[0];
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
                col_mask,
            } => {
                let s = self.shape(*logits);
                let n = s.cols;
                let dx = grad_slot(grads, *logits, s.len());
                for (r, &label) in labels.iter().enumerate() {
                    let gr = g[r];
                    for j in 0..n {
                        if col_mask.as_ref().is_none_or(|m| m[j]) {
                            dx[r * n + j] += gr * probs[r * n + j];
                        }
                    }
                    dx[r * n + label] -= gr;
                }
            }
            Op::SumSquares { input, skip_rows } => {
                let xv = self.value(*input);
                let start = (skip_rows * self.shape(*input).cols).min(xv.len());
                let dx = grad_slot(grads, *input, xv.len());
                for i in start..xv.len() {
                    dx[i] += 2.0 * xv[i] * g[0];
                }
            }
        }
    }
}
