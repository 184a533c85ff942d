//! Reverse-mode automatic differentiation over an append-only tape.
//!
//! Every node holds a matrix value; scalars are 1x1 matrices. Elementwise
//! operations therefore keep plain scalar semantics while letting a whole
//! batch of states flow through one node. Binary elementwise operations accept
//! operands of equal shape, or a 1x1 operand broadcast against the other.

use thiserror::Error;

use super::matrix::Matrix;
use super::params::ParamStore;

/// Log-probability reported for masked-out actions.
pub const MASKED_LOG_PROB: f64 = -1e9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Constant,
    Param,
    Add,
    Sub,
    Mul,
    Div,
    Max,
    Neg,
    Exp,
    Log,
    Sigmoid,
    Tanh,
    Relu,
    Square,
    Scale,
    LogSumExp,
    MatMul,
    AddRowBias,
    MaskedLogSoftmax,
    GatherCols,
    GatherElems,
    SelectRows,
    SegmentSum,
    Sum,
    Mean,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param { offset: usize },
    Binary { a: Var, b: Var },
    Unary { a: Var },
    Scale { a: Var, factor: f64 },
    LogSumExp { inputs: Vec<Var> },
    MatMul { a: Var, b: Var },
    AddRowBias { x: Var, bias: Var },
    MaskedLogSoftmax { x: Var, mask: Vec<bool> },
    GatherCols { x: Var, cols: Vec<usize> },
    GatherElems { x: Var, idx: Vec<usize> },
    SelectRows { x: Var, rows: Vec<usize> },
    SegmentSum { x: Var, segments: Vec<usize> },
    Sum { x: Var },
    Mean { x: Var },
}

#[derive(Debug)]
struct Node {
    kind: OpKind,
    op: Op,
    value: Matrix,
    /// Cached local partial derivatives (elementwise ops, softmax weights).
    local: Option<Matrix>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].kind
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    /// Input node ids of `v`, always strictly smaller than `v`.
    pub fn inputs(&self, v: Var) -> Vec<Var> {
        match &self.nodes[v.0].op {
            Op::Leaf | Op::Param { .. } => vec![],
            Op::Binary { a, b } | Op::MatMul { a, b } => vec![*a, *b],
            Op::AddRowBias { x, bias } => vec![*x, *bias],
            Op::Unary { a } | Op::Scale { a, .. } => vec![*a],
            Op::LogSumExp { inputs } => inputs.clone(),
            Op::MaskedLogSoftmax { x, .. }
            | Op::GatherCols { x, .. }
            | Op::GatherElems { x, .. }
            | Op::SelectRows { x, .. }
            | Op::SegmentSum { x, .. }
            | Op::Sum { x }
            | Op::Mean { x } => vec![*x],
        }
    }

    fn push(&mut self, kind: OpKind, op: Op, value: Matrix, local: Option<Matrix>) -> Var {
        self.nodes.push(Node {
            kind,
            op,
            value,
            local,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(OpKind::Constant, Op::Leaf, value, None)
    }

    pub fn constant_scalar(&mut self, value: f64) -> Var {
        self.constant(Matrix::scalar(value))
    }

    /// Registers parameter group `name` of `store` as a differentiable leaf.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Var {
        let offset = store
            .group(name)
            .unwrap_or_else(|| panic!("unknown parameter group `{name}`"))
            .offset;
        let value = store.matrix(name);
        self.push(OpKind::Param, Op::Param { offset }, value, None)
    }

    fn broadcast_shape(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
    ) -> Result<(usize, usize), DiffError> {
        let sa = self.value(a).shape();
        let sb = self.value(b).shape();
        if sa == sb || sb == (1, 1) {
            Ok(sa)
        } else if sa == (1, 1) {
            Ok(sb)
        } else {
            Err(DiffError::ShapeMismatch {
                op,
                left: sa,
                right: sb,
            })
        }
    }

    fn binary(
        &mut self,
        kind: OpKind,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var, DiffError> {
        let (rows, cols) = self.broadcast_shape(name, a, b)?;
        let va = self.value(a);
        let vb = self.value(b);
        let pick = |m: &Matrix, i: usize| if m.is_scalar() { m.data()[0] } else { m.data()[i] };
        let data = (0..rows * cols).map(|i| f(pick(va, i), pick(vb, i))).collect();
        let value = Matrix::from_vec(rows, cols, data);
        Ok(self.push(kind, Op::Binary { a, b }, value, None))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary(OpKind::Add, "add", a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary(OpKind::Sub, "sub", a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary(OpKind::Mul, "mul", a, b, |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        if let Some(pos) = self.value(b).data().iter().position(|&y| y == 0.0) {
            return Err(DiffError::Domain {
                op: "div",
                detail: format!("division by zero at element {pos}"),
            });
        }
        self.binary(OpKind::Div, "div", a, b, |x, y| x / y)
    }

    /// Elementwise maximum; ties route the gradient to `a`.
    pub fn max(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary(OpKind::Max, "max", a, b, f64::max)
    }

    fn unary(&mut self, kind: OpKind, a: Var, value: Matrix, local: Matrix) -> Var {
        self.push(kind, Op::Unary { a }, value, Some(local))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| -x);
        let local = Matrix::filled(value.rows(), value.cols(), -1.0);
        self.unary(OpKind::Neg, a, value, local)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        let local = value.clone();
        self.unary(OpKind::Exp, a, value, local)
    }

    pub fn log(&mut self, a: Var) -> Result<Var, DiffError> {
        let va = self.value(a);
        if let Some(&bad) = va.data().iter().find(|&&x| !(x > 0.0)) {
            return Err(DiffError::Domain {
                op: "log",
                detail: format!("argument {bad} is not positive"),
            });
        }
        let value = va.map(f64::ln);
        let local = va.map(|x| 1.0 / x);
        Ok(self.unary(OpKind::Log, a, value, local))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let local = value.map(|s| s * (1.0 - s));
        self.unary(OpKind::Sigmoid, a, value, local)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        let local = value.map(|t| 1.0 - t * t);
        self.unary(OpKind::Tanh, a, value, local)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let value = va.map(|x| x.max(0.0));
        let local = va.map(|x| if x > 0.0 { 1.0 } else { 0.0 });
        self.unary(OpKind::Relu, a, value, local)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let value = va.map(|x| x * x);
        let local = va.map(|x| 2.0 * x);
        self.unary(OpKind::Square, a, value, local)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|x| x * factor);
        self.push(OpKind::Scale, Op::Scale { a, factor }, value, None)
    }

    /// `log sum_i exp(x_i)` over scalar nodes.
    pub fn logsumexp(&mut self, inputs: &[Var]) -> Result<Var, DiffError> {
        if inputs.is_empty() {
            return Err(DiffError::Domain {
                op: "logsumexp",
                detail: "empty input list".into(),
            });
        }
        let mut xs = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let m = self.value(v);
            if !m.is_scalar() {
                return Err(DiffError::ShapeMismatch {
                    op: "logsumexp",
                    left: m.shape(),
                    right: (1, 1),
                });
            }
            xs.push(m.item());
        }
        let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = xs.iter().map(|x| (x - max).exp()).sum();
        let lse = max + sum.ln();
        let weights = Matrix::column(xs.iter().map(|x| (x - lse).exp()).collect());
        Ok(self.push(
            OpKind::LogSumExp,
            Op::LogSumExp {
                inputs: inputs.to_vec(),
            },
            Matrix::scalar(lse),
            Some(weights),
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(DiffError::ShapeMismatch {
                op: "matmul",
                left: va.shape(),
                right: vb.shape(),
            });
        }
        let value = va.matmul(vb);
        Ok(self.push(OpKind::MatMul, Op::MatMul { a, b }, value, None))
    }

    /// Adds the 1 x c row `bias` to every row of the n x c matrix `x`.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var, DiffError> {
        let (vx, vb) = (self.value(x), self.value(bias));
        if vb.rows() != 1 || vb.cols() != vx.cols() {
            return Err(DiffError::ShapeMismatch {
                op: "add_row_bias",
                left: vx.shape(),
                right: vb.shape(),
            });
        }
        let mut value = vx.clone();
        let b = vb.data().to_vec();
        for r in 0..value.rows() {
            for (v, bb) in value.row_mut(r).iter_mut().zip(&b) {
                *v += bb;
            }
        }
        Ok(self.push(OpKind::AddRowBias, Op::AddRowBias { x, bias }, value, None))
    }

    /// Row-wise log-softmax restricted to entries where `mask` is true.
    ///
    /// Masked entries read [`MASKED_LOG_PROB`] and receive no gradient, which is
    /// the same as adding -1e9 to their logits before normalizing.
    pub fn masked_log_softmax(&mut self, x: Var, mask: Vec<bool>) -> Result<Var, DiffError> {
        let vx = self.value(x);
        let (rows, cols) = vx.shape();
        if mask.len() != rows * cols {
            return Err(DiffError::ShapeMismatch {
                op: "masked_log_softmax",
                left: (rows, cols),
                right: (mask.len(), 1),
            });
        }
        let mut value = Matrix::filled(rows, cols, MASKED_LOG_PROB);
        let mut probs = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let row = vx.row(r);
            let m = &mask[r * cols..(r + 1) * cols];
            let max = row
                .iter()
                .zip(m)
                .filter(|(_, &ok)| ok)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(DiffError::Domain {
                    op: "masked_log_softmax",
                    detail: format!("row {r} has no valid entries"),
                });
            }
            let sum: f64 = row
                .iter()
                .zip(m)
                .filter(|(_, &ok)| ok)
                .map(|(&v, _)| (v - max).exp())
                .sum();
            let lse = max + sum.ln();
            for c in 0..cols {
                if m[c] {
                    let lp = row[c] - lse;
                    value.set(r, c, lp);
                    probs.set(r, c, lp.exp());
                }
            }
        }
        Ok(self.push(
            OpKind::MaskedLogSoftmax,
            Op::MaskedLogSoftmax { x, mask },
            value,
            Some(probs),
        ))
    }

    /// Picks column `cols[r]` of each row r, giving an n x 1 column.
    pub fn gather_cols(&mut self, x: Var, cols: Vec<usize>) -> Result<Var, DiffError> {
        let vx = self.value(x);
        if cols.len() != vx.rows() || cols.iter().any(|&c| c >= vx.cols()) {
            return Err(DiffError::ShapeMismatch {
                op: "gather_cols",
                left: vx.shape(),
                right: (cols.len(), 1),
            });
        }
        let value = Matrix::column(cols.iter().enumerate().map(|(r, &c)| vx.get(r, c)).collect());
        Ok(self.push(OpKind::GatherCols, Op::GatherCols { x, cols }, value, None))
    }

    /// Picks flat elements of `x` by index, giving a column.
    pub fn gather_elems(&mut self, x: Var, idx: Vec<usize>) -> Result<Var, DiffError> {
        let vx = self.value(x);
        if idx.iter().any(|&i| i >= vx.len()) {
            return Err(DiffError::ShapeMismatch {
                op: "gather_elems",
                left: vx.shape(),
                right: (idx.len(), 1),
            });
        }
        let value = Matrix::column(idx.iter().map(|&i| vx.data()[i]).collect());
        Ok(self.push(OpKind::GatherElems, Op::GatherElems { x, idx }, value, None))
    }

    pub fn select_rows(&mut self, x: Var, rows: Vec<usize>) -> Result<Var, DiffError> {
        let vx = self.value(x);
        if rows.iter().any(|&r| r >= vx.rows()) {
            return Err(DiffError::ShapeMismatch {
                op: "select_rows",
                left: vx.shape(),
                right: (rows.len(), vx.cols()),
            });
        }
        let cols = vx.cols();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in &rows {
            data.extend_from_slice(vx.row(r));
        }
        let value = Matrix::from_vec(rows.len(), cols, data);
        Ok(self.push(OpKind::SelectRows, Op::SelectRows { x, rows }, value, None))
    }

    /// Sums the rows of an n x 1 column into `n_segments` buckets.
    pub fn segment_sum(
        &mut self,
        x: Var,
        segments: Vec<usize>,
        n_segments: usize,
    ) -> Result<Var, DiffError> {
        let vx = self.value(x);
        if vx.cols() != 1 || segments.len() != vx.rows() || segments.iter().any(|&s| s >= n_segments)
        {
            return Err(DiffError::ShapeMismatch {
                op: "segment_sum",
                left: vx.shape(),
                right: (segments.len(), n_segments),
            });
        }
        let mut out = vec![0.0; n_segments];
        for (&s, &v) in segments.iter().zip(vx.data()) {
            out[s] += v;
        }
        Ok(self.push(
            OpKind::SegmentSum,
            Op::SegmentSum { x, segments },
            Matrix::column(out),
            None,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Matrix::scalar(self.value(x).sum());
        self.push(OpKind::Sum, Op::Sum { x }, value, None)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let value = Matrix::scalar(vx.sum() / vx.len().max(1) as f64);
        self.push(OpKind::Mean, Op::Mean { x }, value, None)
    }

    /// Accumulates d(loss)/d(param) into `store.grads` for every parameter
    /// leaf on the tape. Gradients add to whatever `store` already holds.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) {
        assert!(
            self.value(loss).is_scalar(),
            "backward needs a scalar loss node"
        );
        let mut grads: Vec<Option<Matrix>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param { offset } => {
                    let dst = &mut store.grads_mut()[*offset..*offset + g.len()];
                    for (d, v) in dst.iter_mut().zip(g.data()) {
                        *d += v;
                    }
                }
                Op::Binary { a, b } => {
                    let va = self.value(*a);
                    let vb = self.value(*b);
                    let pick =
                        |m: &Matrix, k: usize| if m.is_scalar() { m.data()[0] } else { m.data()[k] };
                    let n = g.len();
                    let (mut ga, mut gb) = (vec![0.0; n], vec![0.0; n]);
                    for k in 0..n {
                        let (x, y, gk) = (pick(va, k), pick(vb, k), g.data()[k]);
                        let (da, db) = match node.kind {
                            OpKind::Add => (1.0, 1.0),
                            OpKind::Sub => (1.0, -1.0),
                            OpKind::Mul => (y, x),
                            OpKind::Div => (1.0 / y, -x / (y * y)),
                            OpKind::Max => {
                                if x >= y {
                                    (1.0, 0.0)
                                } else {
                                    (0.0, 1.0)
                                }
                            }
                            other => unreachable!("{other:?} is not binary"),
                        };
                        ga[k] = gk * da;
                        gb[k] = gk * db;
                    }
                    let (r, c) = g.shape();
                    accumulate_broadcast(&mut grads, *a, va, Matrix::from_vec(r, c, ga));
                    accumulate_broadcast(&mut grads, *b, vb, Matrix::from_vec(r, c, gb));
                }
                Op::Unary { a } => {
                    let local = node.local.as_ref().expect("unary ops cache partials");
                    let data = g.data().iter().zip(local.data()).map(|(x, y)| x * y).collect();
                    accumulate(&mut grads, *a, Matrix::from_vec(g.rows(), g.cols(), data));
                }
                Op::Scale { a, factor } => {
                    accumulate(&mut grads, *a, g.map(|x| x * factor));
                }
                Op::LogSumExp { inputs } => {
                    let w = node.local.as_ref().expect("softmax weights");
                    let gs = g.item();
                    for (k, v) in inputs.iter().enumerate() {
                        accumulate(&mut grads, *v, Matrix::scalar(gs * w.data()[k]));
                    }
                }
                Op::MatMul { a, b } => {
                    let va = self.value(*a);
                    let vb = self.value(*b);
                    accumulate(&mut grads, *a, Matrix::gemm(&g, false, vb, true));
                    accumulate(&mut grads, *b, Matrix::gemm(va, true, &g, false));
                }
                Op::AddRowBias { x, bias } => {
                    let mut gb = vec![0.0; g.cols()];
                    for r in 0..g.rows() {
                        for (acc, v) in gb.iter_mut().zip(g.row(r)) {
                            *acc += v;
                        }
                    }
                    let cols = g.cols();
                    accumulate(&mut grads, *x, g);
                    accumulate(&mut grads, *bias, Matrix::from_vec(1, cols, gb));
                }
                Op::MaskedLogSoftmax { x, mask } => {
                    let probs = node.local.as_ref().expect("softmax probabilities");
                    let (rows, cols) = g.shape();
                    let mut gx = Matrix::zeros(rows, cols);
                    for r in 0..rows {
                        let m = &mask[r * cols..(r + 1) * cols];
                        let total: f64 = g.row(r).iter().zip(m).filter(|(_, &ok)| ok).map(|(v, _)| v).sum();
                        for c in 0..cols {
                            if m[c] {
                                gx.set(r, c, g.get(r, c) - probs.get(r, c) * total);
                            }
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::GatherCols { x, cols } => {
                    let (rows, width) = self.value(*x).shape();
                    let mut gx = Matrix::zeros(rows, width);
                    for (r, &c) in cols.iter().enumerate() {
                        gx.set(r, c, g.data()[r]);
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::GatherElems { x, idx } => {
                    let (rows, width) = self.value(*x).shape();
                    let mut gx = Matrix::zeros(rows, width);
                    for (k, &i) in idx.iter().enumerate() {
                        gx.data_mut()[i] += g.data()[k];
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::SelectRows { x, rows } => {
                    let (n, width) = self.value(*x).shape();
                    let mut gx = Matrix::zeros(n, width);
                    for (k, &r) in rows.iter().enumerate() {
                        for (d, v) in gx.row_mut(r).iter_mut().zip(g.row(k)) {
                            *d += v;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::SegmentSum { x, segments } => {
                    let data = segments.iter().map(|&s| g.data()[s]).collect();
                    accumulate(&mut grads, *x, Matrix::column(data));
                }
                Op::Sum { x } => {
                    let (r, c) = self.value(*x).shape();
                    accumulate(&mut grads, *x, Matrix::filled(r, c, g.item()));
                }
                Op::Mean { x } => {
                    let (r, c) = self.value(*x).shape();
                    let n = (r * c).max(1) as f64;
                    accumulate(&mut grads, *x, Matrix::filled(r, c, g.item() / n));
                }
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn accumulate_broadcast(grads: &mut [Option<Matrix>], v: Var, value: &Matrix, g: Matrix) {
    if value.shape() == g.shape() {
        accumulate(grads, v, g);
    } else {
        accumulate(grads, v, Matrix::scalar(g.sum()));
    }
}
