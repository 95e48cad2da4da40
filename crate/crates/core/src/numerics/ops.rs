//! Differentiable tensor operations: forward evaluation, tape recording, and
//! the matching backward rules.
//!
//! Broadcasting is deliberately minimal: equal shapes, scalar against
//! anything, and `[B, N]` against `[N]` (row-wise). That covers every shape
//! the models, twists, and sweeps produce.

use std::sync::Arc;

use super::tape::{src_value, Node, Src, Tape};
use super::tensor::Tensor;

pub const LN_2PI: f64 = 1.8378770664093453;

pub(crate) enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Ln,
    Sqrt,
    Tanh,
    Sigmoid,
    Softplus,
    SumAll,
    Matmul,
    GatherRows(Arc<Vec<usize>>),
    StackCols,
    Reshape,
    LogsumexpAll,
}

// ── shape helpers ──

fn is_scalar(shape: &[usize]) -> bool {
    shape.iter().product::<usize>() == 1
}

/// Output shape of an elementwise binary op, or panic if incompatible.
fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    if a == b {
        return a.to_vec();
    }
    if is_scalar(a) && is_scalar(b) {
        // Both single-element but differently shaped ([] vs [1] vs [1, 1]):
        // keep the higher-rank one, as general broadcasting would.
        return if a.len() >= b.len() { a.to_vec() } else { b.to_vec() };
    }
    if is_scalar(b) {
        return a.to_vec();
    }
    if is_scalar(a) {
        return b.to_vec();
    }
    if a.len() == 2 && b.len() == 1 && a[1] == b[0] {
        return a.to_vec();
    }
    if b.len() == 2 && a.len() == 1 && b[1] == a[0] {
        return b.to_vec();
    }
    panic!("incompatible shapes for broadcast: {a:?} vs {b:?}");
}

/// Value of the input at flat index `i` of the broadcast output.
#[inline]
fn bvalue(data: &[f64], in_shape: &[usize], out_shape: &[usize], i: usize) -> f64 {
    if in_shape == out_shape {
        data[i]
    } else if data.len() == 1 {
        data[0]
    } else {
        // [N] broadcast over rows of [B, N]
        data[i % data.len()]
    }
    // out_shape is only needed to document intent; indexing is row-major.
}

/// Sum an output-shaped adjoint down to the input's shape.
fn reduce_adjoint(adj: &[f64], out_shape: &[usize], in_shape: &[usize]) -> Vec<f64> {
    let in_len: usize = in_shape.iter().product();
    if in_shape == out_shape {
        return adj.to_vec();
    }
    if in_len == 1 {
        return vec![adj.iter().sum()];
    }
    // rows of [B, N] summed into [N]
    let mut out = vec![0.0; in_len];
    for (i, a) in adj.iter().enumerate() {
        out[i % in_len] += a;
    }
    out
}

// ── recording ──

fn record(op: Op, inputs: &[&Tensor], shape: Vec<usize>, data: Vec<f64>) -> Tensor {
    let data = Arc::new(data);
    let tape = inputs.iter().find_map(|t| t.node().map(|(tape, _)| tape.clone()));
    let node = tape.map(|tape: Tape| {
        let srcs = inputs.iter().map(|t| tape.src_of(t)).collect();
        let id = tape.push(Node { op, srcs, value: Arc::clone(&data), shape: shape.clone() });
        (tape, id)
    });
    Tensor::with_node(shape, data, node)
}

fn binary(a: &Tensor, b: &Tensor, op: Op, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let shape = broadcast_shape(a.shape(), b.shape());
    let len: usize = shape.iter().product();
    let (ad, bd) = (a.data(), b.data());
    let data = (0..len)
        .map(|i| f(bvalue(ad, a.shape(), &shape, i), bvalue(bd, b.shape(), &shape, i)))
        .collect();
    record(op, &[a, b], shape, data)
}

fn unary(a: &Tensor, op: Op, f: impl Fn(f64) -> f64) -> Tensor {
    let data = a.data().iter().map(|&x| f(x)).collect();
    record(op, &[a], a.shape().to_vec(), data)
}

// ── stable scalar kernels ──

#[inline]
pub fn sigmoid_f(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus_f(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

// ── public operations ──

impl Tensor {
    pub fn exp(&self) -> Tensor {
        unary(self, Op::Exp, f64::exp)
    }

    /// Natural log; zero inputs yield −∞ by documented exception.
    pub fn ln(&self) -> Tensor {
        unary(self, Op::Ln, f64::ln)
    }

    pub fn sqrt(&self) -> Tensor {
        unary(self, Op::Sqrt, f64::sqrt)
    }

    pub fn tanh(&self) -> Tensor {
        unary(self, Op::Tanh, f64::tanh)
    }

    pub fn sigmoid(&self) -> Tensor {
        unary(self, Op::Sigmoid, sigmoid_f)
    }

    pub fn softplus(&self) -> Tensor {
        unary(self, Op::Softplus, softplus_f)
    }

    pub fn square(&self) -> Tensor {
        binary(self, self, Op::Mul, |a, b| a * b)
    }

    pub fn sum_all(&self) -> Tensor {
        record(Op::SumAll, &[self], vec![], vec![self.data().iter().sum()])
    }

    pub fn mean_all(&self) -> Tensor {
        assert!(!self.is_empty(), "mean of empty tensor");
        &self.sum_all() / self.len() as f64
    }

    /// `[m, k] × [k, n] → [m, n]`.
    pub fn matmul(&self, rhs: &Tensor) -> Tensor {
        let (a, b) = (self.shape(), rhs.shape());
        assert!(a.len() == 2 && b.len() == 2 && a[1] == b[0], "matmul shapes {a:?} × {b:?}");
        let (m, k, n) = (a[0], a[1], b[1]);
        let data = matmul_raw(self.data(), rhs.data(), m, k, n);
        record(Op::Matmul, &[self, rhs], vec![m, n], data)
    }

    /// Select rows by index (axis 0); repeated indices allowed. Backward
    /// scatter-adds, so gradients flow to every selected ancestor.
    pub fn gather_rows(&self, indices: &[usize]) -> Tensor {
        let rows = self.shape().first().copied().expect("gather_rows on scalar");
        let width = self.len() / rows;
        let mut shape = self.shape().to_vec();
        shape[0] = indices.len();
        let mut data = Vec::with_capacity(indices.len() * width);
        for &ix in indices {
            assert!(ix < rows, "gather index {ix} out of {rows} rows");
            data.extend_from_slice(&self.data()[ix * width..(ix + 1) * width]);
        }
        record(Op::GatherRows(Arc::new(indices.to_vec())), &[self], shape, data)
    }

    /// Reinterpret the flat data under a new shape of equal length.
    pub fn reshape(&self, shape: Vec<usize>) -> Tensor {
        assert_eq!(shape.iter().product::<usize>(), self.len(), "reshape {:?} → {shape:?}", self.shape());
        record(Op::Reshape, &[self], shape, self.data().to_vec())
    }

    /// `[B, D] → [B]`: sum over the trailing axis, via matmul with ones.
    pub fn sum_rows(&self) -> Tensor {
        let s = self.shape();
        assert_eq!(s.len(), 2, "sum_rows wants a matrix, got {s:?}");
        let (b, d) = (s[0], s[1]);
        self.matmul(&Tensor::full(vec![d, 1], 1.0)).reshape(vec![b])
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for kk in 0..k {
            let av = a[i * k + kk];
            if av == 0.0 {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

/// Stack D same-length columns into `[K, D]`.
pub fn stack_cols(cols: &[Tensor]) -> Tensor {
    assert!(!cols.is_empty(), "stack_cols of nothing");
    let k = cols[0].len();
    for c in cols {
        assert_eq!(c.shape().len(), 1, "stack_cols wants 1-D columns, got {:?}", c.shape());
        assert_eq!(c.len(), k, "stack_cols length mismatch");
    }
    let d = cols.len();
    let mut data = vec![0.0; k * d];
    for (j, c) in cols.iter().enumerate() {
        for (i, &v) in c.data().iter().enumerate() {
            data[i * d + j] = v;
        }
    }
    let refs: Vec<&Tensor> = cols.iter().collect();
    record(Op::StackCols, &refs, vec![k, d], data)
}

/// Per-row `log Σ exp` across equally shaped 1-D columns: element i of the
/// result is logsumexp of `cols[..][i]`. The stabilizing shift is a constant,
/// so gradients flow through the exp/ln path only.
pub fn logsumexp_across(cols: &[Tensor]) -> Tensor {
    assert!(!cols.is_empty(), "logsumexp_across of nothing");
    let k = cols[0].len();
    for c in cols {
        assert_eq!(c.shape().len(), 1, "logsumexp_across wants 1-D columns");
        assert_eq!(c.len(), k, "logsumexp_across length mismatch");
    }
    let mut m = vec![f64::NEG_INFINITY; k];
    for c in cols {
        for (i, &v) in c.data().iter().enumerate() {
            m[i] = m[i].max(v);
        }
    }
    let shift = Tensor::column(m.iter().map(|&v| if v.is_finite() { v } else { 0.0 }).collect());
    let mut acc = (&cols[0] - &shift).exp();
    for c in &cols[1..] {
        acc = acc + (c - &shift).exp();
    }
    shift + acc.ln()
}

/// Numerically stable `log Σ exp` over all entries; −∞ entries are absorbed.
pub fn logsumexp(t: &Tensor) -> Tensor {
    assert!(!t.is_empty(), "logsumexp of empty tensor");
    let m = t.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let out = if m == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else if m == f64::INFINITY {
        f64::INFINITY
    } else {
        m + t.data().iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
    };
    record(Op::LogsumexpAll, &[t], vec![], vec![out])
}

/// Stable `log σ(z) = −softplus(−z)`; finite for all finite inputs.
pub fn log_sigmoid(z: &Tensor) -> Tensor {
    -&(-z).softplus()
}

/// Stable `log(1 − σ(z)) = −softplus(z)`.
pub fn log_one_minus_sigmoid(z: &Tensor) -> Tensor {
    -&z.softplus()
}

/// Elementwise `log N(x; mean, variance)`, differentiable in all arguments.
///
/// Panics if any variance entry is not strictly positive.
pub fn gaussian_logpdf(x: &Tensor, mean: &Tensor, variance: &Tensor) -> Tensor {
    assert!(
        variance.data().iter().all(|&v| v > 0.0),
        "gaussian_logpdf: variance must be strictly positive"
    );
    let d = x - mean;
    let quad = &d.square() / &(variance * 2.0);
    let norm = &(&variance.ln() + LN_2PI) * 0.5;
    -&(&quad + &norm)
}

// ── backward rules ──

impl Op {
    /// Adjoints for each source, in source order. `None` marks sources that
    /// are constants (no gradient needed).
    pub(crate) fn backward(&self, adj: &[f64], node: &Node, nodes: &[Node]) -> Vec<Option<Vec<f64>>> {
        let out_shape = &node.shape;
        let want: Vec<bool> = node.srcs.iter().map(|s| matches!(s, Src::Node(_))).collect();
        let input = |i: usize| src_value(&node.srcs[i], nodes);
        match self {
            Op::Leaf => vec![],
            Op::Add => {
                let da = want[0].then(|| reduce_adjoint(adj, out_shape, input(0).1));
                let db = want[1].then(|| reduce_adjoint(adj, out_shape, input(1).1));
                vec![da, db]
            }
            Op::Sub => {
                let da = want[0].then(|| reduce_adjoint(adj, out_shape, input(0).1));
                let db = want[1].then(|| {
                    let neg: Vec<f64> = adj.iter().map(|a| -a).collect();
                    reduce_adjoint(&neg, out_shape, input(1).1)
                });
                vec![da, db]
            }
            Op::Mul => {
                let (ad, ash) = input(0);
                let (bd, bsh) = input(1);
                let da = want[0].then(|| {
                    let g: Vec<f64> =
                        adj.iter().enumerate().map(|(i, a)| a * bvalue(bd, bsh, out_shape, i)).collect();
                    reduce_adjoint(&g, out_shape, ash)
                });
                let db = want[1].then(|| {
                    let g: Vec<f64> =
                        adj.iter().enumerate().map(|(i, a)| a * bvalue(ad, ash, out_shape, i)).collect();
                    reduce_adjoint(&g, out_shape, bsh)
                });
                vec![da, db]
            }
            Op::Div => {
                let (ad, ash) = input(0);
                let (bd, bsh) = input(1);
                let da = want[0].then(|| {
                    let g: Vec<f64> =
                        adj.iter().enumerate().map(|(i, a)| a / bvalue(bd, bsh, out_shape, i)).collect();
                    reduce_adjoint(&g, out_shape, ash)
                });
                let db = want[1].then(|| {
                    let g: Vec<f64> = adj
                        .iter()
                        .enumerate()
                        .map(|(i, a)| {
                            let b = bvalue(bd, bsh, out_shape, i);
                            -a * bvalue(ad, ash, out_shape, i) / (b * b)
                        })
                        .collect();
                    reduce_adjoint(&g, out_shape, bsh)
                });
                vec![da, db]
            }
            Op::Neg => vec![want[0].then(|| adj.iter().map(|a| -a).collect())],
            Op::Exp => {
                vec![want[0].then(|| adj.iter().zip(node.value.iter()).map(|(a, o)| a * o).collect())]
            }
            Op::Ln => {
                let (xd, _) = input(0);
                vec![want[0].then(|| adj.iter().zip(xd).map(|(a, x)| a / x).collect())]
            }
            Op::Sqrt => {
                vec![want[0]
                    .then(|| adj.iter().zip(node.value.iter()).map(|(a, o)| a / (2.0 * o)).collect())]
            }
            Op::Tanh => {
                vec![want[0]
                    .then(|| adj.iter().zip(node.value.iter()).map(|(a, o)| a * (1.0 - o * o)).collect())]
            }
            Op::Sigmoid => {
                vec![want[0]
                    .then(|| adj.iter().zip(node.value.iter()).map(|(a, o)| a * o * (1.0 - o)).collect())]
            }
            Op::Softplus => {
                let (xd, _) = input(0);
                vec![want[0].then(|| adj.iter().zip(xd).map(|(a, x)| a * sigmoid_f(*x)).collect())]
            }
            Op::SumAll => {
                let (_, xsh) = input(0);
                let len: usize = xsh.iter().product();
                vec![want[0].then(|| vec![adj[0]; len])]
            }
            Op::Matmul => {
                let (ad, ash) = input(0);
                let (bd, bsh) = input(1);
                let (m, k, n) = (ash[0], ash[1], bsh[1]);
                let da = want[0].then(|| {
                    // adj [m,n] × bᵀ [n,k]
                    let mut g = vec![0.0; m * k];
                    for i in 0..m {
                        for j in 0..n {
                            let a = adj[i * n + j];
                            if a == 0.0 {
                                continue;
                            }
                            for kk in 0..k {
                                g[i * k + kk] += a * bd[kk * n + j];
                            }
                        }
                    }
                    g
                });
                let db = want[1].then(|| {
                    // aᵀ [k,m] × adj [m,n]
                    let mut g = vec![0.0; k * n];
                    for i in 0..m {
                        for kk in 0..k {
                            let av = ad[i * k + kk];
                            if av == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                g[kk * n + j] += av * adj[i * n + j];
                            }
                        }
                    }
                    g
                });
                vec![da, db]
            }
            Op::GatherRows(indices) => {
                let (_, xsh) = input(0);
                let rows = xsh[0];
                let width: usize = xsh.iter().product::<usize>() / rows;
                vec![want[0].then(|| {
                    let mut g = vec![0.0; rows * width];
                    for (r, &ix) in indices.iter().enumerate() {
                        for c in 0..width {
                            g[ix * width + c] += adj[r * width + c];
                        }
                    }
                    g
                })]
            }
            Op::StackCols => {
                let d = node.srcs.len();
                let k = node.shape[0];
                (0..d)
                    .map(|j| want[j].then(|| (0..k).map(|i| adj[i * d + j]).collect()))
                    .collect()
            }
            Op::Reshape => vec![want[0].then(|| adj.to_vec())],
            Op::LogsumexpAll => {
                let (xd, _) = input(0);
                let out = node.value[0];
                vec![want[0].then(|| {
                    if out == f64::NEG_INFINITY {
                        vec![0.0; xd.len()]
                    } else {
                        xd.iter().map(|&x| adj[0] * (x - out).exp()).collect()
                    }
                })]
            }
        }
    }
}

// ── operator sugar ──

macro_rules! binop {
    ($trait:ident, $method:ident, $op:expr, $f:expr) => {
        impl std::ops::$trait<&Tensor> for &Tensor {
            type Output = Tensor;
            fn $method(self, rhs: &Tensor) -> Tensor {
                binary(self, rhs, $op, $f)
            }
        }
        impl std::ops::$trait<f64> for &Tensor {
            type Output = Tensor;
            fn $method(self, rhs: f64) -> Tensor {
                binary(self, &Tensor::scalar(rhs), $op, $f)
            }
        }
        impl std::ops::$trait<&Tensor> for f64 {
            type Output = Tensor;
            fn $method(self, rhs: &Tensor) -> Tensor {
                binary(&Tensor::scalar(self), rhs, $op, $f)
            }
        }
        impl std::ops::$trait<Tensor> for Tensor {
            type Output = Tensor;
            fn $method(self, rhs: Tensor) -> Tensor {
                binary(&self, &rhs, $op, $f)
            }
        }
        impl std::ops::$trait<&Tensor> for Tensor {
            type Output = Tensor;
            fn $method(self, rhs: &Tensor) -> Tensor {
                binary(&self, rhs, $op, $f)
            }
        }
        impl std::ops::$trait<Tensor> for &Tensor {
            type Output = Tensor;
            fn $method(self, rhs: Tensor) -> Tensor {
                binary(self, &rhs, $op, $f)
            }
        }
        impl std::ops::$trait<f64> for Tensor {
            type Output = Tensor;
            fn $method(self, rhs: f64) -> Tensor {
                binary(&self, &Tensor::scalar(rhs), $op, $f)
            }
        }
        impl std::ops::$trait<Tensor> for f64 {
            type Output = Tensor;
            fn $method(self, rhs: Tensor) -> Tensor {
                binary(&Tensor::scalar(self), &rhs, $op, $f)
            }
        }
    };
}

binop!(Add, add, Op::Add, |a, b| a + b);
binop!(Sub, sub, Op::Sub, |a, b| a - b);
binop!(Mul, mul, Op::Mul, |a, b| a * b);
binop!(Div, div, Op::Div, |a, b| a / b);

impl std::ops::Neg for &Tensor {
    type Output = Tensor;
    fn neg(self) -> Tensor {
        unary(self, Op::Neg, |x| -x)
    }
}

impl std::ops::Neg for Tensor {
    type Output = Tensor;
    fn neg(self) -> Tensor {
        unary(&self, Op::Neg, |x| -x)
    }
}
