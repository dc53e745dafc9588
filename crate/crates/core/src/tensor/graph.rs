use rand::Rng;

use super::kernels;
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Adjoint of a user-supplied op: `(inputs, output, upstream) -> input grads`.
pub type BackwardFn<T> =
    Box<dyn Fn(&[&Tensor<T>], &Tensor<T>, &Tensor<T>) -> Vec<Tensor<T>> + Send + Sync>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GeluKind {
    /// `0.5·x·(1 + erf(x/√2))`
    #[default]
    Exact,
    /// `0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))`
    Tanh,
}

impl GeluKind {
    pub fn name(self) -> &'static str {
        match self {
            GeluKind::Exact => "exact",
            GeluKind::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "exact" => Some(GeluKind::Exact),
            "tanh" => Some(GeluKind::Tanh),
            _ => None,
        }
    }

    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            GeluKind::Exact => kernels::gelu_exact(x),
            GeluKind::Tanh => kernels::gelu_tanh(x),
        }
    }

    pub fn derivative<T: Scalar>(self, x: T) -> T {
        match self {
            GeluKind::Exact => kernels::gelu_exact_grad(x),
            GeluKind::Tanh => kernels::gelu_tanh_grad(x),
        }
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Gelu(Var, GeluKind),
    Dropout(Var, Vec<T>),
    Sum(Var),
    Mean(Var),
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Rows { x: Var, start: usize },
    Pick { x: Var, index: usize },
    Reshape(Var),
    Custom { inputs: Vec<Var>, backward: BackwardFn<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Define-by-run gradient tape. Every op appends one node; [`Graph::backward`]
/// walks the nodes once in reverse order.
pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    consumed: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            consumed: false,
        }
    }

    /// Number of recorded nodes (leaves included).
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; no gradient is tracked for it.
    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push_leaf(value, false)
    }

    /// Trainable leaf; receives a gradient on backward.
    pub fn param(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push_leaf(value, true)
    }

    fn push_leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite("leaf"));
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward's loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(name));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn matrix(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(Error::shape(op, s, &[]));
        }
        Ok((s[0], s[1]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, p) = self.matrix("matmul", a)?;
        let (p2, n) = self.matrix("matmul", b)?;
        if p != p2 {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![T::zero(); m * n];
        kernels::matmul(self.value(a).data(), self.value(b).data(), &mut out, m, p, n);
        self.push("matmul", Tensor::new(&[m, n], out)?, Op::MatMul(a, b), &[a, b])
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, p) = self.matrix("matmul_bt", a)?;
        let (n, p2) = self.matrix("matmul_bt", b)?;
        if p != p2 {
            return Err(Error::shape("matmul_bt", self.shape(a), self.shape(b)));
        }
        let mut out = vec![T::zero(); m * n];
        kernels::matmul_bt(self.value(a).data(), self.value(b).data(), &mut out, m, p, n);
        self.push("matmul_bt", Tensor::new(&[m, n], out)?, Op::MatMulBt(a, b), &[a, b])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).transpose()?;
        self.push("transpose", t, Op::Transpose(x), &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("add", self.shape(a), self.shape(b)));
        }
        let data = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let t = Tensor::new(self.shape(a), data)?;
        self.push("add", t, Op::Add(a, b), &[a, b])
    }

    /// Broadcast-add a length-`c` vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, cols) = self.value(x).rows_cols();
        if self.value(bias).len() != cols {
            return Err(Error::shape("add_row", self.shape(x), self.shape(bias)));
        }
        let b = self.value(bias).data();
        let data: Vec<T> = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + b[i % cols])
            .collect();
        let t = Tensor::new(self.shape(x), data)?;
        self.push("add_row", t, Op::AddRow(x, bias), &[x, bias])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("mul", self.shape(a), self.shape(b)));
        }
        let data = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let t = Tensor::new(self.shape(a), data)?;
        self.push("mul", t, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, x: Var, s: T) -> Result<Var> {
        let t = self.value(x).map(|v| v * s);
        self.push("scale", t, Op::Scale(x, s), &[x])
    }

    /// Row-wise softmax over the last dimension, max-subtracted.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.rows_cols();
        let mut out = vec![T::zero(); xv.len()];
        for r in 0..rows {
            kernels::softmax_row(xv.row(r), &mut out[r * cols..(r + 1) * cols]);
        }
        let t = Tensor::new(xv.shape(), out)?;
        self.push("softmax_rows", t, Op::SoftmaxRows(x), &[x])
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.rows_cols();
        let mut out = vec![T::zero(); xv.len()];
        for r in 0..rows {
            kernels::log_softmax_row(xv.row(r), &mut out[r * cols..(r + 1) * cols]);
        }
        let t = Tensor::new(xv.shape(), out)?;
        self.push("log_softmax_rows", t, Op::LogSoftmaxRows(x), &[x])
    }

    /// Normalizes each vector along the last dimension to zero mean and unit
    /// (population) variance, then applies `gamma`/`beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let xv = self.value(x);
        let (rows, d) = xv.rows_cols();
        if self.value(gamma).len() != d || self.value(beta).len() != d {
            return Err(Error::shape("layer_norm", xv.shape(), self.shape(gamma)));
        }
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let n = T::from_usize(d).expect("dim");
        let mut xhat = vec![T::zero(); xv.len()];
        let mut inv_std = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xv.len()];
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let istd = T::one() / (var + eps).sqrt();
            inv_std[r] = istd;
            for c in 0..d {
                let h = (row[c] - mean) * istd;
                xhat[r * d + c] = h;
                out[r * d + c] = h * g[c] + b[c];
            }
        }
        let t = Tensor::new(xv.shape(), out)?;
        let op = Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
        };
        self.push("layer_norm", t, op, &[x, gamma, beta])
    }

    pub fn gelu(&mut self, x: Var, kind: GeluKind) -> Result<Var> {
        let t = self.value(x).map(|v| kind.apply(v));
        self.push("gelu", t, Op::Gelu(x, kind), &[x])
    }

    /// Inverted dropout: kept entries are scaled by `1/(1-p)`. `p == 0`
    /// returns `x` itself without recording anything.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R) -> Result<Var> {
        if p == 0.0 {
            return Ok(x);
        }
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
        }
        let keep = T::lit(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.value(x).len())
            .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
            .collect();
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| v * m)
            .collect();
        let t = Tensor::new(self.shape(x), data)?;
        self.push("dropout", t, Op::Dropout(x, mask), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().copied().sum::<T>();
        self.push("sum", Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let s = xv.data().iter().copied().sum::<T>() / T::from_usize(xv.len()).expect("len");
        self.push("mean", Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// Columns `start..start+len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.matrix("slice_cols", x)?;
        if len == 0 || start + len > cols {
            return Err(Error::shape("slice_cols", self.shape(x), &[start, len]));
        }
        let xv = self.value(x);
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&xv.row(r)[start..start + len]);
        }
        let t = Tensor::new(&[rows, len], data)?;
        self.push("slice_cols", t, Op::SliceCols { x, start }, &[x])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::shape("concat_cols", &[], &[]))?;
        let (rows, _) = self.matrix("concat_cols", first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.matrix("concat_cols", p)?;
            if r != rows {
                return Err(Error::shape("concat_cols", self.shape(first), self.shape(p)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let t = Tensor::new(&[rows, total], data)?;
        self.push("concat_cols", t, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::shape("concat_rows", &[], &[]))?;
        let (_, cols) = self.matrix("concat_rows", first)?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, c) = self.matrix("concat_rows", p)?;
            if c != cols {
                return Err(Error::shape("concat_rows", self.shape(first), self.shape(p)));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        let t = Tensor::new(&[rows, cols], data)?;
        self.push("concat_rows", t, Op::ConcatRows(parts.to_vec()), parts)
    }

    /// Rows `start..start+len` of a matrix.
    pub fn rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.matrix("rows", x)?;
        if len == 0 || start + len > rows {
            return Err(Error::shape("rows", self.shape(x), &[start, len]));
        }
        let data = self.value(x).data()[start * cols..(start + len) * cols].to_vec();
        let t = Tensor::new(&[len, cols], data)?;
        self.push("rows", t, Op::Rows { x, start }, &[x])
    }

    /// Single element (flat index) as a scalar.
    pub fn pick(&mut self, x: Var, index: usize) -> Result<Var> {
        let xv = self.value(x);
        if index >= xv.len() {
            return Err(Error::shape("pick", xv.shape(), &[index]));
        }
        let t = Tensor::scalar(xv.data()[index]);
        self.push("pick", t, Op::Pick { x, index }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        self.push("reshape", t, Op::Reshape(x), &[x])
    }

    /// Records an op whose forward value was computed by the caller and whose
    /// adjoint is supplied as a closure.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor<T>, backward: BackwardFn<T>) -> Result<Var> {
        let op = Op::Custom {
            inputs: inputs.to_vec(),
            backward,
        };
        self.push("custom", output, op, inputs)
    }

    /// Reverse pass from a scalar `loss`. Gradients accumulate additively
    /// across fan-out; afterwards [`Graph::grad`] returns `dloss/dv` for every
    /// node that requires a gradient. A graph supports one backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let loss_shape = self.shape(loss).to_vec();
        if self.value(loss).len() != 1 {
            return Err(Error::NotScalar(loss_shape));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(&loss_shape));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let contributions = self.adjoints(i, &g);
            grads[i] = Some(g);
            for (input, dg) in contributions {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                if !dg.all_finite() {
                    return Err(Error::NonFinite("backward"));
                }
                accumulate(&mut grads[input.0], dg);
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn adjoints(&self, i: usize, g: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let node = &self.nodes[i];
        let out = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let gd = g.data();
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => {
                let (m, p) = (val(*a).shape()[0], val(*a).shape()[1]);
                let n = val(*b).shape()[1];
                let mut da = vec![T::zero(); m * p];
                kernels::matmul_bt(gd, val(*b).data(), &mut da, m, n, p);
                let mut db = vec![T::zero(); p * n];
                kernels::matmul_at_acc(val(*a).data(), gd, &mut db, m, p, n);
                vec![(*a, tensor(&[m, p], da)), (*b, tensor(&[p, n], db))]
            }
            Op::MatMulBt(a, b) => {
                let (m, p) = (val(*a).shape()[0], val(*a).shape()[1]);
                let n = val(*b).shape()[0];
                let mut da = vec![T::zero(); m * p];
                kernels::matmul(gd, val(*b).data(), &mut da, m, n, p);
                let mut db = vec![T::zero(); n * p];
                kernels::matmul_at_acc(gd, val(*a).data(), &mut db, m, n, p);
                vec![(*a, tensor(&[m, p], da)), (*b, tensor(&[n, p], db))]
            }
            Op::Transpose(x) => {
                let (r, c) = (out.shape()[0], out.shape()[1]);
                vec![(*x, tensor(&[c, r], kernels::transpose(gd, r, c)))]
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::AddRow(x, b) => {
                let (_, cols) = g.rows_cols();
                let mut db = vec![T::zero(); cols];
                for (j, &v) in gd.iter().enumerate() {
                    db[j % cols] = db[j % cols] + v;
                }
                vec![(*x, g.clone()), (*b, tensor(val(*b).shape(), db))]
            }
            Op::Mul(a, b) => {
                let da = zip_map(g, val(*b), |x, y| x * y);
                let db = zip_map(g, val(*a), |x, y| x * y);
                vec![(*a, tensor(g.shape(), da)), (*b, tensor(g.shape(), db))]
            }
            Op::Scale(x, s) => vec![(*x, g.map(|v| v * *s))],
            Op::SoftmaxRows(x) => {
                let (rows, cols) = out.rows_cols();
                let mut dx = vec![T::zero(); out.len()];
                for r in 0..rows {
                    let y = out.row(r);
                    let gr = &gd[r * cols..(r + 1) * cols];
                    let dot: T = y.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for c in 0..cols {
                        dx[r * cols + c] = y[c] * (gr[c] - dot);
                    }
                }
                vec![(*x, tensor(out.shape(), dx))]
            }
            Op::LogSoftmaxRows(x) => {
                let (rows, cols) = out.rows_cols();
                let mut dx = vec![T::zero(); out.len()];
                for r in 0..rows {
                    let y = out.row(r);
                    let gr = &gd[r * cols..(r + 1) * cols];
                    let total: T = gr.iter().copied().sum();
                    for c in 0..cols {
                        dx[r * cols + c] = gr[c] - y[c].exp() * total;
                    }
                }
                vec![(*x, tensor(out.shape(), dx))]
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (rows, d) = out.rows_cols();
                let gam = val(*gamma).data();
                let n = T::from_usize(d).expect("dim");
                let mut dx = vec![T::zero(); out.len()];
                let mut dgamma = vec![T::zero(); d];
                let mut dbeta = vec![T::zero(); d];
                let mut dxhat = vec![T::zero(); d];
                for r in 0..rows {
                    let base = r * d;
                    let mut mean_dxhat = T::zero();
                    let mut mean_dxhat_xhat = T::zero();
                    for c in 0..d {
                        let gv = gd[base + c];
                        let h = xhat[base + c];
                        dgamma[c] = dgamma[c] + gv * h;
                        dbeta[c] = dbeta[c] + gv;
                        dxhat[c] = gv * gam[c];
                        mean_dxhat = mean_dxhat + dxhat[c];
                        mean_dxhat_xhat = mean_dxhat_xhat + dxhat[c] * h;
                    }
                    mean_dxhat = mean_dxhat / n;
                    mean_dxhat_xhat = mean_dxhat_xhat / n;
                    for c in 0..d {
                        let h = xhat[base + c];
                        dx[base + c] = inv_std[r] * (dxhat[c] - mean_dxhat - h * mean_dxhat_xhat);
                    }
                }
                vec![
                    (*x, tensor(out.shape(), dx)),
                    (*gamma, tensor(val(*gamma).shape(), dgamma)),
                    (*beta, tensor(val(*beta).shape(), dbeta)),
                ]
            }
            Op::Gelu(x, kind) => {
                let dx = zip_map(g, val(*x), |gv, xv| gv * kind.derivative(xv));
                vec![(*x, tensor(g.shape(), dx))]
            }
            Op::Dropout(x, mask) => {
                let dx = gd.iter().zip(mask).map(|(&a, &m)| a * m).collect();
                vec![(*x, tensor(g.shape(), dx))]
            }
            Op::Sum(x) => vec![(*x, Tensor::full(val(*x).shape(), gd[0]))],
            Op::Mean(x) => {
                let n = T::from_usize(val(*x).len()).expect("len");
                vec![(*x, Tensor::full(val(*x).shape(), gd[0] / n))]
            }
            Op::SliceCols { x, start } => {
                let (rows, cols) = (val(*x).shape()[0], val(*x).shape()[1]);
                let len = out.shape()[1];
                let mut dx = vec![T::zero(); rows * cols];
                for r in 0..rows {
                    dx[r * cols + start..r * cols + start + len].copy_from_slice(&gd[r * len..(r + 1) * len]);
                }
                vec![(*x, tensor(&[rows, cols], dx))]
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = (out.shape()[0], out.shape()[1]);
                let mut offset = 0;
                let mut res = Vec::with_capacity(parts.len());
                for &p in parts {
                    let w = val(p).shape()[1];
                    let mut dp = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        dp.extend_from_slice(&gd[r * total + offset..r * total + offset + w]);
                    }
                    res.push((p, tensor(&[rows, w], dp)));
                    offset += w;
                }
                res
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                let mut res = Vec::with_capacity(parts.len());
                for &p in parts {
                    let n = val(p).len();
                    res.push((p, tensor(val(p).shape(), gd[offset..offset + n].to_vec())));
                    offset += n;
                }
                res
            }
            Op::Rows { x, start } => {
                let cols = out.shape()[1];
                let mut dx = vec![T::zero(); val(*x).len()];
                dx[start * cols..start * cols + gd.len()].copy_from_slice(gd);
                vec![(*x, tensor(val(*x).shape(), dx))]
            }
            Op::Pick { x, index } => {
                let mut dx = vec![T::zero(); val(*x).len()];
                dx[*index] = gd[0];
                vec![(*x, tensor(val(*x).shape(), dx))]
            }
            Op::Reshape(x) => vec![(*x, tensor(val(*x).shape(), gd.to_vec()))],
            Op::Custom { inputs, backward } => {
                let ins: Vec<&Tensor<T>> = inputs.iter().map(|&v| val(v)).collect();
                let dgs = backward(&ins, out, g);
                assert_eq!(dgs.len(), inputs.len(), "custom adjoint arity");
                inputs.iter().copied().zip(dgs).collect()
            }
        }
    }
}

fn tensor<T: Scalar>(shape: &[usize], data: Vec<T>) -> Tensor<T> {
    Tensor::new(shape, data).expect("adjoint shape")
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Vec<T> {
    a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, dg: Tensor<T>) {
    match slot {
        Some(acc) => {
            for (a, &d) in acc.data_mut().iter_mut().zip(dg.data()) {
                *a = *a + d;
            }
        }
        None => *slot = Some(dg),
    }
}
