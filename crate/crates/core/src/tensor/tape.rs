use super::{dims2, Tensor, LOG_FLOOR};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    StopGradient,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Concat(Vec<Var>),
    SliceCols { input: Var, start: usize },
    Sigmoid(Var),
    Relu(Var),
    Log(Var),
    Clamp { input: Var, lo: f64, hi: f64 },
    Softmax { input: Var, tau: f64 },
    Sum(Var),
    SumLastAxis(Var),
    Mean(Var),
    Square(Var),
    Gather { table: Var, indices: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded forward trace. Nodes are appended in evaluation order, so every
/// operand index is smaller than the index of the node that consumes it.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backpropagated: Vec<bool>,
}

/// Leaf gradients produced by one [`Tape::backward`] call.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for a leaf that requires grad. Leaves the loss does not
    /// depend on hold zeros; non-leaf nodes and constants return `None`.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.backpropagated.push(false);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Identity in the forward pass; the result is a constant to backward.
    pub fn stop_gradient(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.push(value, Op::StopGradient, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            (k, 1),
            self.value(b).data(),
            (n, 1),
            &mut out,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    fn broadcast(&self, op: &'static str, a: Var, b: Var) -> Result<Broadcast> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        let ((ra, ca), (rb, cb)) = (dims2(sa), dims2(sb));
        let pick = |x: usize, y: usize| match (x, y) {
            _ if x == y => Some(x),
            (1, y) => Some(y),
            (x, 1) => Some(x),
            _ => None,
        };
        let (Some(rows), Some(cols)) = (pick(ra, rb), pick(ca, cb)) else {
            return Err(Error::Shape {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        };
        let shape = if sa == sb || (ra, ca) == (rows, cols) {
            sa.to_vec()
        } else if (rb, cb) == (rows, cols) {
            sb.to_vec()
        } else {
            vec![rows, cols]
        };
        Ok(Broadcast {
            rows,
            cols,
            a: (ra, ca),
            b: (rb, cb),
            shape,
        })
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let bc = self.broadcast(name, a, b)?;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(bc.rows * bc.cols);
        for i in 0..bc.rows {
            for j in 0..bc.cols {
                out.push(f(da[bc.index_a(i, j)], db[bc.index_b(i, j)]));
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(bc.shape, out)?, op, rg))
    }

    /// Elementwise sum with row/column broadcasting over the last two axes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product with the same broadcasting as [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let value = self.map(x, |v| v * c);
        let rg = self.rg(x);
        self.push(value, Op::Scale(x, c), rg)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let value = self.map(x, |v| v + c);
        let rg = self.rg(x);
        self.push(value, Op::AddScalar(x), rg)
    }

    /// `1 - x`.
    pub fn one_minus(&mut self, x: Var) -> Var {
        let neg = self.scale(x, -1.0);
        self.add_scalar(neg, 1.0)
    }

    fn map(&self, x: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(x);
        Tensor {
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|&v| f(v)).collect(),
        }
    }

    /// Concatenates matrices with equal row counts along the last axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::InvalidShape {
                op: "concat",
                msg: "no operands".into(),
            });
        };
        let rows = self.value(first).dims2().0;
        for &p in parts {
            if self.value(p).shape().len() != 2 || self.value(p).dims2().0 != rows {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: self.value(first).shape().to_vec(),
                    rhs: self.value(p).shape().to_vec(),
                });
            }
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).dims2().1).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::new(vec![rows, cols], out)?,
            Op::Concat(parts.to_vec()),
            rg,
        ))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let (rows, cols) = t.dims2();
        if t.shape().len() != 2 || start + len > cols {
            return Err(Error::InvalidShape {
                op: "slice_cols",
                msg: format!("columns {start}..{} of shape {:?}", start + len, t.shape()),
            });
        }
        let mut out = Vec::with_capacity(rows * len);
        for i in 0..rows {
            out.extend_from_slice(&t.row(i)[start..start + len]);
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(vec![rows, len], out)?,
            Op::SliceCols { input: x, start },
            rg,
        ))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.map(x, sigmoid);
        let rg = self.rg(x);
        self.push(value, Op::Sigmoid(x), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.map(x, |v| v.max(0.0));
        let rg = self.rg(x);
        self.push(value, Op::Relu(x), rg)
    }

    /// Natural log. Non-positive (or NaN) inputs are a domain error; positive
    /// inputs below [`LOG_FLOOR`] are clamped to it.
    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some(bad) = self.value(x).data().iter().find(|v| !(**v > 0.0)) {
            return Err(Error::Domain {
                op: "log",
                msg: format!("got {bad}"),
            });
        }
        let value = self.map(x, |v| v.max(LOG_FLOOR).ln());
        let rg = self.rg(x);
        Ok(self.push(value, Op::Log(x), rg))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let value = self.map(x, |v| v.clamp(lo, hi));
        let rg = self.rg(x);
        self.push(value, Op::Clamp { input: x, lo, hi }, rg)
    }

    /// `softmax(x / tau)` over the last axis.
    pub fn softmax(&mut self, x: Var, tau: f64) -> Result<Var> {
        if !(tau > 0.0) {
            return Err(Error::Domain {
                op: "softmax",
                msg: format!("temperature must be positive, got {tau}"),
            });
        }
        let t = self.value(x);
        let (rows, _) = t.dims2();
        let mut out = Vec::with_capacity(t.len());
        for i in 0..rows {
            softmax_row(t.row(i), tau, &mut out);
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Softmax { input: x, tau }, rg))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Row sums of a matrix, as a `[rows, 1]` column.
    pub fn sum_last_axis(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let (rows, _) = t.dims2();
        let out = (0..rows).map(|i| t.row(i).iter().sum()).collect();
        let rg = self.rg(x);
        self.push(
            Tensor {
                shape: vec![rows, 1],
                data: out,
            },
            Op::SumLastAxis(x),
            rg,
        )
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.is_empty() {
            return Err(Error::InvalidShape {
                op: "mean",
                msg: "empty tensor".into(),
            });
        }
        let m = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(m), Op::Mean(x), rg))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let value = self.map(x, |v| v * v);
        let rg = self.rg(x);
        self.push(value, Op::Square(x), rg)
    }

    /// Gathers rows of `table` (`[vocab, dim]`) and lays them out as a
    /// `[indices.len() / per_row, per_row * dim]` matrix.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize], per_row: usize) -> Result<Var> {
        let t = self.value(table);
        if t.shape().len() != 2 || per_row == 0 || indices.len() % per_row != 0 {
            return Err(Error::InvalidShape {
                op: "gather_rows",
                msg: format!(
                    "table {:?}, {} indices, {per_row} per row",
                    t.shape(),
                    indices.len()
                ),
            });
        }
        let (vocab, dim) = t.dims2();
        if let Some(&bad) = indices.iter().find(|&&i| i >= vocab) {
            return Err(Error::InvalidShape {
                op: "gather_rows",
                msg: format!("row index {bad} out of range for {vocab} rows"),
            });
        }
        let mut out = Vec::with_capacity(indices.len() * dim);
        for &i in indices {
            out.extend_from_slice(t.row(i));
        }
        let batch = indices.len() / per_row;
        let rg = self.rg(table);
        Ok(self.push(
            Tensor::new(vec![batch, per_row * dim], out)?,
            Op::Gather {
                table,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse pass from a scalar `loss`. Each loss node may be
    /// differentiated once; distinct losses on the same tape are independent.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        let shape = self.value(loss).shape();
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(shape.to_vec()));
        }
        if self.backpropagated[loss.0] {
            return Err(Error::DoubleBackward(loss.0));
        }
        self.backpropagated[loss.0] = true;

        let nodes = &self.nodes;
        let mut buf: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        let mut leaves: Vec<Option<Tensor>> = vec![None; nodes.len()];
        if nodes[loss.0].requires_grad {
            buf[loss.0] = Some(vec![1.0]);
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = buf[idx].take() else { continue };
            let node = &nodes[idx];
            let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
                if nodes[v.0].requires_grad {
                    let slot = buf[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
                    f(slot);
                }
            };
            match &node.op {
                Op::Leaf => {
                    leaves[idx] = Some(Tensor {
                        shape: node.value.shape().to_vec(),
                        data: g,
                    });
                }
                Op::StopGradient => {}
                Op::MatMul(a, b) => {
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    let (m, k) = av.dims2();
                    let n = bv.dims2().1;
                    // dA += dY Bᵀ, dB += Aᵀ dY
                    acc(*a, &mut |da| {
                        gemm_acc(m, n, k, &g, (n, 1), bv.data(), (1, n), da)
                    });
                    acc(*b, &mut |db| {
                        gemm_acc(k, m, n, av.data(), (1, k), &g, (n, 1), db)
                    });
                }
                Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                    let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                    let bc = Broadcast::of(ta.shape(), tb.shape());
                    let (da_fn, db_fn): (Box<dyn Fn(usize, usize) -> f64>, Box<dyn Fn(usize, usize) -> f64>) =
                        match &node.op {
                            Op::Add(..) => (Box::new(|_, _| 1.0), Box::new(|_, _| 1.0)),
                            Op::Sub(..) => (Box::new(|_, _| 1.0), Box::new(|_, _| -1.0)),
                            _ => (
                                Box::new(|_, ib| tb.data()[ib]),
                                Box::new(|ia, _| ta.data()[ia]),
                            ),
                        };
                    acc(*a, &mut |da| {
                        for i in 0..bc.rows {
                            for j in 0..bc.cols {
                                let (ia, ib) = (bc.index_a(i, j), bc.index_b(i, j));
                                da[ia] += g[i * bc.cols + j] * da_fn(ia, ib);
                            }
                        }
                    });
                    acc(*b, &mut |db| {
                        for i in 0..bc.rows {
                            for j in 0..bc.cols {
                                let (ia, ib) = (bc.index_a(i, j), bc.index_b(i, j));
                                db[ib] += g[i * bc.cols + j] * db_fn(ia, ib);
                            }
                        }
                    });
                }
                Op::Scale(x, c) => acc(*x, &mut |dx| axpy(dx, &g, *c)),
                Op::AddScalar(x) => acc(*x, &mut |dx| axpy(dx, &g, 1.0)),
                Op::Concat(parts) => {
                    let (rows, cols) = node.value.dims2();
                    let mut offset = 0;
                    for p in parts {
                        let pc = nodes[p.0].value.dims2().1;
                        acc(*p, &mut |dp| {
                            for i in 0..rows {
                                for j in 0..pc {
                                    dp[i * pc + j] += g[i * cols + offset + j];
                                }
                            }
                        });
                        offset += pc;
                    }
                }
                Op::SliceCols { input, start } => {
                    let (rows, len) = node.value.dims2();
                    let cols = nodes[input.0].value.dims2().1;
                    acc(*input, &mut |dx| {
                        for i in 0..rows {
                            for j in 0..len {
                                dx[i * cols + start + j] += g[i * len + j];
                            }
                        }
                    });
                }
                Op::Sigmoid(x) => {
                    let y = node.value.data();
                    acc(*x, &mut |dx| {
                        for i in 0..dx.len() {
                            dx[i] += g[i] * y[i] * (1.0 - y[i]);
                        }
                    });
                }
                Op::Relu(x) => {
                    let xin = nodes[x.0].value.data();
                    acc(*x, &mut |dx| {
                        for i in 0..dx.len() {
                            if xin[i] > 0.0 {
                                dx[i] += g[i];
                            }
                        }
                    });
                }
                Op::Log(x) => {
                    let xin = nodes[x.0].value.data();
                    acc(*x, &mut |dx| {
                        for i in 0..dx.len() {
                            if xin[i] >= LOG_FLOOR {
                                dx[i] += g[i] / xin[i];
                            }
                        }
                    });
                }
                Op::Clamp { input, lo, hi } => {
                    let xin = nodes[input.0].value.data();
                    acc(*input, &mut |dx| {
                        for i in 0..dx.len() {
                            if xin[i] >= *lo && xin[i] <= *hi {
                                dx[i] += g[i];
                            }
                        }
                    });
                }
                Op::Softmax { input, tau } => {
                    let y = &node.value;
                    let (rows, cols) = y.dims2();
                    acc(*input, &mut |dx| {
                        for i in 0..rows {
                            let yr = y.row(i);
                            let gr = &g[i * cols..(i + 1) * cols];
                            let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                            for j in 0..cols {
                                dx[i * cols + j] += yr[j] * (gr[j] - dot) / tau;
                            }
                        }
                    });
                }
                Op::Sum(x) => acc(*x, &mut |dx| dx.iter_mut().for_each(|d| *d += g[0])),
                Op::SumLastAxis(x) => {
                    let cols = nodes[x.0].value.dims2().1;
                    acc(*x, &mut |dx| {
                        for (i, d) in dx.iter_mut().enumerate() {
                            *d += g[i / cols];
                        }
                    });
                }
                Op::Mean(x) => {
                    let n = nodes[x.0].value.len() as f64;
                    acc(*x, &mut |dx| dx.iter_mut().for_each(|d| *d += g[0] / n));
                }
                Op::Square(x) => {
                    let xin = nodes[x.0].value.data();
                    acc(*x, &mut |dx| {
                        for i in 0..dx.len() {
                            dx[i] += 2.0 * xin[i] * g[i];
                        }
                    });
                }
                Op::Gather { table, indices } => {
                    let dim = nodes[table.0].value.dims2().1;
                    acc(*table, &mut |dt| {
                        for (slot, &row) in indices.iter().enumerate() {
                            let src = &g[slot * dim..(slot + 1) * dim];
                            axpy(&mut dt[row * dim..(row + 1) * dim], src, 1.0);
                        }
                    });
                }
            }
        }

        for (idx, node) in nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) && leaves[idx].is_none() {
                leaves[idx] = Some(Tensor::zeros(node.value.shape().to_vec()));
            }
        }
        Ok(Gradients { grads: leaves })
    }
}

struct Broadcast {
    rows: usize,
    cols: usize,
    a: (usize, usize),
    b: (usize, usize),
    shape: Vec<usize>,
}

impl Broadcast {
    /// Rebuilds the broadcast layout of two shapes already validated forward.
    fn of(sa: &[usize], sb: &[usize]) -> Self {
        let (a, b) = (dims2(sa), dims2(sb));
        Self {
            rows: a.0.max(b.0),
            cols: a.1.max(b.1),
            a,
            b,
            shape: Vec::new(),
        }
    }

    #[inline]
    fn index_a(&self, i: usize, j: usize) -> usize {
        let (r, c) = self.a;
        (if r == 1 { 0 } else { i }) * c + if c == 1 { 0 } else { j }
    }

    #[inline]
    fn index_b(&self, i: usize, j: usize) -> usize {
        let (r, c) = self.b;
        (if r == 1 { 0 } else { i }) * c + if c == 1 { 0 } else { j }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_row(row: &[f64], tau: f64, out: &mut Vec<f64>) {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let start = out.len();
    let mut total = 0.0;
    for &v in row {
        let e = ((v - max) / tau).exp();
        total += e;
        out.push(e);
    }
    for e in &mut out[start..] {
        *e /= total;
    }
}

fn axpy(dst: &mut [f64], src: &[f64], c: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += c * s;
    }
}

/// `out = A B` for an `m×k` A and `k×n` B with explicit (row, col) strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    sa: (usize, usize),
    b: &[f64],
    sb: (usize, usize),
    out: &mut [f64],
) {
    gemm_beta(m, k, n, a, sa, b, sb, out, 0.0)
}

/// `out += A B`.
#[allow(clippy::too_many_arguments)]
fn gemm_acc(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    sa: (usize, usize),
    b: &[f64],
    sb: (usize, usize),
    out: &mut [f64],
) {
    gemm_beta(m, k, n, a, sa, b, sb, out, 1.0)
}

#[allow(clippy::too_many_arguments)]
fn gemm_beta(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    sa: (usize, usize),
    b: &[f64],
    sb: (usize, usize),
    out: &mut [f64],
    beta: f64,
) {
    assert!(out.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == 0.0 {
            out[..m * n].fill(0.0);
        }
        return;
    }
    let span = |rows: usize, cols: usize, (rs, cs): (usize, usize)| (rows - 1) * rs + (cols - 1) * cs;
    assert!(a.len() > span(m, k, sa) && b.len() > span(k, n, sb));
    // SAFETY: the asserts above bound every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
