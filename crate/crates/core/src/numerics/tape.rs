//! Wengert tape: operations recorded in execution order, gradients by a
//! single reverse sweep. One tape per forward/backward pass.
//!
//! All tensors on the tape are 2-D (scalars are 1×1, vectors 1×n). Every
//! op validates shapes up front and checks its output for non-finite
//! values, so NaN/Inf surfaces as an error at the op that produced it.
//! `backward` may be called repeatedly on the same tape; each call runs a
//! fresh reverse sweep and yields identical gradients.

use super::{NumericsError, Real, Tensor};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<F> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Scale(Var, F),
    AddRow { x: Var, bias: Var },
    Gelu(Var),
    Log(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Softmax { x: Var, axis: usize },
    LayerNorm { x: Var, gain: Var, bias: Var, eps: F },
    SumAll(Var),
    MeanAll(Var),
    SliceCols { x: Var, start: usize, len: usize },
    ConcatCols(Vec<Var>),
    StackRows(Vec<Var>),
    Row { x: Var, idx: usize },
    Elem { x: Var, row: usize, col: usize },
    /// Scalar log-density sampled from an external grid; the partial
    /// derivatives w.r.t. the two inputs are computed at forward time.
    External { x: Var, y: Var, dx: F, dy: F },
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

pub struct Tape<F: Real> {
    nodes: Vec<Node<F>>,
}

/// Per-node gradients from one reverse sweep.
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
    shapes: Vec<Vec<usize>>,
}

impl<F: Real> Gradients<F> {
    /// Gradient of the swept output w.r.t. `v`; zeros when `v` does not
    /// influence the output.
    pub fn grad(&self, v: Var) -> Tensor<F> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.shapes[v.0].clone()),
        }
    }
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    /// Parameter node: gradient is produced for it on backward.
    pub fn leaf(&mut self, value: Tensor<F>) -> Var {
        self.push_unchecked(value, Op::Leaf, true)
    }

    /// Data node: no gradient tracked through it.
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.push_unchecked(value, Op::Leaf, false)
    }

    pub fn constant_scalar(&mut self, v: F) -> Var {
        self.constant(Tensor::scalar(v))
    }

    fn push_unchecked(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(
        &mut self,
        name: &'static str,
        value: Tensor<F>,
        op: Op<F>,
    ) -> Result<Var, NumericsError> {
        if !value.all_finite() {
            return Err(NumericsError::NonFinite { op: name });
        }
        let requires = self.op_inputs(&op).iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_unchecked(value, op, requires))
    }

    fn op_inputs(&self, op: &Op<F>) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::MatMul(a, b) => vec![*a, *b],
            Op::AddRow { x, bias } => vec![*x, *bias],
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::Gelu(a)
            | Op::Log(a)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Softplus(a)
            | Op::SumAll(a)
            | Op::MeanAll(a) => vec![*a],
            Op::Softmax { x, .. } => vec![*x],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::SliceCols { x, .. } | Op::Row { x, .. } | Op::Elem { x, .. } => vec![*x],
            Op::ConcatCols(vs) | Op::StackRows(vs) => vs.clone(),
            Op::External { x, y, .. } => vec![*x, *y],
        }
    }

    fn binary_same_shape(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(F, F) -> F,
        op: Op<F>,
    ) -> Result<Var, NumericsError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(NumericsError::ShapeMismatch {
                op: name,
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor {
            shape: ta.shape().to_vec(),
            data,
        };
        self.push(name, value, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary_same_shape("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary_same_shape("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary_same_shape("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary_same_shape("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, s: F) -> Result<Var, NumericsError> {
        let ta = self.value(a);
        let value = Tensor {
            shape: ta.shape().to_vec(),
            data: ta.data().iter().map(|&x| x * s).collect(),
        };
        self.push("scale", value, Op::Scale(a, s))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.scale(a, -F::one())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(NumericsError::ShapeMismatch {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let value = matmul_raw(ta.data(), tb.data(), m, k, n);
        self.push(
            "matmul",
            Tensor {
                shape: vec![m, n],
                data: value,
            },
            Op::MatMul(a, b),
        )
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NumericsError> {
        let ta = self.value(a);
        let (m, n) = (ta.shape()[0], ta.shape()[1]);
        let mut data = vec![F::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = ta.data()[i * n + j];
            }
        }
        self.push(
            "transpose",
            Tensor {
                shape: vec![n, m],
                data,
            },
            Op::Transpose(a),
        )
    }

    /// Add a 1×n bias row to every row of an m×n tensor.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var, NumericsError> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if tb.shape() != [1, tx.cols()] {
            return Err(NumericsError::ShapeMismatch {
                op: "add_row",
                lhs: tx.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let n = tx.cols();
        let data = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + tb.data()[i % n])
            .collect();
        let value = Tensor {
            shape: tx.shape().to_vec(),
            data,
        };
        self.push("add_row", value, Op::AddRow { x, bias })
    }

    fn unary(
        &mut self,
        name: &'static str,
        a: Var,
        f: impl Fn(F) -> F,
        op: Op<F>,
    ) -> Result<Var, NumericsError> {
        let ta = self.value(a);
        let value = Tensor {
            shape: ta.shape().to_vec(),
            data: ta.data().iter().map(|&x| f(x)).collect(),
        };
        self.push(name, value, op)
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.unary("gelu", a, gelu_val, Op::Gelu(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.unary("log", a, |x| x.ln(), Op::Log(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.unary("tanh", a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.unary("sigmoid", a, sigmoid_val, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.unary("softplus", a, softplus_val, Op::Softplus(a))
    }

    /// Softmax along `axis` (0 or 1) with max-subtraction.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var, NumericsError> {
        let ta = self.value(a);
        if axis >= ta.shape().len() {
            return Err(NumericsError::AxisOutOfBounds {
                axis,
                rank: ta.shape().len(),
            });
        }
        let (m, n) = (ta.shape()[0], ta.shape()[1]);
        let mut data = vec![F::zero(); m * n];
        let (lines, line_len, stride, step) = if axis == 1 {
            (m, n, n, 1)
        } else {
            (n, m, 1, n)
        };
        for l in 0..lines {
            let base = l * stride;
            let mut mx = F::neg_infinity();
            for i in 0..line_len {
                mx = mx.max(ta.data()[base + i * step]);
            }
            let mut sum = F::zero();
            for i in 0..line_len {
                let e = (ta.data()[base + i * step] - mx).exp();
                data[base + i * step] = e;
                sum += e;
            }
            for i in 0..line_len {
                data[base + i * step] = data[base + i * step] / sum;
            }
        }
        self.push(
            "softmax",
            Tensor {
                shape: vec![m, n],
                data,
            },
            Op::Softmax { x: a, axis },
        )
    }

    /// Row-wise layer normalization followed by per-column affine.
    pub fn layer_norm(
        &mut self,
        x: Var,
        gain: Var,
        bias: Var,
        eps: F,
    ) -> Result<Var, NumericsError> {
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        let n = tx.cols();
        if tg.shape() != [1, n] || tb.shape() != [1, n] {
            return Err(NumericsError::ShapeMismatch {
                op: "layer_norm",
                lhs: tx.shape().to_vec(),
                rhs: tg.shape().to_vec(),
            });
        }
        let m = tx.rows();
        let mut data = vec![F::zero(); m * n];
        for r in 0..m {
            let row = &tx.data()[r * n..(r + 1) * n];
            let (mean, inv_std) = row_stats(row, eps);
            for c in 0..n {
                let xhat = (row[c] - mean) * inv_std;
                data[r * n + c] = xhat * tg.data()[c] + tb.data()[c];
            }
        }
        self.push(
            "layer_norm",
            Tensor {
                shape: vec![m, n],
                data,
            },
            Op::LayerNorm { x, gain, bias, eps },
        )
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var, NumericsError> {
        let s: F = self.value(a).data().iter().copied().sum();
        self.push("sum_all", Tensor::scalar(s), Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var, NumericsError> {
        let ta = self.value(a);
        let n = F::of(ta.numel() as f64);
        let s: F = ta.data().iter().copied().sum();
        self.push("mean_all", Tensor::scalar(s / n), Op::MeanAll(a))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let tx = self.value(x);
        let (m, n) = (tx.rows(), tx.cols());
        if start + len > n {
            return Err(NumericsError::IndexOutOfBounds {
                op: "slice_cols",
                index: start + len,
                shape: tx.shape().to_vec(),
            });
        }
        let mut data = Vec::with_capacity(m * len);
        for r in 0..m {
            data.extend_from_slice(&tx.data()[r * n + start..r * n + start + len]);
        }
        self.push(
            "slice_cols",
            Tensor {
                shape: vec![m, len],
                data,
            },
            Op::SliceCols { x, start, len },
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let m = self.value(parts[0]).rows();
        let mut total = 0;
        for &p in parts {
            let tp = self.value(p);
            if tp.rows() != m {
                return Err(NumericsError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.value(parts[0]).shape().to_vec(),
                    rhs: tp.shape().to_vec(),
                });
            }
            total += tp.cols();
        }
        let mut data = Vec::with_capacity(m * total);
        for r in 0..m {
            for &p in parts {
                let tp = self.value(p);
                let n = tp.cols();
                data.extend_from_slice(&tp.data()[r * n..(r + 1) * n]);
            }
        }
        self.push(
            "concat_cols",
            Tensor {
                shape: vec![m, total],
                data,
            },
            Op::ConcatCols(parts.to_vec()),
        )
    }

    /// Stack k row vectors (1×n each) into a k×n matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var, NumericsError> {
        let n = self.value(rows[0]).cols();
        let mut data = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            let tr = self.value(r);
            if tr.rows() != 1 || tr.cols() != n {
                return Err(NumericsError::ShapeMismatch {
                    op: "stack_rows",
                    lhs: vec![1, n],
                    rhs: tr.shape().to_vec(),
                });
            }
            data.extend_from_slice(tr.data());
        }
        self.push(
            "stack_rows",
            Tensor {
                shape: vec![rows.len(), n],
                data,
            },
            Op::StackRows(rows.to_vec()),
        )
    }

    pub fn row(&mut self, x: Var, idx: usize) -> Result<Var, NumericsError> {
        let tx = self.value(x);
        let (m, n) = (tx.rows(), tx.cols());
        if idx >= m {
            return Err(NumericsError::IndexOutOfBounds {
                op: "row",
                index: idx,
                shape: tx.shape().to_vec(),
            });
        }
        let data = tx.data()[idx * n..(idx + 1) * n].to_vec();
        self.push(
            "row",
            Tensor {
                shape: vec![1, n],
                data,
            },
            Op::Row { x, idx },
        )
    }

    pub fn elem(&mut self, x: Var, row: usize, col: usize) -> Result<Var, NumericsError> {
        let tx = self.value(x);
        let (m, n) = (tx.rows(), tx.cols());
        if row >= m || col >= n {
            return Err(NumericsError::IndexOutOfBounds {
                op: "elem",
                index: row * n + col,
                shape: tx.shape().to_vec(),
            });
        }
        let v = tx.data()[row * n + col];
        self.push("elem", Tensor::scalar(v), Op::Elem { x, row, col })
    }

    /// Record an externally evaluated scalar function of two scalar inputs
    /// with its partial derivatives fixed at forward time. Used for the
    /// piecewise-linear grid-map log-density.
    pub fn external_scalar(
        &mut self,
        x: Var,
        y: Var,
        value: F,
        dx: F,
        dy: F,
    ) -> Result<Var, NumericsError> {
        for v in [x, y] {
            if !self.value(v).is_scalar() {
                return Err(NumericsError::ShapeMismatch {
                    op: "external_scalar",
                    lhs: vec![1, 1],
                    rhs: self.value(v).shape().to_vec(),
                });
            }
        }
        self.push(
            "external_scalar",
            Tensor::scalar(value),
            Op::External { x, y, dx, dy },
        )
    }

    /// Reverse sweep from a scalar output. Each node is visited exactly
    /// once, in reverse execution order.
    pub fn backward(&self, output: Var) -> Result<Gradients<F>, NumericsError> {
        let out = &self.nodes[output.0];
        if !out.value.is_scalar() {
            return Err(NumericsError::NonScalarOutput {
                shape: out.value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<F>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(vec![F::one()]);

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            self.accumulate(i, &gy, &mut grads);
            grads[i] = Some(gy);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.map(|data| Tensor {
                    shape: self.nodes[i].value.shape().to_vec(),
                    data,
                })
            })
            .collect();
        Ok(Gradients { grads, shapes })
    }

    fn acc(&self, grads: &mut Vec<Option<Vec<F>>>, v: Var, contrib: impl Fn(usize) -> F) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let numel = self.nodes[v.0].value.numel();
        let slot = grads[v.0].get_or_insert_with(|| vec![F::zero(); numel]);
        for (j, s) in slot.iter_mut().enumerate() {
            *s += contrib(j);
        }
    }

    #[allow(clippy::too_many_lines)]
    fn accumulate(&self, i: usize, gy: &[F], grads: &mut Vec<Option<Vec<F>>>) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(grads, *a, |j| gy[j]);
                self.acc(grads, *b, |j| gy[j]);
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |j| gy[j]);
                self.acc(grads, *b, |j| -gy[j]);
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                self.acc(grads, *a, |j| gy[j] * tb.data()[j]);
                self.acc(grads, *b, |j| gy[j] * ta.data()[j]);
            }
            Op::Div(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                self.acc(grads, *a, |j| gy[j] / tb.data()[j]);
                self.acc(grads, *b, |j| {
                    -gy[j] * ta.data()[j] / (tb.data()[j] * tb.data()[j])
                });
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                // dA = dY · Bᵀ ; dB = Aᵀ · dY
                let mut da = vec![F::zero(); m * k];
                for r in 0..m {
                    for c in 0..k {
                        let mut s = F::zero();
                        for j in 0..n {
                            s += gy[r * n + j] * tb.data()[c * n + j];
                        }
                        da[r * k + c] = s;
                    }
                }
                let mut db = vec![F::zero(); k * n];
                for r in 0..k {
                    for c in 0..n {
                        let mut s = F::zero();
                        for j in 0..m {
                            s += ta.data()[j * k + r] * gy[j * n + c];
                        }
                        db[r * n + c] = s;
                    }
                }
                self.acc(grads, *a, |j| da[j]);
                self.acc(grads, *b, |j| db[j]);
            }
            Op::Transpose(a) => {
                let ta = self.value(*a);
                let (m, n) = (ta.shape()[0], ta.shape()[1]);
                self.acc(grads, *a, |j| {
                    let (r, c) = (j / n, j % n);
                    gy[c * m + r]
                });
            }
            Op::Scale(a, s) => {
                let s = *s;
                self.acc(grads, *a, |j| gy[j] * s);
            }
            Op::AddRow { x, bias } => {
                let n = self.value(*x).cols();
                let m = self.value(*x).rows();
                self.acc(grads, *x, |j| gy[j]);
                self.acc(grads, *bias, |c| {
                    let mut s = F::zero();
                    for r in 0..m {
                        s += gy[r * n + c];
                    }
                    s
                });
            }
            Op::Gelu(a) => {
                let ta = self.value(*a);
                self.acc(grads, *a, |j| gy[j] * gelu_grad(ta.data()[j]));
            }
            Op::Log(a) => {
                let ta = self.value(*a);
                self.acc(grads, *a, |j| gy[j] / ta.data()[j]);
            }
            Op::Tanh(a) => {
                let ty = &node.value;
                self.acc(grads, *a, |j| {
                    let t = ty.data()[j];
                    gy[j] * (F::one() - t * t)
                });
            }
            Op::Sigmoid(a) => {
                let ty = &node.value;
                self.acc(grads, *a, |j| {
                    let s = ty.data()[j];
                    gy[j] * s * (F::one() - s)
                });
            }
            Op::Softplus(a) => {
                let ta = self.value(*a);
                self.acc(grads, *a, |j| gy[j] * sigmoid_val(ta.data()[j]));
            }
            Op::Softmax { x, axis } => {
                let ty = &node.value;
                let (m, n) = (ty.shape()[0], ty.shape()[1]);
                let (lines, line_len, stride, step) = if *axis == 1 {
                    (m, n, n, 1)
                } else {
                    (n, m, 1, n)
                };
                let mut dx = vec![F::zero(); m * n];
                for l in 0..lines {
                    let base = l * stride;
                    let mut dot = F::zero();
                    for i in 0..line_len {
                        let idx = base + i * step;
                        dot += gy[idx] * ty.data()[idx];
                    }
                    for i in 0..line_len {
                        let idx = base + i * step;
                        dx[idx] = ty.data()[idx] * (gy[idx] - dot);
                    }
                }
                self.acc(grads, *x, |j| dx[j]);
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let (tx, tg) = (self.value(*x), self.value(*gain));
                let (m, n) = (tx.rows(), tx.cols());
                let nf = F::of(n as f64);
                let mut dx = vec![F::zero(); m * n];
                let mut dgain = vec![F::zero(); n];
                let mut dbias = vec![F::zero(); n];
                for r in 0..m {
                    let row = &tx.data()[r * n..(r + 1) * n];
                    let (mean, inv_std) = row_stats(row, *eps);
                    let mut mean_dxhat = F::zero();
                    let mut mean_dxhat_xhat = F::zero();
                    let mut xhat = vec![F::zero(); n];
                    let mut dxhat = vec![F::zero(); n];
                    for c in 0..n {
                        xhat[c] = (row[c] - mean) * inv_std;
                        dxhat[c] = gy[r * n + c] * tg.data()[c];
                        mean_dxhat += dxhat[c];
                        mean_dxhat_xhat += dxhat[c] * xhat[c];
                        dgain[c] += gy[r * n + c] * xhat[c];
                        dbias[c] += gy[r * n + c];
                    }
                    mean_dxhat = mean_dxhat / nf;
                    mean_dxhat_xhat = mean_dxhat_xhat / nf;
                    for c in 0..n {
                        dx[r * n + c] =
                            inv_std * (dxhat[c] - mean_dxhat - xhat[c] * mean_dxhat_xhat);
                    }
                }
                self.acc(grads, *x, |j| dx[j]);
                self.acc(grads, *gain, |j| dgain[j]);
                self.acc(grads, *bias, |j| dbias[j]);
            }
            Op::SumAll(a) => {
                self.acc(grads, *a, |_| gy[0]);
            }
            Op::MeanAll(a) => {
                let n = F::of(self.value(*a).numel() as f64);
                self.acc(grads, *a, |_| gy[0] / n);
            }
            Op::SliceCols { x, start, len } => {
                let n = self.value(*x).cols();
                let (start, len) = (*start, *len);
                self.acc(grads, *x, |j| {
                    let (r, c) = (j / n, j % n);
                    if c >= start && c < start + len {
                        gy[r * len + (c - start)]
                    } else {
                        F::zero()
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let m = node.value.rows();
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let pc = self.value(p).cols();
                    let off = offset;
                    self.acc(grads, p, |j| {
                        let (r, c) = (j / pc, j % pc);
                        gy[r * total + off + c]
                    });
                    offset += pc;
                }
                let _ = m;
            }
            Op::StackRows(rows) => {
                let n = node.value.cols();
                for (r, &p) in rows.iter().enumerate() {
                    self.acc(grads, p, |j| gy[r * n + j]);
                }
            }
            Op::Row { x, idx } => {
                let n = self.value(*x).cols();
                let idx = *idx;
                self.acc(grads, *x, |j| {
                    if j / n == idx {
                        gy[j % n]
                    } else {
                        F::zero()
                    }
                });
            }
            Op::Elem { x, row, col } => {
                let n = self.value(*x).cols();
                let target = row * n + col;
                self.acc(grads, *x, |j| if j == target { gy[0] } else { F::zero() });
            }
            Op::External { x, y, dx, dy } => {
                let (dx, dy) = (*dx, *dy);
                self.acc(grads, *x, |_| gy[0] * dx);
                self.acc(grads, *y, |_| gy[0] * dy);
            }
        }
    }
}

fn matmul_raw<F: Real>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == F::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

fn row_stats<F: Real>(row: &[F], eps: F) -> (F, F) {
    let n = F::of(row.len() as f64);
    let mean = row.iter().copied().sum::<F>() / n;
    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
    (mean, F::one() / (var + eps).sqrt())
}

fn sigmoid_val<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

fn softplus_val<F: Real>(x: F) -> F {
    // log(1 + e^x) = max(x, 0) + log1p(e^{-|x|})
    x.max(F::zero()) + (-x.abs()).exp().ln_1p()
}

fn gelu_val<F: Real>(x: F) -> F {
    let k = F::of(0.7978845608028654); // sqrt(2/pi)
    let c = F::of(0.044715);
    let half = F::of(0.5);
    let inner = k * (x + c * x * x * x);
    half * x * (F::one() + inner.tanh())
}

fn gelu_grad<F: Real>(x: F) -> F {
    let k = F::of(0.7978845608028654);
    let c = F::of(0.044715);
    let half = F::of(0.5);
    let three = F::of(3.0);
    let inner = k * (x + c * x * x * x);
    let t = inner.tanh();
    let sech2 = F::one() - t * t;
    half * (F::one() + t) + half * x * sech2 * k * (F::one() + three * c * x * x)
}
