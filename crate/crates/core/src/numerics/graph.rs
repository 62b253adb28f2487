//! Tape-based reverse-mode differentiation over small dense tensors.
//!
//! Every op evaluates eagerly when it is recorded, so a `Graph` is both the
//! forward pass and the tape. Nodes are appended in evaluation order, which is
//! already a topological order; `backward` walks it in reverse.

use super::tensor::{gemm, Tensor};
use super::NumericsError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Affine {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    },
    MatMul {
        a: NodeId,
        b: NodeId,
        transpose_b: bool,
    },
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    Softmax(NodeId),
    Concat(Vec<NodeId>),
    Slice {
        x: NodeId,
        axis: usize,
        start: usize,
    },
    Reshape(NodeId),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
    },
    AddPositional {
        x: NodeId,
        table: NodeId,
    },
    Mse {
        pred: NodeId,
        target: Tensor,
        weights: Tensor,
        weight_sum: f64,
    },
    Lstm {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        /// Post-activation gates `[steps, batch, 4·hidden]`, i f g o blocks.
        gates: Vec<f64>,
        /// Cell states `[steps, batch, hidden]`.
        cells: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss, indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to `id`. Nodes the loss does not depend on get
    /// `None`; use [`Gradients::wrt_or_zeros`] for parameters.
    pub fn wrt(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn wrt_or_zeros(&self, graph: &Graph, id: NodeId) -> Tensor {
        self.wrt(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(graph.value(id).shape()))
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Constant input; no gradient is propagated into it.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    fn mismatch(expected: &[usize], found: &[usize]) -> NumericsError {
        NumericsError::ShapeMismatch {
            expected: expected.to_vec(),
            found: found.to_vec(),
        }
    }

    /// `x · w + b` applied to every row of `x`; `w` is `[in, out]`.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId, NumericsError> {
        let (xv, wv) = (self.value(x), self.value(w));
        if wv.shape().len() != 2 || wv.shape()[0] != xv.cols() {
            return Err(Self::mismatch(&[xv.cols(), wv.cols()], wv.shape()));
        }
        let (rows, fan_in, out) = (xv.rows(), xv.cols(), wv.cols());
        let mut data = vec![0.0; rows * out];
        gemm(rows, fan_in, out, xv.data(), false, wv.data(), false, &mut data, 0.0);
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.len() != out {
                return Err(Self::mismatch(&[out], bv.shape()));
            }
            for row in data.chunks_mut(out) {
                for (o, bias) in row.iter_mut().zip(bv.data()) {
                    *o += bias;
                }
            }
        }
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = out;
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.needs(&deps);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Affine { x, w, b }, rg))
    }

    /// Matrix product of two activations, batched over a leading axis for
    /// rank-3 inputs. With `transpose_b`, `b` is read as `[.., m, k]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId, transpose_b: bool) -> Result<NodeId, NumericsError> {
        let (av, bv) = (self.value(a), self.value(b));
        let (batch, n, k, m) = matmul_dims(av.shape(), bv.shape(), transpose_b)
            .ok_or_else(|| Self::mismatch(av.shape(), bv.shape()))?;
        let mut data = vec![0.0; batch * n * m];
        for i in 0..batch {
            gemm(
                n,
                k,
                m,
                &av.data()[i * n * k..(i + 1) * n * k],
                false,
                &bv.data()[i * k * m..(i + 1) * k * m],
                transpose_b,
                &mut data[i * n * m..(i + 1) * n * m],
                0.0,
            );
        }
        let shape = if av.shape().len() == 3 { vec![batch, n, m] } else { vec![n, m] };
        let rg = self.needs(&[a, b]);
        Ok(self.push(Tensor::from_parts(shape, data), Op::MatMul { a, b, transpose_b }, rg))
    }

    fn zip_with(&mut self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, NumericsError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Self::mismatch(av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| f(*x, *y)).collect();
        Ok(Tensor::from_parts(av.shape().to_vec(), data))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let value = self.zip_with(a, b, |x, y| x + y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let value = self.zip_with(a, b, |x, y| x * y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    fn map(&mut self, x: NodeId, op: Op, f: impl Fn(f64) -> f64) -> NodeId {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| f(*v)).collect();
        let value = Tensor::from_parts(xv.shape().to_vec(), data);
        let rg = self.needs(&[x]);
        self.push(value, op, rg)
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        self.map(x, Op::Scale(x, factor), |v| v * factor)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.map(x, Op::Tanh(x), f64::tanh)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.map(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.map(x, Op::Relu(x), |v| v.max(0.0))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let cols = xv.cols();
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(cols) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let value = Tensor::from_parts(xv.shape().to_vec(), data);
        let rg = self.needs(&[x]);
        self.push(value, Op::Softmax(x), rg)
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId, NumericsError> {
        let first = parts.first().ok_or(NumericsError::EmptyConcat)?;
        let lead = self.value(*first).shape().split_last().unwrap().1.to_vec();
        let rows = self.value(*first).rows();
        let mut width = 0;
        for p in parts {
            let shape = self.value(*p).shape();
            if shape.split_last().unwrap().1 != lead.as_slice() {
                return Err(Self::mismatch(&lead, shape));
            }
            width += shape.last().unwrap();
        }
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for p in parts {
                let v = self.value(*p);
                let c = v.cols();
                data.extend_from_slice(&v.data()[r * c..(r + 1) * c]);
            }
        }
        let mut shape = lead;
        shape.push(width);
        let rg = self.needs(parts);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Concat(parts.to_vec()), rg))
    }

    /// Keeps indices `start..end` of `axis`.
    pub fn slice(&mut self, x: NodeId, axis: usize, start: usize, end: usize) -> Result<NodeId, NumericsError> {
        let xv = self.value(x);
        let shape = xv.shape();
        if axis >= shape.len() || start >= end || end > shape[axis] {
            return Err(NumericsError::BadSlice {
                axis,
                start,
                end,
                shape: shape.to_vec(),
            });
        }
        let (outer, dim, inner) = axis_layout(shape, axis);
        let width = end - start;
        let mut data = Vec::with_capacity(outer * width * inner);
        for o in 0..outer {
            let base = o * dim * inner;
            data.extend_from_slice(&xv.data()[base + start * inner..base + end * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = width;
        let rg = self.needs(&[x]);
        Ok(self.push(Tensor::from_parts(out_shape, data), Op::Slice { x, axis, start }, rg))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId, NumericsError> {
        let value = self.value(x).reshape(shape)?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Normalizes each row over the last axis, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId, NumericsError> {
        let xv = self.value(x);
        let cols = xv.cols();
        for p in [gain, bias] {
            if self.value(p).len() != cols {
                return Err(Self::mismatch(&[cols], self.value(p).shape()));
            }
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let mut data = Vec::with_capacity(xv.len());
        for row in xv.data().chunks(cols) {
            let (mean, inv_std) = row_moments(row);
            data.extend(row.iter().enumerate().map(|(j, v)| (v - mean) * inv_std * g[j] + b[j]));
        }
        let value = Tensor::from_parts(xv.shape().to_vec(), data);
        let rg = self.needs(&[x, gain, bias]);
        Ok(self.push(value, Op::LayerNorm { x, gain, bias }, rg))
    }

    /// Adds a learned positional row to each token of `x` (`[.., tokens, dim]`),
    /// counting positions back from the newest token: the last token gets
    /// `table[0]`. Tokens older than the table rows receive nothing.
    pub fn add_positional(&mut self, x: NodeId, table: NodeId) -> Result<NodeId, NumericsError> {
        let (xv, tv) = (self.value(x), self.value(table));
        if xv.shape().len() < 2 || tv.shape().len() != 2 || tv.cols() != xv.cols() {
            return Err(Self::mismatch(xv.shape(), tv.shape()));
        }
        let dim = xv.cols();
        let tokens = xv.shape()[xv.shape().len() - 2];
        let mut data = xv.data().to_vec();
        for (t, row) in data.chunks_mut(dim).enumerate() {
            let back = tokens - 1 - t % tokens;
            if back < tv.rows() {
                for (v, p) in row.iter_mut().zip(&tv.data()[back * dim..(back + 1) * dim]) {
                    *v += p;
                }
            }
        }
        let value = Tensor::from_parts(xv.shape().to_vec(), data);
        let rg = self.needs(&[x, table]);
        Ok(self.push(value, Op::AddPositional { x, table }, rg))
    }

    /// One LSTM layer over a time-major sequence `x` (`[steps, batch, in]`)
    /// from a zero initial state. `w` is `[in + hidden, 4·hidden]` with the
    /// input rows first; gate blocks are input, forget, cell, output. Returns
    /// the hidden states `[steps, batch, hidden]`.
    pub fn lstm(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.shape().len() != 3 || wv.shape().len() != 2 {
            return Err(Self::mismatch(&[0, 0, 0], xv.shape()));
        }
        let (steps, batch, fan_in) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let four_h = wv.cols();
        let h = four_h / 4;
        if four_h % 4 != 0 || wv.rows() != fan_in + h || bv.len() != four_h {
            return Err(Self::mismatch(&[fan_in + h, 4 * h], wv.shape()));
        }
        let (w_in, w_rec) = wv.data().split_at(fan_in * four_h);
        let rows = steps * batch;

        // input projections for every step at once
        let mut gates = vec![0.0; rows * four_h];
        gemm(rows, fan_in, four_h, xv.data(), false, w_in, false, &mut gates, 0.0);
        for row in gates.chunks_mut(four_h) {
            for (z, bias) in row.iter_mut().zip(bv.data()) {
                *z += bias;
            }
        }
        let mut cells = vec![0.0; rows * h];
        let mut hidden = vec![0.0; rows * h];
        for t in 0..steps {
            let z = &mut gates[t * batch * four_h..(t + 1) * batch * four_h];
            if t > 0 {
                let h_prev = &hidden[(t - 1) * batch * h..t * batch * h];
                gemm(batch, h, four_h, h_prev, false, w_rec, false, z, 1.0);
            }
            for r in 0..batch {
                let zr = &mut z[r * four_h..(r + 1) * four_h];
                let at = (t * batch + r) * h;
                for j in 0..h {
                    let i = sigmoid(zr[j]);
                    let f = sigmoid(zr[h + j]);
                    let g = zr[2 * h + j].tanh();
                    let o = sigmoid(zr[3 * h + j]);
                    let c_prev = if t > 0 { cells[at - batch * h + j] } else { 0.0 };
                    let c = f * c_prev + i * g;
                    cells[at + j] = c;
                    hidden[at + j] = o * c.tanh();
                    zr[j] = i;
                    zr[h + j] = f;
                    zr[2 * h + j] = g;
                    zr[3 * h + j] = o;
                }
            }
        }
        let rg = self.needs(&[x, w, b]);
        Ok(self.push(
            Tensor::from_parts(vec![steps, batch, h], hidden),
            Op::Lstm { x, w, b, gates, cells },
            rg,
        ))
    }

    /// Weighted mean squared error `Σ w (p - t)² / Σ w`, a scalar.
    pub fn mse(&mut self, pred: NodeId, target: Tensor, weights: Option<Tensor>) -> Result<NodeId, NumericsError> {
        let pv = self.value(pred);
        if pv.shape() != target.shape() {
            return Err(Self::mismatch(pv.shape(), target.shape()));
        }
        let weights = weights.unwrap_or_else(|| Tensor::filled(pv.shape(), 1.0));
        if weights.shape() != pv.shape() {
            return Err(Self::mismatch(pv.shape(), weights.shape()));
        }
        let weight_sum: f64 = weights.data().iter().sum();
        if weight_sum <= 0.0 {
            return Err(NumericsError::ZeroWeight);
        }
        let sse: f64 = pv
            .data()
            .iter()
            .zip(target.data())
            .zip(weights.data())
            .map(|((p, t), w)| w * (p - t) * (p - t))
            .sum();
        let rg = self.needs(&[pred]);
        Ok(self.push(
            Tensor::scalar(sse / weight_sum),
            Op::Mse {
                pred,
                target,
                weights,
                weight_sum,
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, NumericsError> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(NumericsError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_parts(lv.shape().to_vec(), vec![1.0]));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = grads[idx].take() else { continue };
            self.propagate(node, &dy, &mut grads);
            grads[idx] = Some(dy);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn like(&self, id: NodeId, data: Vec<f64>) -> Tensor {
        Tensor::from_parts(self.value(id).shape().to_vec(), data)
    }

    fn propagate(&self, node: &Node, dy: &Tensor, grads: &mut [Option<Tensor>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Affine { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (rows, fan_in, out) = (xv.rows(), xv.cols(), wv.cols());
                if self.nodes[x.0].requires_grad {
                    let mut dx = vec![0.0; rows * fan_in];
                    gemm(rows, out, fan_in, dy.data(), false, wv.data(), true, &mut dx, 0.0);
                    self.accumulate(grads, *x, self.like(*x, dx));
                }
                if self.nodes[w.0].requires_grad {
                    let slot = grads[w.0].get_or_insert_with(|| Tensor::zeros(wv.shape()));
                    gemm(fan_in, rows, out, xv.data(), true, dy.data(), false, slot.data_mut(), 1.0);
                }
                if let Some(b) = b {
                    let mut db = vec![0.0; out];
                    for row in dy.data().chunks(out) {
                        for (d, g) in db.iter_mut().zip(row) {
                            *d += g;
                        }
                    }
                    self.accumulate(grads, *b, self.like(*b, db));
                }
            }
            Op::MatMul { a, b, transpose_b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (batch, n, k, m) = matmul_dims(av.shape(), bv.shape(), *transpose_b).unwrap();
                let mut da = vec![0.0; av.len()];
                let mut db = vec![0.0; bv.len()];
                for i in 0..batch {
                    let dc = &dy.data()[i * n * m..(i + 1) * n * m];
                    let a_blk = &av.data()[i * n * k..(i + 1) * n * k];
                    let b_blk = &bv.data()[i * k * m..(i + 1) * k * m];
                    let da_blk = &mut da[i * n * k..(i + 1) * n * k];
                    let db_blk = &mut db[i * k * m..(i + 1) * k * m];
                    if *transpose_b {
                        // c = a · bᵀ with b stored [m, k]
                        gemm(n, m, k, dc, false, b_blk, false, da_blk, 0.0);
                        gemm(m, n, k, dc, true, a_blk, false, db_blk, 0.0);
                    } else {
                        gemm(n, m, k, dc, false, b_blk, true, da_blk, 0.0);
                        gemm(k, n, m, a_blk, true, dc, false, db_blk, 0.0);
                    }
                }
                self.accumulate(grads, *a, self.like(*a, da));
                self.accumulate(grads, *b, self.like(*b, db));
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, dy.clone());
                self.accumulate(grads, *b, dy.clone());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].requires_grad {
                    let da = dy.data().iter().zip(bv.data()).map(|(g, v)| g * v).collect();
                    self.accumulate(grads, *a, self.like(*a, da));
                }
                if self.nodes[b.0].requires_grad {
                    let db = dy.data().iter().zip(av.data()).map(|(g, v)| g * v).collect();
                    self.accumulate(grads, *b, self.like(*b, db));
                }
            }
            Op::Scale(x, factor) => {
                let dx = dy.data().iter().map(|g| g * factor).collect();
                self.accumulate(grads, *x, self.like(*x, dx));
            }
            Op::Tanh(x) => {
                let dx = dy.data().iter().zip(y.data()).map(|(g, t)| g * (1.0 - t * t)).collect();
                self.accumulate(grads, *x, self.like(*x, dx));
            }
            Op::Sigmoid(x) => {
                let dx = dy.data().iter().zip(y.data()).map(|(g, s)| g * s * (1.0 - s)).collect();
                self.accumulate(grads, *x, self.like(*x, dx));
            }
            Op::Relu(x) => {
                let dx = dy
                    .data()
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, self.like(*x, dx));
            }
            Op::Softmax(x) => {
                let cols = y.cols();
                let mut dx = Vec::with_capacity(y.len());
                for (yr, gr) in y.data().chunks(cols).zip(dy.data().chunks(cols)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    dx.extend(yr.iter().zip(gr).map(|(s, g)| s * (g - dot)));
                }
                self.accumulate(grads, *x, self.like(*x, dx));
            }
            Op::Concat(parts) => {
                let rows = y.rows();
                let width = y.cols();
                let mut offset = 0;
                for p in parts {
                    let c = self.value(*p).cols();
                    if self.nodes[p.0].requires_grad {
                        let mut dp = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            dp.extend_from_slice(&dy.data()[r * width + offset..r * width + offset + c]);
                        }
                        self.accumulate(grads, *p, self.like(*p, dp));
                    }
                    offset += c;
                }
            }
            Op::Slice { x, axis, start } => {
                let xv = self.value(*x);
                let (outer, dim, inner) = axis_layout(xv.shape(), *axis);
                let width = y.shape()[*axis];
                let mut dx = vec![0.0; xv.len()];
                for o in 0..outer {
                    let src = &dy.data()[o * width * inner..(o + 1) * width * inner];
                    let base = o * dim * inner + start * inner;
                    dx[base..base + width * inner].copy_from_slice(src);
                }
                self.accumulate(grads, *x, self.like(*x, dx));
            }
            Op::Reshape(x) => {
                self.accumulate(grads, *x, self.like(*x, dy.data().to_vec()));
            }
            Op::LayerNorm { x, gain, bias } => {
                let xv = self.value(*x);
                let g = self.value(*gain).data();
                let cols = xv.cols();
                let mut dx = Vec::with_capacity(xv.len());
                let mut dg = vec![0.0; cols];
                let mut db = vec![0.0; cols];
                for (row, grow) in xv.data().chunks(cols).zip(dy.data().chunks(cols)) {
                    let (mean, inv_std) = row_moments(row);
                    let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv_std).collect();
                    let dxhat: Vec<f64> = grow.iter().zip(g).map(|(d, gg)| d * gg).collect();
                    let mean_d = dxhat.iter().sum::<f64>() / cols as f64;
                    let mean_dx = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / cols as f64;
                    dx.extend(
                        dxhat
                            .iter()
                            .zip(&xhat)
                            .map(|(d, h)| inv_std * (d - mean_d - h * mean_dx)),
                    );
                    for j in 0..cols {
                        dg[j] += grow[j] * xhat[j];
                        db[j] += grow[j];
                    }
                }
                self.accumulate(grads, *x, self.like(*x, dx));
                self.accumulate(grads, *gain, self.like(*gain, dg));
                self.accumulate(grads, *bias, self.like(*bias, db));
            }
            Op::AddPositional { x, table } => {
                self.accumulate(grads, *x, dy.clone());
                if self.nodes[table.0].requires_grad {
                    let tv = self.value(*table);
                    let dim = y.cols();
                    let tokens = y.shape()[y.shape().len() - 2];
                    let mut dt = vec![0.0; tv.len()];
                    for (t, row) in dy.data().chunks(dim).enumerate() {
                        let back = tokens - 1 - t % tokens;
                        if back < tv.rows() {
                            for (d, g) in dt[back * dim..(back + 1) * dim].iter_mut().zip(row) {
                                *d += g;
                            }
                        }
                    }
                    self.accumulate(grads, *table, self.like(*table, dt));
                }
            }
            Op::Lstm { x, w, b, gates, cells } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (steps, batch, fan_in) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                let four_h = wv.cols();
                let h = four_h / 4;
                let rows = steps * batch;
                let (w_in, w_rec) = wv.data().split_at(fan_in * four_h);
                let mut dz = vec![0.0; rows * four_h];
                let mut dh_next = vec![0.0; batch * h];
                let mut dc_next = vec![0.0; batch * h];
                for t in (0..steps).rev() {
                    let dzt = &mut dz[t * batch * four_h..(t + 1) * batch * four_h];
                    for r in 0..batch {
                        let g_row = &gates[(t * batch + r) * four_h..(t * batch + r + 1) * four_h];
                        let at = (t * batch + r) * h;
                        let dzr = &mut dzt[r * four_h..(r + 1) * four_h];
                        for j in 0..h {
                            let (i, f, g, o) = (g_row[j], g_row[h + j], g_row[2 * h + j], g_row[3 * h + j]);
                            let c = cells[at + j];
                            let c_prev = if t > 0 { cells[at - batch * h + j] } else { 0.0 };
                            let tc = c.tanh();
                            let dh = dy.data()[at + j] + dh_next[r * h + j];
                            let dc = dh * o * (1.0 - tc * tc) + dc_next[r * h + j];
                            dzr[j] = dc * g * i * (1.0 - i);
                            dzr[h + j] = dc * c_prev * f * (1.0 - f);
                            dzr[2 * h + j] = dc * i * (1.0 - g * g);
                            dzr[3 * h + j] = dh * tc * o * (1.0 - o);
                            dc_next[r * h + j] = dc * f;
                        }
                    }
                    if t > 0 {
                        gemm(batch, four_h, h, dzt, false, w_rec, true, &mut dh_next, 0.0);
                    }
                }
                if self.nodes[x.0].requires_grad {
                    let mut dx = vec![0.0; rows * fan_in];
                    gemm(rows, four_h, fan_in, &dz, false, w_in, true, &mut dx, 0.0);
                    self.accumulate(grads, *x, self.like(*x, dx));
                }
                if self.nodes[w.0].requires_grad {
                    let slot = grads[w.0].get_or_insert_with(|| Tensor::zeros(wv.shape()));
                    let (dw_in, dw_rec) = slot.data_mut().split_at_mut(fan_in * four_h);
                    gemm(fan_in, rows, four_h, xv.data(), true, &dz, false, dw_in, 1.0);
                    // h_{t-1} for t = 1.. pairs with dz rows of steps 1..
                    let prev = (steps - 1) * batch;
                    if prev > 0 {
                        gemm(h, prev, four_h, &y.data()[..prev * h], true, &dz[batch * four_h..], false, dw_rec, 1.0);
                    }
                }
                let mut db = vec![0.0; four_h];
                for row in dz.chunks(four_h) {
                    for (d, g) in db.iter_mut().zip(row) {
                        *d += g;
                    }
                }
                self.accumulate(grads, *b, self.like(*b, db));
            }
            Op::Mse {
                pred,
                target,
                weights,
                weight_sum,
            } => {
                let scale = 2.0 * dy.item() / weight_sum;
                let dp = self
                    .value(*pred)
                    .data()
                    .iter()
                    .zip(target.data())
                    .zip(weights.data())
                    .map(|((p, t), w)| scale * w * (p - t))
                    .collect();
                self.accumulate(grads, *pred, self.like(*pred, dp));
            }
        }
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn row_moments(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + LAYER_NORM_EPS).sqrt())
}

/// `(outer, dim, inner)` element counts around `axis`.
fn axis_layout(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// `(batch, n, k, m)` for a product of `[.., n, k]` by `[.., k, m]`.
fn matmul_dims(a: &[usize], b: &[usize], transpose_b: bool) -> Option<(usize, usize, usize, usize)> {
    if a.len() != b.len() || !(2..=3).contains(&a.len()) {
        return None;
    }
    let batch = if a.len() == 3 { a[0] } else { 1 };
    if a.len() == 3 && b[0] != batch {
        return None;
    }
    let (n, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (bk, m) = if transpose_b {
        (b[b.len() - 1], b[b.len() - 2])
    } else {
        (b[b.len() - 2], b[b.len() - 1])
    };
    (bk == k).then_some((batch, n, k, m))
}
