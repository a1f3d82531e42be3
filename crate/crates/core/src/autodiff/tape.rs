use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::array::{dot, gemm_acc, gemm_nt_acc, gemm_tn_acc, Array};
use crate::error::{shape_err, Error, Result};
use crate::math;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Value<'a> {
    Owned(Array),
    Borrowed(&'a Array),
}

impl Value<'_> {
    fn get(&self) -> &Array {
        match self {
            Value::Owned(a) => a,
            Value::Borrowed(a) => a,
        }
    }
}

/// Padding along the time axis of a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride_t: usize,
    pub stride_f: usize,
    /// Zero frames added before the first input frame.
    pub pad_t: usize,
    /// Output frame count.
    pub out_t: usize,
}

enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Concat(Vec<NodeId>, usize),
    Slice {
        input: NodeId,
        axis: usize,
        start: usize,
    },
    Reshape(NodeId),
    RepeatRows(NodeId),
    MeanAxis(NodeId, usize),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Elu(NodeId),
    Softmax(NodeId, usize),
    Mse(NodeId, NodeId),
    Conv2d {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        geom: ConvGeometry,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Concat(..) => "concat",
            Op::Slice { .. } => "slice",
            Op::Reshape(..) => "reshape",
            Op::RepeatRows(..) => "repeat_rows",
            Op::MeanAxis(..) => "mean_over_axis",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Elu(..) => "elu",
            Op::Softmax(..) => "softmax",
            Op::Mse(..) => "mse",
            Op::Conv2d { .. } => "conv2d",
        }
    }
}

struct Node<'a> {
    value: Value<'a>,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run record of differentiable operations.
///
/// Leaves are either parameters (gradients tracked) or constants. Every
/// op appends one node whose inputs precede it, so the node order is a
/// topological order and [`Tape::backward`] is a single reverse sweep.
/// Parameters can be borrowed for the tape's lifetime to avoid copies.
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

/// Adjoints of a scalar loss with respect to every node that required a
/// gradient. Leaves that the loss does not depend on hold zeros.
pub struct Gradients {
    adjoints: Vec<Option<Array>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Array> {
        self.adjoints.get(id.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Array> {
        self.adjoints.get_mut(id.0).and_then(Option::take)
    }
}

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Broadcast layout of `b` against a 2-D `a`: `b` is `m×n`, `1×n` or `m×1`.
#[derive(Clone, Copy)]
enum Bcast {
    Same,
    Row,
    Col,
}

fn bcast(op: &'static str, a: &Array, b: &Array) -> Result<Bcast> {
    if a.shape() == b.shape() {
        return Ok(Bcast::Same);
    }
    if a.shape().len() == 2 && b.shape().len() == 2 {
        let (m, n) = (a.shape()[0], a.shape()[1]);
        if b.shape() == [1, n] {
            return Ok(Bcast::Row);
        }
        if b.shape() == [m, 1] {
            return Ok(Bcast::Col);
        }
    }
    Err(shape_err(
        op,
        format!("{:?} vs {:?}", a.shape(), b.shape()),
    ))
}

#[inline]
fn bidx(kind: Bcast, idx: usize, n: usize) -> usize {
    match kind {
        Bcast::Same => idx,
        Bcast::Row => idx % n,
        Bcast::Col => idx / n,
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array {
        self.nodes[id.0].value.get()
    }

    fn push(&mut self, value: Value<'a>, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Array, op: Op, inputs: &[NodeId]) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite(op.name()));
        }
        let rg = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        Ok(self.push(Value::Owned(value), op, rg))
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Trainable leaf borrowing its value.
    pub fn param(&mut self, value: &'a Array) -> NodeId {
        self.push(Value::Borrowed(value), Op::Leaf, true)
    }

    /// Trainable leaf owning its value.
    pub fn var(&mut self, value: Array) -> NodeId {
        self.push(Value::Owned(value), Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Array) -> NodeId {
        self.push(Value::Owned(value), Op::Leaf, false)
    }

    pub fn constant_ref(&mut self, value: &'a Array) -> NodeId {
        self.push(Value::Borrowed(value), Op::Leaf, false)
    }

    /// `a · b` for `a: m×k`, `b: k×n`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(shape_err(
                "matmul",
                format!("{:?} x {:?}", av.shape(), bv.shape()),
            ));
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let mut out = Array::zeros(&[m, n]);
        gemm_acc(av.data(), bv.data(), out.data_mut(), m, k, n);
        self.push_op(out, Op::MatMul(a, b), &[a, b])
    }

    /// Elementwise sum; `b` may be a `1×n` row or `m×1` column broadcast
    /// against a 2-D `a`.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        let kind = bcast("add", av, bv)?;
        let n = av.shape().last().copied().unwrap_or(1);
        let mut out = av.clone();
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            *o += bv.data()[bidx(kind, i, n)];
        }
        self.push_op(out, Op::Add(a, b), &[a, b])
    }

    /// Elementwise product with the same broadcast rules as [`Tape::add`].
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        let kind = bcast("mul", av, bv)?;
        let n = av.shape().last().copied().unwrap_or(1);
        let mut out = av.clone();
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            *o *= bv.data()[bidx(kind, i, n)];
        }
        self.push_op(out, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> Result<NodeId> {
        let out = self.value(a).map(|v| v * k);
        self.push_op(out, Op::Scale(a, k), &[a])
    }

    /// `a - b` for equal shapes.
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let nb = self.scale(b, -1.0)?;
        self.add(a, nb)
    }

    pub fn concat(&mut self, inputs: &[NodeId], axis: usize) -> Result<NodeId> {
        let first = inputs
            .first()
            .ok_or_else(|| shape_err("concat", "no inputs".into()))?;
        let base = self.value(*first).shape().to_vec();
        if axis >= base.len() {
            return Err(shape_err("concat", format!("axis {axis} of {base:?}")));
        }
        let mut total = 0;
        for id in inputs {
            let s = self.value(*id).shape();
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(shape_err("concat", format!("{s:?} vs {base:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = outer_inner(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for id in inputs {
                let v = self.value(*id);
                let chunk = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let out = Array::new(shape, data)?;
        self.push_op(out, Op::Concat(inputs.to_vec(), axis), inputs)
    }

    /// Half-open range `start..end` along `axis`.
    pub fn slice(&mut self, a: NodeId, axis: usize, start: usize, end: usize) -> Result<NodeId> {
        let av = self.value(a);
        let s = av.shape();
        if axis >= s.len() || start >= end || end > s[axis] {
            return Err(shape_err(
                "slice",
                format!("{start}..{end} on axis {axis} of {s:?}"),
            ));
        }
        let (outer, len, inner) = outer_inner(s, axis);
        let w = (end - start) * inner;
        let mut data = Vec::with_capacity(outer * w);
        for o in 0..outer {
            let base = o * len * inner + start * inner;
            data.extend_from_slice(&av.data()[base..base + w]);
        }
        let mut shape = s.to_vec();
        shape[axis] = end - start;
        let out = Array::new(shape, data)?;
        self.push_op(out, Op::Slice { input: a, axis, start }, &[a])
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let out = self.value(a).clone().reshaped(shape)?;
        self.push_op(out, Op::Reshape(a), &[a])
    }

    /// Tile a `1×n` row into `m×n`.
    pub fn repeat_rows(&mut self, a: NodeId, m: usize) -> Result<NodeId> {
        let av = self.value(a);
        if av.shape().len() != 2 || av.shape()[0] != 1 || m == 0 {
            return Err(shape_err("repeat_rows", format!("{:?} x{m}", av.shape())));
        }
        let n = av.shape()[1];
        let data = av.data().repeat(m);
        let out = Array::new(vec![m, n], data)?;
        self.push_op(out, Op::RepeatRows(a), &[a])
    }

    /// Mean along `axis`, which is kept with extent 1.
    pub fn mean_over_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let av = self.value(a);
        let s = av.shape();
        if axis >= s.len() {
            return Err(shape_err("mean_over_axis", format!("axis {axis} of {s:?}")));
        }
        let (outer, len, inner) = outer_inner(s, axis);
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &av.data()[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (d, v) in data[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += v;
                }
            }
        }
        let inv = 1.0 / len as f64;
        data.iter_mut().for_each(|d| *d *= inv);
        let mut shape = s.to_vec();
        shape[axis] = 1;
        let out = Array::new(shape, data)?;
        self.push_op(out, Op::MeanAxis(a, axis), &[a])
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let out = self.value(a).map(math::tanh);
        self.push_op(out, Op::Tanh(a), &[a])
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let out = self.value(a).map(math::sigmoid);
        self.push_op(out, Op::Sigmoid(a), &[a])
    }

    /// Exponential linear unit with α = 1.
    pub fn elu(&mut self, a: NodeId) -> Result<NodeId> {
        let out = self
            .value(a)
            .map(|x| if x > 0.0 { x } else { libm::expm1(x) });
        self.push_op(out, Op::Elu(a), &[a])
    }

    /// Softmax normalizing along `axis` (max-subtracted).
    pub fn softmax(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let av = self.value(a);
        let s = av.shape();
        if axis >= s.len() {
            return Err(shape_err("softmax", format!("axis {axis} of {s:?}")));
        }
        let (outer, len, inner) = outer_inner(s, axis);
        let mut out = av.clone();
        let d = out.data_mut();
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| (o * len + l) * inner + i;
                let max = (0..len).map(|l| d[at(l)]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for l in 0..len {
                    let e = math::exp(d[at(l)] - max);
                    d[at(l)] = e;
                    sum += e;
                }
                for l in 0..len {
                    d[at(l)] /= sum;
                }
            }
        }
        self.push_op(out, Op::Softmax(a, axis), &[a])
    }

    /// Mean squared difference over all entries; a scalar node.
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("mse", format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        let sum: f64 = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        let out = Array::scalar(sum / av.numel() as f64);
        self.push_op(out, Op::Mse(a, b), &[a, b])
    }

    /// Cross-correlation of a `T×F×C` image with a `k_t×k_f×C×O` kernel plus
    /// an `O` bias. Time is zero-padded by `pad_t` frames before and as many
    /// as needed after to produce `out_t` frames; frequency is unpadded.
    pub fn conv2d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        stride: (usize, usize),
        pad_t: usize,
        out_t: usize,
    ) -> Result<NodeId> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        let (xs, ws) = (x.shape(), w.shape());
        if xs.len() != 3 || ws.len() != 4 || ws[2] != xs[2] || b.numel() != ws[3] {
            return Err(shape_err(
                "conv2d",
                format!("input {xs:?}, weight {ws:?}, bias {:?}", b.shape()),
            ));
        }
        let (t_in, f_in, c_in) = (xs[0], xs[1], xs[2]);
        let (kt, kf, c_out) = (ws[0], ws[1], ws[3]);
        let (st, sf) = stride;
        if st == 0 || sf == 0 || kf > f_in || out_t == 0 {
            return Err(shape_err("conv2d", format!("kernel {ws:?} on {xs:?}")));
        }
        let f_out = (f_in - kf) / sf + 1;
        let mut out = Array::zeros(&[out_t, f_out, c_out]);
        let od = out.data_mut();
        for t in 0..out_t {
            for f in 0..f_out {
                let o_row = &mut od[(t * f_out + f) * c_out..(t * f_out + f + 1) * c_out];
                o_row.copy_from_slice(b.data());
                for dt in 0..kt {
                    let Some(ti) = (t * st + dt).checked_sub(pad_t).filter(|&ti| ti < t_in) else {
                        continue;
                    };
                    for df in 0..kf {
                        let fi = f * sf + df;
                        let x_px = &x.data()[(ti * f_in + fi) * c_in..(ti * f_in + fi + 1) * c_in];
                        for (c, &xv) in x_px.iter().enumerate() {
                            let w_row = &w.data()[((dt * kf + df) * c_in + c) * c_out..][..c_out];
                            for (ov, &wv) in o_row.iter_mut().zip(w_row) {
                                *ov += xv * wv;
                            }
                        }
                    }
                }
            }
        }
        let geom = ConvGeometry {
            stride_t: st,
            stride_f: sf,
            pad_t,
            out_t,
        };
        self.push_op(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
            &[input, weight, bias],
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(shape_err("backward", format!("loss shape {:?}", lv.shape())));
        }
        let mut adj: Vec<Option<Array>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(Array::full(lv.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            self.propagate(i, &g, &mut adj);
        }

        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                if adj[i].is_none() {
                    adj[i] = Some(Array::zeros(node.value.get().shape()));
                }
            } else {
                adj[i] = None;
            }
        }
        Ok(Gradients { adjoints: adj })
    }

    fn accumulate(&self, adj: &mut [Option<Array>], id: NodeId, grad: Array) {
        debug_assert!(id.0 < adj.len());
        match &mut adj[id.0] {
            Some(existing) => existing.add_assign(&grad),
            slot @ None => *slot = Some(grad),
        }
    }

    /// Zeroed adjoint buffer for `id`, created on first use.
    fn adj_buf<'s>(&self, adj: &'s mut [Option<Array>], id: NodeId) -> &'s mut Array {
        adj[id.0].get_or_insert_with(|| Array::zeros(self.value(id).shape()))
    }

    fn propagate(&self, i: usize, g: &Array, adj: &mut [Option<Array>]) {
        let out = self.nodes[i].value.get();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if self.rg(*a) {
                    let da = self.adj_buf(adj, *a);
                    gemm_nt_acc(g.data(), bv.data(), da.data_mut(), m, n, k);
                }
                if self.rg(*b) {
                    let db = self.adj_buf(adj, *b);
                    gemm_tn_acc(av.data(), g.data(), db.data_mut(), m, k, n);
                }
            }
            Op::Add(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    self.accumulate(adj, *a, g.clone());
                }
                if self.rg(*b) {
                    let kind = bcast("add", av, bv).expect("checked in forward");
                    let n = av.shape().last().copied().unwrap_or(1);
                    let db = self.adj_buf(adj, *b);
                    for (idx, &gv) in g.data().iter().enumerate() {
                        db.data_mut()[bidx(kind, idx, n)] += gv;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let kind = bcast("mul", av, bv).expect("checked in forward");
                let n = av.shape().last().copied().unwrap_or(1);
                if self.rg(*a) {
                    let mut da = g.clone();
                    for (idx, d) in da.data_mut().iter_mut().enumerate() {
                        *d *= bv.data()[bidx(kind, idx, n)];
                    }
                    self.accumulate(adj, *a, da);
                }
                if self.rg(*b) {
                    let db = self.adj_buf(adj, *b);
                    for (idx, (&gv, &x)) in g.data().iter().zip(av.data()).enumerate() {
                        db.data_mut()[bidx(kind, idx, n)] += gv * x;
                    }
                }
            }
            Op::Scale(a, k) => {
                if self.rg(*a) {
                    self.accumulate(adj, *a, g.map(|v| v * k));
                }
            }
            Op::Concat(inputs, axis) => {
                let (outer, _, inner) = outer_inner(out.shape(), *axis);
                let total = out.shape()[*axis] * inner;
                let mut offset = 0;
                for id in inputs {
                    let len = self.value(*id).shape()[*axis] * inner;
                    if self.rg(*id) {
                        let buf = self.adj_buf(adj, *id);
                        for o in 0..outer {
                            let src = &g.data()[o * total + offset..o * total + offset + len];
                            for (d, s) in buf.data_mut()[o * len..(o + 1) * len].iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    }
                    offset += len;
                }
            }
            Op::Slice { input, axis, start } => {
                if self.rg(*input) {
                    let shape = self.value(*input).shape();
                    let (outer, len, inner) = outer_inner(shape, *axis);
                    let w = out.shape()[*axis] * inner;
                    let buf = self.adj_buf(adj, *input);
                    for o in 0..outer {
                        let base = o * len * inner + start * inner;
                        for (d, s) in buf.data_mut()[base..base + w]
                            .iter_mut()
                            .zip(&g.data()[o * w..(o + 1) * w])
                        {
                            *d += s;
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                if self.rg(*a) {
                    let shape = self.value(*a).shape();
                    let d = g.clone().reshaped(shape).expect("numel preserved");
                    self.accumulate(adj, *a, d);
                }
            }
            Op::RepeatRows(a) => {
                if self.rg(*a) {
                    let n = out.shape()[1];
                    let buf = self.adj_buf(adj, *a);
                    for row in g.data().chunks(n) {
                        for (d, s) in buf.data_mut().iter_mut().zip(row) {
                            *d += s;
                        }
                    }
                }
            }
            Op::MeanAxis(a, axis) => {
                if self.rg(*a) {
                    let shape = self.value(*a).shape();
                    let (outer, len, inner) = outer_inner(shape, *axis);
                    let inv = 1.0 / len as f64;
                    let buf = self.adj_buf(adj, *a);
                    for o in 0..outer {
                        let src = &g.data()[o * inner..(o + 1) * inner];
                        for l in 0..len {
                            let dst = &mut buf.data_mut()[(o * len + l) * inner..(o * len + l + 1) * inner];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += s * inv;
                            }
                        }
                    }
                }
            }
            Op::Tanh(a) => {
                if self.rg(*a) {
                    let d = zip_map(g, out, |gv, y| gv * (1.0 - y * y));
                    self.accumulate(adj, *a, d);
                }
            }
            Op::Sigmoid(a) => {
                if self.rg(*a) {
                    let d = zip_map(g, out, |gv, y| gv * y * (1.0 - y));
                    self.accumulate(adj, *a, d);
                }
            }
            Op::Elu(a) => {
                if self.rg(*a) {
                    let d = zip_map(g, out, |gv, y| if y > 0.0 { gv } else { gv * (y + 1.0) });
                    self.accumulate(adj, *a, d);
                }
            }
            Op::Softmax(a, axis) => {
                if self.rg(*a) {
                    let (outer, len, inner) = outer_inner(out.shape(), *axis);
                    let mut d = Array::zeros(out.shape());
                    let (y, gd, dd) = (out.data(), g.data(), d.data_mut());
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |l: usize| (o * len + l) * inner + i;
                            let s: f64 = (0..len).map(|l| gd[at(l)] * y[at(l)]).sum();
                            for l in 0..len {
                                dd[at(l)] = y[at(l)] * (gd[at(l)] - s);
                            }
                        }
                    }
                    self.accumulate(adj, *a, d);
                }
            }
            Op::Mse(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let k = 2.0 * g.data()[0] / av.numel() as f64;
                let diff = zip_map(av, bv, |x, y| k * (x - y));
                if self.rg(*b) {
                    self.accumulate(adj, *b, diff.map(|v| -v));
                }
                if self.rg(*a) {
                    self.accumulate(adj, *a, diff);
                }
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => self.conv2d_backward(g, *input, *weight, *bias, *geom, adj),
        }
    }

    fn conv2d_backward(
        &self,
        g: &Array,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        geom: ConvGeometry,
        adj: &mut [Option<Array>],
    ) {
        let (x, w) = (self.value(input), self.value(weight));
        let (t_in, f_in, c_in) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (kt, kf, c_out) = (w.shape()[0], w.shape()[1], w.shape()[3]);
        let f_out = g.shape()[1];
        let gd = g.data();

        if self.rg(bias) {
            let db = self.adj_buf(adj, bias);
            for px in gd.chunks(c_out) {
                for (d, v) in db.data_mut().iter_mut().zip(px) {
                    *d += v;
                }
            }
        }
        let want_x = self.rg(input);
        let want_w = self.rg(weight);
        if !want_x && !want_w {
            return;
        }
        let mut dx = want_x.then(|| Array::zeros(x.shape()));
        let mut dw = want_w.then(|| Array::zeros(w.shape()));
        for t in 0..geom.out_t {
            for f in 0..f_out {
                let g_row = &gd[(t * f_out + f) * c_out..(t * f_out + f + 1) * c_out];
                for dt in 0..kt {
                    let Some(ti) = (t * geom.stride_t + dt)
                        .checked_sub(geom.pad_t)
                        .filter(|&ti| ti < t_in)
                    else {
                        continue;
                    };
                    for df in 0..kf {
                        let fi = f * geom.stride_f + df;
                        let x_base = (ti * f_in + fi) * c_in;
                        for c in 0..c_in {
                            let w_base = ((dt * kf + df) * c_in + c) * c_out;
                            if let Some(dx) = dx.as_mut() {
                                dx.data_mut()[x_base + c] += dot(&w.data()[w_base..w_base + c_out], g_row);
                            }
                            if let Some(dw) = dw.as_mut() {
                                let xv = x.data()[x_base + c];
                                for (d, &gv) in dw.data_mut()[w_base..w_base + c_out].iter_mut().zip(g_row) {
                                    *d += xv * gv;
                                }
                            }
                        }
                    }
                }
            }
        }
        if let Some(dx) = dx {
            self.accumulate(adj, input, dx);
        }
        if let Some(dw) = dw {
            self.accumulate(adj, weight, dw);
        }
    }
}

fn zip_map(a: &Array, b: &Array, f: impl Fn(f64, f64) -> f64) -> Array {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Array::new(a.shape().to_vec(), data).expect("same shape")
}
