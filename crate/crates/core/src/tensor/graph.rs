use std::borrow::Cow;

use super::Tensor;
use crate::error::{Error, Result};

/// Additive logit used for masked slots before a softmax.
pub const MASK_VALUE: f64 = -1e30;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf { param: Option<usize> },
    MatMul(usize, usize),
    MatMulBt(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    Tanh(usize),
    Sigmoid(usize),
    Square(usize),
    MaskedSoftmax(usize, Vec<bool>),
    MaskedLogSoftmax(usize, Vec<bool>),
    ConcatCols(Vec<usize>),
    StackRows(Vec<usize>),
    MeanAxis(usize, usize),
    MaxAxis(usize, Vec<usize>),
    Sum(usize),
    SliceCols(usize, usize),
    GatherRows(usize, Vec<usize>),
    Pick(usize, usize),
    LstmCell(usize, usize),
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
}

/// A single-threaded tape. Nodes are appended in evaluation order, so the
/// reverse of insertion order is a valid reverse topological order.
#[derive(Default)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn t(&self, v: usize) -> &Tensor {
        &self.nodes[v].value
    }

    /// Leaf holding a constant or an input whose gradient is wanted.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf { param: None })
    }

    /// Leaf borrowing a model parameter; its gradient is routed to slot `id`.
    pub fn param(&mut self, value: &'a Tensor, id: usize) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            op: Op::Leaf { param: Some(id) },
        });
        Var(self.nodes.len() - 1)
    }

    /// `a (m×k) · b (k×n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.t(a.0), self.t(b.0));
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        if tb.rows() != k {
            return Err(shape_err("matmul", format!("{:?} · {:?}", ta.shape(), tb.shape())));
        }
        let mut out = vec![0.0; m * n];
        let (ad, bd) = (ta.data(), tb.data());
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = ad[i * k + p];
                if x != 0.0 {
                    for (o, &bv) in orow.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                        *o += x * bv;
                    }
                }
            }
        }
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a.0, b.0)))
    }

    /// `a (m×k) · bᵀ` with `b` stored as `n×k`; a linear layer with weight `b`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.t(a.0), self.t(b.0));
        let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
        if tb.cols() != k {
            return Err(shape_err("matmul_bt", format!("{:?} · {:?}ᵀ", ta.shape(), tb.shape())));
        }
        let mut out = vec![0.0; m * n];
        let (ad, bd) = (ta.data(), tb.data());
        for i in 0..m {
            let arow = &ad[i * k..(i + 1) * k];
            for j in 0..n {
                out[i * n + j] = dot(arow, &bd[j * k..(j + 1) * k]);
            }
        }
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMulBt(a.0, b.0)))
    }

    fn broadcast_ok(ta: &Tensor, tb: &Tensor) -> bool {
        ta.len() == tb.len() && ta.rows() == tb.rows() || (tb.rows() == 1 && tb.cols() == ta.cols())
    }

    /// Elementwise sum; `b` may be a single row broadcast over the rows of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.t(a.0), self.t(b.0));
        if !Self::broadcast_ok(ta, tb) {
            return Err(shape_err("add", format!("{:?} + {:?}", ta.shape(), tb.shape())));
        }
        let c = tb.len();
        let data = ta.data().iter().enumerate().map(|(i, &x)| x + tb.data()[i % c]).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Add(a.0, b.0)))
    }

    /// Elementwise difference with the same broadcasting rule as [`Graph::add`].
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.t(a.0), self.t(b.0));
        if !Self::broadcast_ok(ta, tb) {
            return Err(shape_err("sub", format!("{:?} - {:?}", ta.shape(), tb.shape())));
        }
        let c = tb.len();
        let data = ta.data().iter().enumerate().map(|(i, &x)| x - tb.data()[i % c]).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Sub(a.0, b.0)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.t(a.0), self.t(b.0));
        if ta.len() != tb.len() || ta.rows() != tb.rows() {
            return Err(shape_err("mul", format!("{:?} * {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Mul(a.0, b.0)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.map(a.0, |x| x * s);
        self.push(out, Op::Scale(a.0, s))
    }

    fn map(&self, a: usize, f: impl Fn(f64) -> f64) -> Tensor {
        let ta = self.t(a);
        Tensor {
            shape: ta.shape().to_vec(),
            data: ta.data().iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.map(a.0, |x| x.max(0.0));
        self.push(out, Op::Relu(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.map(a.0, f64::tanh);
        self.push(out, Op::Tanh(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.map(a.0, sigmoid);
        self.push(out, Op::Sigmoid(a.0))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.map(a.0, |x| x * x);
        self.push(out, Op::Square(a.0))
    }

    /// Fused LSTM cell. `gates` holds the `4d` pre-activations in the order
    /// (input, forget, cell, output); returns `[h | c]` as a `2d` vector.
    pub fn lstm_cell(&mut self, gates: Var, c_prev: Var) -> Result<Var> {
        let (tg, tc) = (self.t(gates.0), self.t(c_prev.0));
        let d = tc.len();
        if tg.len() != 4 * d {
            return Err(shape_err("lstm_cell", format!("gates {:?} with state {:?}", tg.shape(), tc.shape())));
        }
        let (a, cp) = (tg.data(), tc.data());
        let mut out = vec![0.0; 2 * d];
        for k in 0..d {
            let (i, f, g, o) = (sigmoid(a[k]), sigmoid(a[d + k]), a[2 * d + k].tanh(), sigmoid(a[3 * d + k]));
            let c = i * g + f * cp[k];
            out[k] = o * c.tanh();
            out[d + k] = c;
        }
        Ok(self.push(Tensor::vector(out), Op::LstmCell(gates.0, c_prev.0)))
    }

    fn check_mask(&self, op: &'static str, a: usize, mask: &[bool]) -> Result<()> {
        let ta = self.t(a);
        if mask.len() != ta.len() {
            return Err(shape_err(op, format!("mask of {} for {:?}", mask.len(), ta.shape())));
        }
        if mask.iter().all(|&m| m) {
            return Err(shape_err(op, "every slot is masked".into()));
        }
        Ok(())
    }

    fn log_softmax_values(x: &[f64], mask: &[bool]) -> Vec<f64> {
        let z: Vec<f64> = x
            .iter()
            .zip(mask)
            .map(|(&v, &m)| if m { v + MASK_VALUE } else { v })
            .collect();
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        z.iter().map(|v| v - lse).collect()
    }

    /// Softmax over all entries of `a`; `true` in `mask` removes a slot.
    pub fn masked_softmax(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        self.check_mask("masked_softmax", a.0, mask)?;
        let ta = self.t(a.0);
        let data = Self::log_softmax_values(ta.data(), mask).into_iter().map(f64::exp).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(out, Op::MaskedSoftmax(a.0, mask.to_vec())))
    }

    /// Log-softmax over all entries of `a`; masked slots hold roughly [`MASK_VALUE`].
    pub fn masked_log_softmax(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        self.check_mask("masked_log_softmax", a.0, mask)?;
        let ta = self.t(a.0);
        let data = Self::log_softmax_values(ta.data(), mask);
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(out, Op::MaskedLogSoftmax(a.0, mask.to_vec())))
    }

    /// Concatenation along the last axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.t(parts[0].0).rows();
        if parts.iter().any(|p| self.t(p.0).rows() != rows) {
            let shapes: Vec<_> = parts.iter().map(|p| self.t(p.0).shape().to_vec()).collect();
            return Err(shape_err("concat_cols", format!("{shapes:?}")));
        }
        let cols: usize = parts.iter().map(|p| self.t(p.0).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.t(p.0).row(r));
            }
        }
        let shape = if rows == 1 && parts.iter().all(|p| self.t(p.0).shape().len() == 1) {
            vec![cols]
        } else {
            vec![rows, cols]
        };
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, Op::ConcatCols(parts.iter().map(|p| p.0).collect())))
    }

    /// Stacks equally wide rows into a matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let cols = self.t(rows[0].0).len();
        if rows.iter().any(|r| self.t(r.0).len() != cols || self.t(r.0).rows() != 1) {
            return Err(shape_err("stack_rows", "rows differ in width".into()));
        }
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            data.extend_from_slice(self.t(r.0).data());
        }
        let out = Tensor::matrix(rows.len(), cols, data)?;
        Ok(self.push(out, Op::StackRows(rows.iter().map(|r| r.0).collect())))
    }

    /// Mean over `axis` (0: over rows, giving a row; 1: over columns, giving a column).
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ta = self.t(a.0);
        let (r, c) = (ta.rows(), ta.cols());
        let out = match axis {
            0 => {
                let mut o = vec![0.0; c];
                for i in 0..r {
                    for (acc, v) in o.iter_mut().zip(ta.row(i)) {
                        *acc += v;
                    }
                }
                o.iter_mut().for_each(|v| *v /= r as f64);
                Tensor::vector(o)
            }
            1 => Tensor::matrix(r, 1, (0..r).map(|i| ta.row(i).iter().sum::<f64>() / c as f64).collect())?,
            _ => return Err(shape_err("mean_axis", format!("axis {axis} on {:?}", ta.shape()))),
        };
        Ok(self.push(out, Op::MeanAxis(a.0, axis)))
    }

    /// Max over `axis`; the gradient goes to the first maximal entry.
    pub fn max_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ta = self.t(a.0);
        let (r, c) = (ta.rows(), ta.cols());
        let d = ta.data();
        let (vals, arg): (Vec<f64>, Vec<usize>) = match axis {
            0 => (0..c)
                .map(|j| {
                    let mut best = j;
                    for i in 1..r {
                        if d[i * c + j] > d[best] {
                            best = i * c + j;
                        }
                    }
                    (d[best], best)
                })
                .unzip(),
            1 => (0..r)
                .map(|i| {
                    let mut best = i * c;
                    for j in 1..c {
                        if d[i * c + j] > d[best] {
                            best = i * c + j;
                        }
                    }
                    (d[best], best)
                })
                .unzip(),
            _ => return Err(shape_err("max_axis", format!("axis {axis} on {:?}", ta.shape()))),
        };
        let out = if axis == 0 {
            Tensor::vector(vals)
        } else {
            Tensor::matrix(r, 1, vals)?
        };
        Ok(self.push(out, Op::MaxAxis(a.0, arg)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.t(a.0).sum();
        self.push(Tensor::scalar(s), Op::Sum(a.0))
    }

    /// Columns `start..start + len` of every row.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ta = self.t(a.0);
        if start + len > ta.cols() {
            return Err(shape_err("slice_cols", format!("{start}..{} of {:?}", start + len, ta.shape())));
        }
        let mut data = Vec::with_capacity(ta.rows() * len);
        for r in 0..ta.rows() {
            data.extend_from_slice(&ta.row(r)[start..start + len]);
        }
        let shape = if ta.shape().len() == 2 {
            vec![ta.rows(), len]
        } else {
            vec![len]
        };
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, Op::SliceCols(a.0, start)))
    }

    /// Rows of `a` selected by `idx` (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let ta = self.t(a.0);
        if let Some(&bad) = idx.iter().find(|&&i| i >= ta.rows()) {
            return Err(shape_err("gather_rows", format!("row {bad} of {:?}", ta.shape())));
        }
        let c = ta.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(ta.row(i));
        }
        let out = Tensor::matrix(idx.len(), c, data)?;
        Ok(self.push(out, Op::GatherRows(a.0, idx.to_vec())))
    }

    /// Row `r` as a rank-1 tensor.
    pub fn row(&mut self, a: Var, r: usize) -> Result<Var> {
        let g = self.gather_rows(a, &[r])?;
        let n = self.nodes.last_mut().expect("just pushed");
        let c = n.value.cols();
        n.value.to_mut().shape = vec![c];
        Ok(g)
    }

    /// The `k`-th entry of `a` (flat index) as a scalar.
    pub fn pick(&mut self, a: Var, k: usize) -> Result<Var> {
        let ta = self.t(a.0);
        if k >= ta.len() {
            return Err(shape_err("pick", format!("index {k} of {:?}", ta.shape())));
        }
        let v = ta.data()[k];
        Ok(self.push(Tensor::scalar(v), Op::Pick(a.0, k)))
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.t(root.0).len() != 1 {
            return Err(shape_err(
                "backward",
                format!("root must be scalar, got {:?}", self.t(root.0).shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        fn slot(grads: &mut [Option<Vec<f64>>], i: usize, len: usize) -> &mut Vec<f64> {
            grads[i].get_or_insert_with(|| vec![0.0; len])
        }
        let node = &self.nodes[idx];
        let y = node.value.data();
        match &node.op {
            Op::Leaf { .. } => {}
            &Op::MatMul(a, b) => {
                let (ta, tb) = (self.t(a), self.t(b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                let (ad, bd) = (ta.data(), tb.data());
                {
                    let ga = slot(grads, a, m * k);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            ga[i * k + p] += dot(grow, &bd[p * n..(p + 1) * n]);
                        }
                    }
                }
                let gb = slot(grads, b, k * n);
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let x = ad[i * k + p];
                        if x != 0.0 {
                            for (o, &gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += x * gv;
                            }
                        }
                    }
                }
            }
            &Op::MatMulBt(a, b) => {
                let (ta, tb) = (self.t(a), self.t(b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
                let (ad, bd) = (ta.data(), tb.data());
                {
                    let ga = slot(grads, a, m * k);
                    for i in 0..m {
                        let garow = &mut ga[i * k..(i + 1) * k];
                        for j in 0..n {
                            let gv = g[i * n + j];
                            if gv != 0.0 {
                                for (o, &bv) in garow.iter_mut().zip(&bd[j * k..(j + 1) * k]) {
                                    *o += gv * bv;
                                }
                            }
                        }
                    }
                }
                let gb = slot(grads, b, n * k);
                for i in 0..m {
                    let arow = &ad[i * k..(i + 1) * k];
                    for j in 0..n {
                        let gv = g[i * n + j];
                        if gv != 0.0 {
                            for (o, &av) in gb[j * k..(j + 1) * k].iter_mut().zip(arow) {
                                *o += gv * av;
                            }
                        }
                    }
                }
            }
            &Op::Add(a, b) | &Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Add(..)) { 1.0 } else { -1.0 };
                {
                    let ga = slot(grads, a, g.len());
                    for (o, &gv) in ga.iter_mut().zip(g) {
                        *o += gv;
                    }
                }
                let blen = self.t(b).len();
                let gb = slot(grads, b, blen);
                for (i, &gv) in g.iter().enumerate() {
                    gb[i % blen] += sign * gv;
                }
            }
            &Op::Mul(a, b) => {
                let (ad, bd) = (self.t(a).data(), self.t(b).data());
                {
                    let ga = slot(grads, a, g.len());
                    for i in 0..g.len() {
                        ga[i] += g[i] * bd[i];
                    }
                }
                let gb = slot(grads, b, g.len());
                for i in 0..g.len() {
                    gb[i] += g[i] * ad[i];
                }
            }
            &Op::Scale(a, s) => {
                let ga = slot(grads, a, g.len());
                for (o, &gv) in ga.iter_mut().zip(g) {
                    *o += s * gv;
                }
            }
            &Op::Relu(a) => {
                let ga = slot(grads, a, g.len());
                for i in 0..g.len() {
                    if y[i] > 0.0 {
                        ga[i] += g[i];
                    }
                }
            }
            &Op::Tanh(a) => {
                let ga = slot(grads, a, g.len());
                for i in 0..g.len() {
                    ga[i] += g[i] * (1.0 - y[i] * y[i]);
                }
            }
            &Op::Sigmoid(a) => {
                let ga = slot(grads, a, g.len());
                for i in 0..g.len() {
                    ga[i] += g[i] * y[i] * (1.0 - y[i]);
                }
            }
            &Op::Square(a) => {
                let ad = self.t(a).data();
                let ga = slot(grads, a, g.len());
                for i in 0..g.len() {
                    ga[i] += 2.0 * ad[i] * g[i];
                }
            }
            Op::MaskedSoftmax(a, mask) => {
                let s: f64 = g.iter().zip(y).map(|(gv, yv)| gv * yv).sum();
                let ga = slot(grads, *a, g.len());
                for i in 0..g.len() {
                    if !mask[i] {
                        ga[i] += y[i] * (g[i] - s);
                    }
                }
            }
            Op::MaskedLogSoftmax(a, mask) => {
                let total: f64 = g.iter().zip(mask).filter(|(_, &m)| !m).map(|(gv, _)| gv).sum();
                let ga = slot(grads, *a, g.len());
                for i in 0..g.len() {
                    if !mask[i] {
                        ga[i] += g[i] - y[i].exp() * total;
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let rows = node.value.rows();
                let cols = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let pc = self.t(p).cols();
                    let gp = slot(grads, p, rows * pc);
                    for r in 0..rows {
                        for c in 0..pc {
                            gp[r * pc + c] += g[r * cols + offset + c];
                        }
                    }
                    offset += pc;
                }
            }
            Op::StackRows(rows) => {
                let cols = node.value.cols();
                for (r, &p) in rows.iter().enumerate() {
                    let gp = slot(grads, p, cols);
                    for c in 0..cols {
                        gp[c] += g[r * cols + c];
                    }
                }
            }
            &Op::MeanAxis(a, axis) => {
                let ta = self.t(a);
                let (r, c) = (ta.rows(), ta.cols());
                let ga = slot(grads, a, r * c);
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] += if axis == 0 { g[j] / r as f64 } else { g[i] / c as f64 };
                    }
                }
            }
            Op::MaxAxis(a, arg) => {
                let len = self.t(*a).len();
                let ga = slot(grads, *a, len);
                for (k, &src) in arg.iter().enumerate() {
                    ga[src] += g[k];
                }
            }
            &Op::LstmCell(ga_idx, c_idx) => {
                let (a, cp) = (self.t(ga_idx).data(), self.t(c_idx).data());
                let d = cp.len();
                let mut da = vec![0.0; 4 * d];
                let mut dcp = vec![0.0; d];
                for k in 0..d {
                    let (i, f, gg, o) = (sigmoid(a[k]), sigmoid(a[d + k]), a[2 * d + k].tanh(), sigmoid(a[3 * d + k]));
                    let c = y[d + k];
                    let tc = c.tanh();
                    let dc = g[d + k] + g[k] * o * (1.0 - tc * tc);
                    da[k] = dc * gg * i * (1.0 - i);
                    da[d + k] = dc * cp[k] * f * (1.0 - f);
                    da[2 * d + k] = dc * i * (1.0 - gg * gg);
                    da[3 * d + k] = g[k] * tc * o * (1.0 - o);
                    dcp[k] = dc * f;
                }
                for (o, v) in slot(grads, ga_idx, 4 * d).iter_mut().zip(da) {
                    *o += v;
                }
                for (o, v) in slot(grads, c_idx, d).iter_mut().zip(dcp) {
                    *o += v;
                }
            }
            &Op::Sum(a) => {
                let len = self.t(a).len();
                let ga = slot(grads, a, len);
                for o in ga.iter_mut() {
                    *o += g[0];
                }
            }
            &Op::SliceCols(a, start) => {
                let ta = self.t(a);
                let (rows, cols) = (ta.rows(), ta.cols());
                let len = node.value.cols();
                let ga = slot(grads, a, rows * cols);
                for r in 0..rows {
                    for c in 0..len {
                        ga[r * cols + start + c] += g[r * len + c];
                    }
                }
            }
            Op::GatherRows(a, idx) => {
                let ta = self.t(*a);
                let cols = ta.cols();
                let ga = slot(grads, *a, ta.len());
                for (k, &r) in idx.iter().enumerate() {
                    for c in 0..cols {
                        ga[r * cols + c] += g[k * cols + c];
                    }
                }
            }
            &Op::Pick(a, k) => {
                let len = self.t(a).len();
                slot(grads, a, len)[k] += g[0];
            }
        }
    }

    /// Adds each parameter leaf's gradient into `out[id]`.
    pub fn accumulate_param_grads(&self, grads: &Gradients, out: &mut [Tensor]) {
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { param: Some(id) } = node.op {
                if let Some(Some(g)) = grads.grads.get(i) {
                    for (o, &gv) in out[id].data_mut().iter_mut().zip(g) {
                        *o += gv;
                    }
                }
            }
        }
    }
}

/// Per-node gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros when `v` does not influence the root.
    pub fn wrt(&self, graph: &Graph<'_>, v: Var) -> Vec<f64> {
        match self.grads.get(v.0) {
            Some(Some(g)) => g.clone(),
            _ => vec![0.0; graph.value(v).len()],
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{max_relative_error, numeric_gradient};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Checks d(sum(w ⊙ f(inputs)))/d(inputs) against central differences.
    fn check<F>(inputs: Vec<Tensor>, f: F)
    where
        F: for<'g> Fn(&mut Graph<'g>, &[Var]) -> Result<Var>,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let probe_shape = {
            let mut g = Graph::new();
            let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
            let out = f(&mut g, &vars).unwrap();
            let v = g.value(out);
            let masked: Vec<bool> = v.data().iter().map(|x| x.abs() > 1e20).collect();
            (v.shape().to_vec(), masked)
        };
        // Masked log-probabilities sit near -1e30 and would swamp the probe.
        let mut weights = rand_tensor(&mut rng, &probe_shape.0);
        for (w, &m) in weights.data_mut().iter_mut().zip(&probe_shape.1) {
            if m {
                *w = 0.0;
            }
        }
        let scalar = |ts: &[Tensor]| -> f64 {
            let mut g = Graph::new();
            let vars: Vec<Var> = ts.iter().map(|t| g.leaf(t.clone())).collect();
            let out = f(&mut g, &vars).unwrap();
            g.value(out).data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
        };
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
        let out = f(&mut g, &vars).unwrap();
        let w = g.leaf(weights.clone());
        let p = g.mul(out, w).unwrap();
        let prod = g.sum(p);
        let grads = g.backward(prod).unwrap();
        let numeric = numeric_gradient(scalar, &inputs, 1e-5);
        for (k, v) in vars.iter().enumerate() {
            let analytic = grads.wrt(&g, *v);
            let err = max_relative_error(&analytic, numeric[k].data(), 1e-8);
            assert!(err < 1e-4, "input {k}: rel err {err}\n{analytic:?}\n{:?}", numeric[k].data());
        }
    }

    #[test]
    fn relu_values() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![-1.0, 0.0, 2.0]));
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn masked_softmax_uniform() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![0.3; 6]));
        let mask = [false, true, false, false, true, false];
        let p = g.masked_softmax(x, &mask).unwrap();
        for (v, m) in g.value(p).data().iter().zip(mask) {
            if m {
                assert!(*v < 1e-300);
            } else {
                assert!((v - 0.25).abs() < 1e-15);
            }
        }
        assert!((g.value(p).sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fully_masked_is_an_error() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![0.0; 3]));
        assert!(g.masked_softmax(x, &[true; 3]).is_err());
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::zeros(&[2, 3]));
        let b = g.leaf(Tensor::zeros(&[2, 3]));
        match g.matmul(a, b) {
            Err(Error::Shape { op, detail }) => {
                assert_eq!(op, "matmul");
                assert!(detail.contains("[2, 3]"));
            }
            other => panic!("unexpected {:?}", other.map(|_| ())),
        }
        assert!(g.backward(a).is_err());
    }

    #[test]
    fn sum_gives_ones_and_fanout_adds() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let y = g.add(x, x).unwrap();
        let s = g.sum(y);
        let unused = g.leaf(Tensor::vector(vec![5.0]));
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(&g, x), vec![2.0, 2.0, 2.0]);
        assert_eq!(grads.wrt(&g, unused), vec![0.0]);

        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0]));
        let s = g.sum(x);
        assert_eq!(g.backward(s).unwrap().wrt(&g, x), vec![1.0, 1.0]);
    }

    #[test]
    fn primitive_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = rand_tensor(&mut rng, &[3, 4]);
        let b = rand_tensor(&mut rng, &[4, 5]);
        let bt = rand_tensor(&mut rng, &[5, 4]);
        let row = rand_tensor(&mut rng, &[4]);
        let same = rand_tensor(&mut rng, &[3, 4]);
        check(vec![a.clone(), b], |g, v| g.matmul(v[0], v[1]));
        check(vec![a.clone(), bt], |g, v| g.matmul_bt(v[0], v[1]));
        check(vec![a.clone(), row.clone()], |g, v| g.add(v[0], v[1]));
        check(vec![a.clone(), row.clone()], |g, v| g.sub(v[0], v[1]));
        check(vec![a.clone(), same.clone()], |g, v| g.mul(v[0], v[1]));
        check(vec![a.clone()], |g, v| Ok(g.scale(v[0], -1.7)));
        check(vec![a.clone()], |g, v| Ok(g.relu(v[0])));
        check(vec![a.clone()], |g, v| Ok(g.tanh(v[0])));
        check(vec![a.clone()], |g, v| Ok(g.sigmoid(v[0])));
        check(vec![a.clone()], |g, v| Ok(g.square(v[0])));
        check(vec![a.clone()], |g, v| Ok(g.sum(v[0])));
        let mask = [false, true, false, false, false, true, false, false, false, false, true, false];
        check(vec![a.clone()], |g, v| g.masked_softmax(v[0], &mask));
        check(vec![a.clone()], |g, v| g.masked_log_softmax(v[0], &mask));
        check(vec![a.clone(), same.clone(), row.clone()], |g, v| {
            let r = g.gather_rows(v[2], &[0, 0, 0])?;
            g.concat_cols(&[v[0], v[1], r])
        });
        check(vec![row.clone(), row.clone()], |g, v| g.stack_rows(&[v[0], v[1], v[0]]));
        check(vec![a.clone()], |g, v| g.mean_axis(v[0], 0));
        check(vec![a.clone()], |g, v| g.mean_axis(v[0], 1));
        check(vec![a.clone()], |g, v| g.max_axis(v[0], 0));
        check(vec![a.clone()], |g, v| g.max_axis(v[0], 1));
        check(vec![a.clone()], |g, v| g.slice_cols(v[0], 1, 2));
        check(vec![a.clone()], |g, v| g.gather_rows(v[0], &[2, 0, 2]));
        check(vec![a.clone()], |g, v| g.row(v[0], 1));
        check(vec![a], |g, v| g.pick(v[0], 5));
    }

    #[test]
    fn lstm_cell_gradients_and_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let gates = rand_tensor(&mut rng, &[12]);
        let c = rand_tensor(&mut rng, &[3]);
        check(vec![gates.clone(), c.clone()], |g, v| g.lstm_cell(v[0], v[1]));
        let mut g = Graph::new();
        let (a, cp) = (g.leaf(gates), g.leaf(c));
        let fused = g.lstm_cell(a, cp).unwrap();
        let parts: Vec<Var> = (0..4).map(|k| g.slice_cols(a, 3 * k, 3).unwrap()).collect();
        let (i, f, o) = (g.sigmoid(parts[0]), g.sigmoid(parts[1]), g.sigmoid(parts[3]));
        let gg = g.tanh(parts[2]);
        let ig = g.mul(i, gg).unwrap();
        let fc = g.mul(f, cp).unwrap();
        let cn = g.add(ig, fc).unwrap();
        let tc = g.tanh(cn);
        let h = g.mul(o, tc).unwrap();
        let expect = g.concat_cols(&[h, cn]).unwrap();
        assert_eq!(g.value(fused).data(), g.value(expect).data());
        assert!(g.lstm_cell(a, a).is_err());
    }

    #[test]
    fn tanh_of_linear_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = rand_tensor(&mut rng, &[3, 5]);
        let x = rand_tensor(&mut rng, &[5]);
        let f = |ts: &[Tensor]| {
            let mut g = Graph::new();
            let w = g.leaf(ts[0].clone());
            let x = g.leaf(ts[1].clone());
            let y = g.matmul_bt(x, w).unwrap();
            let t = g.tanh(y);
            let s = g.sum(t);
            g.value(s).item()
        };
        let mut g = Graph::new();
        let wv = g.leaf(w.clone());
        let xv = g.leaf(x.clone());
        let y = g.matmul_bt(xv, wv).unwrap();
        let t = g.tanh(y);
        let s = g.sum(t);
        let grads = g.backward(s).unwrap();
        let num = numeric_gradient(f, &[w, x], 1e-5);
        assert!(max_relative_error(&grads.wrt(&g, wv), num[0].data(), 1e-8) < 1e-4);
        assert!(max_relative_error(&grads.wrt(&g, xv), num[1].data(), 1e-8) < 1e-4);
    }

    #[test]
    fn max_ties_route_to_first() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::matrix(3, 1, vec![2.0, 2.0, 1.0]).unwrap());
        let m = g.max_axis(x, 0).unwrap();
        let s = g.sum(m);
        assert_eq!(g.backward(s).unwrap().wrt(&g, x), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn deterministic_replay() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = rand_tensor(&mut rng, &[4, 4]);
        let run = || {
            let mut g = Graph::new();
            let x = g.leaf(a.clone());
            let y = g.matmul(x, x).unwrap();
            let t = g.tanh(y);
            let s = g.sum(t);
            (g.value(s).item(), g.backward(s).unwrap().wrt(&g, x))
        };
        assert_eq!(run(), run());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn softmax_is_a_distribution(
                logits in prop::collection::vec(-50.0..50.0f64, 2..40),
                mask_bits in any::<u64>(),
            ) {
                let n = logits.len();
                let mut mask: Vec<bool> = (0..n).map(|i| (mask_bits >> (i % 64)) & 1 == 1).collect();
                mask[0] = false;
                let mut g = Graph::new();
                let x = g.leaf(Tensor::vector(logits));
                let p = g.masked_softmax(x, &mask).unwrap();
                let v = g.value(p).data();
                prop_assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                prop_assert!(v.iter().all(|&x| x >= 0.0));
                for (x, m) in v.iter().zip(&mask) {
                    if *m { prop_assert!(*x < 1e-300); }
                }
            }
        }
    }
}
