//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! [`Graph::backward`] walks the tape in reverse and accumulates gradients for
//! every node that transitively depends on a gradient-requiring leaf.

use super::kernels::{self, ConvGeom};
use super::{NumError, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Gelu(Var),
    Relu(Var),
    Softmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Embedding { table: Var, ids: Vec<usize> },
    Conv2d { x: Var, w: Var, b: Var, geom: ConvGeom },
    ConvTranspose2d { x: Var, w: Var, b: Var, geom: ConvGeom },
    AdaptivePool { x: Var, oh: usize, ow: usize },
    L2Normalize { x: Var, norms: Vec<f64> },
    GatherRows { x: Var, idx: Vec<usize> },
    ScatterRows { x: Var, idx: Vec<usize> },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    RowMax { x: Var, argmax: Vec<usize> },
    Sum(Var),
    Mean(Var),
    CrossEntropy { logits: Var, labels: Vec<usize>, rows: Vec<usize>, probs: Vec<f64> },
    L1Masked { pred: Var, target: Tensor, mask: Vec<bool>, count: usize },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | AddBias(a, b) | MatMul(a, b) | MatMulBt(a, b) => {
                vec![*a, *b]
            }
            Scale(a, _) | Transpose(a) | Reshape(a) | Gelu(a) | Relu(a) | Softmax(a) | Sum(a)
            | Mean(a) => vec![*a],
            LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Embedding { table, .. } => vec![*table],
            Conv2d { x, w, b, .. } | ConvTranspose2d { x, w, b, .. } => vec![*x, *w, *b],
            AdaptivePool { x, .. }
            | L2Normalize { x, .. }
            | GatherRows { x, .. }
            | ScatterRows { x, .. }
            | SliceCols { x, .. }
            | RowMax { x, .. } => vec![*x],
            ConcatRows(v) | ConcatCols(v) => v.clone(),
            CrossEntropy { logits, .. } => vec![*logits],
            L1Masked { pred, .. } => vec![*pred],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Per-node gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn mismatch(op: &'static str, detail: String) -> NumError {
    NumError::ShapeMismatch { op, detail }
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn binary_same_shape(&self, op: &'static str, a: Var, b: Var) -> (&Tensor, &Tensor) {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "{op}: shape mismatch");
        (ta, tb)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = self.binary_same_shape("add", a, b);
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::from_parts(ta.shape().to_vec(), data);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = self.binary_same_shape("sub", a, b);
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x - y).collect();
        let out = Tensor::from_parts(ta.shape().to_vec(), data);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = self.binary_same_shape("mul", a, b);
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::from_parts(ta.shape().to_vec(), data);
        self.push(out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x * c);
        self.push(out, Op::Scale(a, c))
    }

    /// `x[.., j] + b[j]` with `b` broadcast over all leading rows.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let (tx, tb) = (self.value(x), self.value(b));
        let m = tb.numel();
        assert_eq!(*tx.shape().last().unwrap(), m, "add_bias: width mismatch");
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(m) {
            for (v, bv) in row.iter_mut().zip(tb.data()) {
                *v += bv;
            }
        }
        let out = Tensor::from_parts(tx.shape().to_vec(), data);
        self.push(out, Op::AddBias(x, b))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (n, k) = self.value(a).dims2();
        let (k2, m) = self.value(b).dims2();
        assert_eq!(k, k2, "matmul: inner dims {k} vs {k2}");
        let data = kernels::matmul(self.value(a).data(), self.value(b).data(), n, k, m);
        self.push(Tensor::from_parts(vec![n, m], data), Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let (n, k) = self.value(a).dims2();
        let (m, k2) = self.value(b).dims2();
        assert_eq!(k, k2, "matmul_bt: inner dims {k} vs {k2}");
        let data = kernels::matmul_bt(self.value(a).data(), self.value(b).data(), n, k, m);
        self.push(Tensor::from_parts(vec![n, m], data), Op::MatMulBt(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (n, m) = self.value(a).dims2();
        let data = kernels::transpose(self.value(a).data(), n, m);
        self.push(Tensor::from_parts(vec![m, n], data), Op::Transpose(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, NumError> {
        let out = self.value(a).clone().reshaped(shape)?;
        Ok(self.push(out, Op::Reshape(a)))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(kernels::gelu);
        self.push(out, Op::Gelu(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    /// Softmax over the last axis of a rank-2 tensor.
    pub fn softmax(&mut self, a: Var) -> Var {
        let (n, m) = self.value(a).dims2();
        let mut data = vec![0.0; n * m];
        for (src, dst) in self.value(a).data().chunks(m).zip(data.chunks_mut(m)) {
            kernels::softmax_row(src, dst);
        }
        self.push(Tensor::from_parts(vec![n, m], data), Op::Softmax(a))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let (n, m) = self.value(x).dims2();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        assert!(g.len() == m && b.len() == m, "layer_norm: affine width mismatch");
        let mut xhat = vec![0.0; n * m];
        let mut rstd = vec![0.0; n];
        let mut out = vec![0.0; n * m];
        for (i, row) in self.value(x).data().chunks(m).enumerate() {
            let mean = row.iter().sum::<f64>() / m as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            let r = 1.0 / (var + eps).sqrt();
            rstd[i] = r;
            for j in 0..m {
                let h = (row[j] - mean) * r;
                xhat[i * m + j] = h;
                out[i * m + j] = h * g[j] + b[j];
            }
        }
        let out = Tensor::from_parts(vec![n, m], out);
        self.push(out, Op::LayerNorm { x, gamma, beta, xhat, rstd })
    }

    /// Row lookup; gradients scatter-add back into the table rows.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, NumError> {
        let (v, d) = self.value(table).dims2();
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(NumError::IndexOutOfRange { op: "embedding", index: bad, len: v });
        }
        let t = self.value(table);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::from_parts(vec![ids.len(), d], data);
        Ok(self.push(out, Op::Embedding { table, ids: ids.to_vec() }))
    }

    fn conv_geom(&self, x: Var, w: Var, b: Var, stride: usize, pad: usize, transposed: bool) -> Result<ConvGeom, NumError> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        if xs.len() != 3 || ws.len() != 4 || ws[2] != ws[3] {
            return Err(mismatch("conv", format!("input {xs:?}, weight {ws:?}")));
        }
        let (cin, cout) = if transposed { (ws[0], ws[1]) } else { (ws[1], ws[0]) };
        if xs[0] != cin || self.value(b).numel() != cout {
            return Err(mismatch("conv", format!("input {xs:?}, weight {ws:?}, bias {:?}", self.shape(b))));
        }
        let geom = ConvGeom { cin, cout, h: xs[1], w: xs[2], k: ws[2], stride, pad };
        if !transposed && (geom.h + 2 * pad < geom.k || geom.w + 2 * pad < geom.k) {
            return Err(mismatch("conv", "kernel larger than padded input".into()));
        }
        if transposed && ((geom.h - 1) * stride + geom.k <= 2 * pad) {
            return Err(mismatch("conv_transpose", "empty output".into()));
        }
        Ok(geom)
    }

    /// `x: [Cin,H,W]`, `w: [Cout,Cin,k,k]`, `b: [Cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var, NumError> {
        let geom = self.conv_geom(x, w, b, stride, pad, false)?;
        let data = kernels::conv2d(&geom, self.value(x).data(), self.value(w).data(), self.value(b).data());
        let (oh, ow) = geom.conv_out();
        let out = Tensor::from_parts(vec![geom.cout, oh, ow], data);
        Ok(self.push(out, Op::Conv2d { x, w, b, geom }))
    }

    /// `x: [Cin,H,W]`, `w: [Cin,Cout,k,k]`, `b: [Cout]`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var, NumError> {
        let geom = self.conv_geom(x, w, b, stride, pad, true)?;
        let data =
            kernels::conv_transpose2d(&geom, self.value(x).data(), self.value(w).data(), self.value(b).data());
        let (oh, ow) = geom.deconv_out();
        let out = Tensor::from_parts(vec![geom.cout, oh, ow], data);
        Ok(self.push(out, Op::ConvTranspose2d { x, w, b, geom }))
    }

    /// Adaptive average pooling of `[C,H,W]` down to `[C,oh,ow]`. Windows
    /// partition the input: cell `i` spans `floor(i·H/oh)..floor((i+1)·H/oh)`.
    pub fn adaptive_avg_pool(&mut self, x: Var, oh: usize, ow: usize) -> Result<Var, NumError> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(mismatch("adaptive_avg_pool", format!("expected [C,H,W], got {s:?}")));
        }
        if s[1] < oh || s[2] < ow {
            return Err(NumError::PoolTooSmall { h: s[1], w: s[2], oh, ow });
        }
        let data = kernels::adaptive_avg_pool(self.value(x).data(), s[0], s[1], s[2], oh, ow);
        let out = Tensor::from_parts(vec![s[0], oh, ow], data);
        Ok(self.push(out, Op::AdaptivePool { x, oh, ow }))
    }

    /// Unit-norm rows. All-zero rows stay zero (and pass zero gradient).
    pub fn l2_normalize(&mut self, x: Var) -> Var {
        let (n, m) = self.value(x).dims2();
        let mut data = self.value(x).data().to_vec();
        let mut norms = vec![0.0; n];
        for (i, row) in data.chunks_mut(m).enumerate() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            norms[i] = norm;
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
        let out = Tensor::from_parts(vec![n, m], data);
        self.push(out, Op::L2Normalize { x, norms })
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Var {
        let t = self.value(x);
        let (n, m) = t.dims2();
        let mut data = Vec::with_capacity(idx.len() * m);
        for &i in idx {
            assert!(i < n, "gather_rows: row {i} out of {n}");
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::from_parts(vec![idx.len(), m], data);
        self.push(out, Op::GatherRows { x, idx: idx.to_vec() })
    }

    /// Places row `r` of `x` at row `idx[r]` of an `[n, m]` zero tensor.
    pub fn scatter_rows(&mut self, x: Var, idx: &[usize], n: usize) -> Var {
        let t = self.value(x);
        let (k, m) = t.dims2();
        assert_eq!(k, idx.len(), "scatter_rows: index count");
        let mut data = vec![0.0; n * m];
        for (r, &i) in idx.iter().enumerate() {
            assert!(i < n, "scatter_rows: row {i} out of {n}");
            data[i * m..(i + 1) * m].copy_from_slice(t.row(r));
        }
        let out = Tensor::from_parts(vec![n, m], data);
        self.push(out, Op::ScatterRows { x, idx: idx.to_vec() })
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let m = self.value(parts[0]).dims2().1;
        let mut data = Vec::new();
        let mut n = 0;
        for &p in parts {
            let (pn, pm) = self.value(p).dims2();
            assert_eq!(pm, m, "concat_rows: width mismatch");
            data.extend_from_slice(self.value(p).data());
            n += pn;
        }
        self.push(Tensor::from_parts(vec![n, m], data), Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let n = self.value(parts[0]).dims2().0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let (pn, pm) = self.value(p).dims2();
                assert_eq!(pn, n, "concat_cols: height mismatch");
                pm
            })
            .collect();
        let m: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(n * m);
        for i in 0..n {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        self.push(Tensor::from_parts(vec![n, m], data), Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let (n, m) = self.value(x).dims2();
        assert!(start + len <= m, "slice_cols: {start}+{len} > {m}");
        let t = self.value(x);
        let mut data = Vec::with_capacity(n * len);
        for i in 0..n {
            data.extend_from_slice(&t.row(i)[start..start + len]);
        }
        self.push(Tensor::from_parts(vec![n, len], data), Op::SliceCols { x, start })
    }

    /// Per-row maximum of a rank-2 tensor, shape `[n]`. Ties resolve to the
    /// lowest column; the gradient flows to that column only.
    pub fn row_max(&mut self, x: Var) -> Var {
        let (n, m) = self.value(x).dims2();
        assert!(m > 0, "row_max over empty rows");
        let mut vals = Vec::with_capacity(n);
        let mut argmax = Vec::with_capacity(n);
        for row in self.value(x).data().chunks(m) {
            let (j, v) = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bj, bv), (j, &v)| if v > bv { (j, v) } else { (bj, bv) });
            vals.push(v);
            argmax.push(j);
        }
        self.push(Tensor::from_parts(vec![n], vals), Op::RowMax { x, argmax })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push(Tensor::scalar(s), Op::Mean(x))
    }

    /// Mean of `-log softmax(logits)[label]` over rows with `ignore[i] == false`.
    pub fn cross_entropy_mean(&mut self, logits: Var, labels: &[usize], ignore: &[bool]) -> Result<Var, NumError> {
        let (n, c) = self.value(logits).dims2();
        if labels.len() != n || ignore.len() != n {
            return Err(mismatch("cross_entropy_mean", format!("{n} rows, {} labels, {} mask", labels.len(), ignore.len())));
        }
        let rows: Vec<usize> = (0..n).filter(|&i| !ignore[i]).collect();
        if rows.is_empty() {
            return Err(NumError::EmptySelection("cross_entropy_mean: every row is ignored"));
        }
        if let Some(&bad) = rows.iter().map(|&i| &labels[i]).find(|&&l| l >= c) {
            return Err(NumError::IndexOutOfRange { op: "cross_entropy_mean", index: bad, len: c });
        }
        let t = self.value(logits);
        let mut probs = vec![0.0; rows.len() * c];
        let mut total = 0.0;
        for (r, &i) in rows.iter().enumerate() {
            let row = t.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[labels[i]];
            kernels::softmax_row(row, &mut probs[r * c..(r + 1) * c]);
        }
        let value = total / rows.len() as f64;
        let op = Op::CrossEntropy { logits, labels: labels.to_vec(), rows, probs };
        Ok(self.push(Tensor::scalar(value), op))
    }

    /// Mean of `|pred - target|` over elements where `mask` is set.
    pub fn l1_masked_mean(&mut self, pred: Var, target: &Tensor, mask: &[bool]) -> Result<Var, NumError> {
        let p = self.value(pred);
        if p.shape() != target.shape() || mask.len() != p.numel() {
            return Err(mismatch(
                "l1_masked_mean",
                format!("pred {:?}, target {:?}, mask {}", p.shape(), target.shape(), mask.len()),
            ));
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(NumError::EmptySelection("l1_masked_mean: empty mask"));
        }
        let total: f64 = p
            .data()
            .iter()
            .zip(target.data())
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|((a, b), _)| (a - b).abs())
            .sum();
        let op = Op::L1Masked { pred, target: target.clone(), mask: mask.to_vec(), count };
        Ok(self.push(Tensor::scalar(total / count as f64), op))
    }

    /// Reverse sweep from a single-element `loss` node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).numel(), 1, "backward from non-scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn backprop_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |v: Var, delta: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        let like = |v: Var, data: Vec<f64>| Tensor::from_parts(self.shape(v).to_vec(), data);
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, like(*a, gd.iter().zip(tb).map(|(x, y)| x * y).collect()));
                acc(*b, like(*b, gd.iter().zip(ta).map(|(x, y)| x * y).collect()));
            }
            Op::Scale(a, c) => acc(*a, g.map(|x| x * c)),
            Op::AddBias(x, b) => {
                acc(*x, g.clone());
                let m = self.value(*b).numel();
                let mut gb = vec![0.0; m];
                for row in gd.chunks(m) {
                    for (s, v) in gb.iter_mut().zip(row) {
                        *s += v;
                    }
                }
                acc(*b, like(*b, gb));
            }
            Op::MatMul(a, b) => {
                let (n, k) = self.value(*a).dims2();
                let m = self.value(*b).dims2().1;
                // dA = G·Bᵀ, dB = Aᵀ·G
                acc(*a, like(*a, kernels::matmul_bt(gd, self.value(*b).data(), n, m, k)));
                acc(*b, like(*b, kernels::matmul_at(self.value(*a).data(), gd, n, k, m)));
            }
            Op::MatMulBt(a, b) => {
                let (n, k) = self.value(*a).dims2();
                let m = self.value(*b).dims2().0;
                // C = A·Bᵀ: dA = G·B, dB = Gᵀ·A
                acc(*a, like(*a, kernels::matmul(gd, self.value(*b).data(), n, m, k)));
                acc(*b, like(*b, kernels::matmul_at(gd, self.value(*a).data(), n, m, k)));
            }
            Op::Transpose(a) => {
                let (n, m) = self.value(*a).dims2();
                acc(*a, like(*a, kernels::transpose(gd, m, n)));
            }
            Op::Reshape(a) => acc(*a, like(*a, gd.to_vec())),
            Op::Gelu(a) => {
                let x = self.value(*a).data();
                acc(*a, like(*a, gd.iter().zip(x).map(|(g, &x)| g * kernels::gelu_grad(x)).collect()));
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                acc(*a, like(*a, gd.iter().zip(x).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect()));
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let m = node.value.dims2().1;
                let mut dx = vec![0.0; y.len()];
                for ((yr, gr), dr) in y.chunks(m).zip(gd.chunks(m)).zip(dx.chunks_mut(m)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..m {
                        dr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                acc(*a, like(*a, dx));
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let (n, m) = node.value.dims2();
                let gam = self.value(*gamma).data();
                let mut dx = vec![0.0; n * m];
                let mut dg = vec![0.0; m];
                let mut db = vec![0.0; m];
                for i in 0..n {
                    let gr = &gd[i * m..(i + 1) * m];
                    let hr = &xhat[i * m..(i + 1) * m];
                    let mut mean_dh = 0.0;
                    let mut mean_dh_h = 0.0;
                    for j in 0..m {
                        let dh = gr[j] * gam[j];
                        mean_dh += dh;
                        mean_dh_h += dh * hr[j];
                        dg[j] += gr[j] * hr[j];
                        db[j] += gr[j];
                    }
                    mean_dh /= m as f64;
                    mean_dh_h /= m as f64;
                    for j in 0..m {
                        dx[i * m + j] = rstd[i] * (gr[j] * gam[j] - mean_dh - hr[j] * mean_dh_h);
                    }
                }
                acc(*x, like(*x, dx));
                acc(*gamma, like(*gamma, dg));
                acc(*beta, like(*beta, db));
            }
            Op::Embedding { table, ids } => {
                if self.nodes[table.0].requires_grad {
                    let d = self.value(*table).dims2().1;
                    let mut gt = vec![0.0; self.value(*table).numel()];
                    for (r, &id) in ids.iter().enumerate() {
                        for (t, v) in gt[id * d..(id + 1) * d].iter_mut().zip(&gd[r * d..(r + 1) * d]) {
                            *t += v;
                        }
                    }
                    acc(*table, like(*table, gt));
                }
            }
            Op::Conv2d { x, w, b, geom } => {
                let (gin, gw, gb) =
                    kernels::conv2d_backward(geom, self.value(*x).data(), self.value(*w).data(), gd);
                acc(*x, like(*x, gin));
                acc(*w, like(*w, gw));
                acc(*b, like(*b, gb));
            }
            Op::ConvTranspose2d { x, w, b, geom } => {
                let (gin, gw, gb) =
                    kernels::conv_transpose2d_backward(geom, self.value(*x).data(), self.value(*w).data(), gd);
                acc(*x, like(*x, gin));
                acc(*w, like(*w, gw));
                acc(*b, like(*b, gb));
            }
            Op::AdaptivePool { x, oh, ow } => {
                let s = self.shape(*x);
                let gin = kernels::adaptive_avg_pool_backward(gd, s[0], s[1], s[2], *oh, *ow);
                acc(*x, like(*x, gin));
            }
            Op::L2Normalize { x, norms } => {
                let y = node.value.data();
                let m = node.value.dims2().1;
                let mut dx = vec![0.0; y.len()];
                for (i, &norm) in norms.iter().enumerate() {
                    if norm == 0.0 {
                        continue;
                    }
                    let (yr, gr) = (&y[i * m..(i + 1) * m], &gd[i * m..(i + 1) * m]);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..m {
                        dx[i * m + j] = (gr[j] - yr[j] * dot) / norm;
                    }
                }
                acc(*x, like(*x, dx));
            }
            Op::GatherRows { x, idx } => {
                let m = self.value(*x).dims2().1;
                let mut gx = vec![0.0; self.value(*x).numel()];
                for (r, &i) in idx.iter().enumerate() {
                    for (t, v) in gx[i * m..(i + 1) * m].iter_mut().zip(&gd[r * m..(r + 1) * m]) {
                        *t += v;
                    }
                }
                acc(*x, like(*x, gx));
            }
            Op::ScatterRows { x, idx } => {
                let m = self.value(*x).dims2().1;
                let mut gx = Vec::with_capacity(idx.len() * m);
                for &i in idx {
                    gx.extend_from_slice(&gd[i * m..(i + 1) * m]);
                }
                acc(*x, like(*x, gx));
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).numel();
                    acc(p, like(p, gd[offset..offset + len].to_vec()));
                    offset += len;
                }
            }
            Op::ConcatCols(parts) => {
                let (n, m) = node.value.dims2();
                let mut col = 0;
                for &p in parts {
                    let pm = self.value(p).dims2().1;
                    let mut gp = Vec::with_capacity(n * pm);
                    for i in 0..n {
                        gp.extend_from_slice(&gd[i * m + col..i * m + col + pm]);
                    }
                    acc(p, like(p, gp));
                    col += pm;
                }
            }
            Op::SliceCols { x, start } => {
                let (n, m) = self.value(*x).dims2();
                let len = node.value.dims2().1;
                let mut gx = vec![0.0; n * m];
                for i in 0..n {
                    gx[i * m + start..i * m + start + len].copy_from_slice(&gd[i * len..(i + 1) * len]);
                }
                acc(*x, like(*x, gx));
            }
            Op::RowMax { x, argmax } => {
                let m = self.value(*x).dims2().1;
                let mut gx = vec![0.0; self.value(*x).numel()];
                for (i, &j) in argmax.iter().enumerate() {
                    gx[i * m + j] = gd[i];
                }
                acc(*x, like(*x, gx));
            }
            Op::Sum(x) => {
                let n = self.value(*x).numel();
                acc(*x, like(*x, vec![gd[0]; n]));
            }
            Op::Mean(x) => {
                let n = self.value(*x).numel();
                acc(*x, like(*x, vec![gd[0] / n as f64; n]));
            }
            Op::CrossEntropy { logits, labels, rows, probs } => {
                let c = self.value(*logits).dims2().1;
                let scale = gd[0] / rows.len() as f64;
                let mut gl = vec![0.0; self.value(*logits).numel()];
                for (r, &i) in rows.iter().enumerate() {
                    for j in 0..c {
                        gl[i * c + j] = probs[r * c + j] * scale;
                    }
                    gl[i * c + labels[i]] -= scale;
                }
                acc(*logits, like(*logits, gl));
            }
            Op::L1Masked { pred, target, mask, count } => {
                let p = self.value(*pred).data();
                let scale = gd[0] / *count as f64;
                let gp = p
                    .iter()
                    .zip(target.data())
                    .zip(mask)
                    .map(|((a, b), &m)| {
                        let d = a - b;
                        if !m || d == 0.0 {
                            0.0
                        } else {
                            d.signum() * scale
                        }
                    })
                    .collect();
                acc(*pred, like(*pred, gp));
            }
        }
    }
}
