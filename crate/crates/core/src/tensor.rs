//! Dense tensors with reverse-mode automatic differentiation.
//!
//! A [`Graph`] owns every tensor produced during one forward pass, in
//! insertion order (which is automatically a topological order, since an
//! operation can only reference tensors that already exist). Each node
//! stores its values, its shape, and the operation that produced it;
//! [`Graph::backward`] walks the nodes once in reverse and accumulates
//! gradients into every `requires_grad` leaf.
//!
//! Storage is row-major `Vec<f64>` with no stride tricks: `reshape` is a
//! relabeling of the same buffer, `permute` materializes a copy.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{dim_err, Error, Result};

/// Handle to a tensor inside a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(pub(crate) usize);

/// One node of the gradient graph.
#[derive(Debug, Clone)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
    op: Op,
}

impl Tensor {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// Batched matrix product; `b` may be 2-D and broadcast over `a`'s batch.
    Matmul { a: TensorId, b: TensorId },
    Add { a: TensorId, b: TensorId },
    Sub { a: TensorId, b: TensorId },
    Mul { a: TensorId, b: TensorId },
    /// `a + b` where `b`'s shape is a trailing suffix of `a`'s shape.
    AddBcast { a: TensorId, b: TensorId },
    Scale { a: TensorId, c: f64 },
    Tanh { a: TensorId },
    Sigmoid { a: TensorId },
    Softmax { a: TensorId, axis: usize },
    Reshape { a: TensorId },
    Permute { a: TensorId, axes: Vec<usize> },
    Concat { parts: Vec<TensorId>, axis: usize },
    Narrow { a: TensorId, axis: usize, start: usize },
    SumAll { a: TensorId },
    MeanAll { a: TensorId },
}

/// Record of one forward pass: tensors in topological order plus the
/// backward rule attached to each.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Tensor>,
}

fn shape_numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn tensor(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0]
    }

    pub fn data(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].data
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    /// Extract the value of a scalar (single-element) tensor.
    pub fn value(&self, id: TensorId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].data.len(), 1);
        self.nodes[id.0].data[0]
    }

    /// Drop accumulated gradients, keeping values and structure.
    pub fn clear_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    pub fn leaf(&mut self, data: Vec<f64>, shape: Vec<usize>, requires_grad: bool) -> Result<TensorId> {
        if shape.contains(&0) {
            return Err(dim_err("leaf", format!("zero extent in shape {shape:?}")));
        }
        if shape_numel(&shape) != data.len() {
            return Err(dim_err(
                "leaf",
                format!("shape {:?} implies {} elements, data has {}", shape, shape_numel(&shape), data.len()),
            ));
        }
        Ok(self.push(data, shape, requires_grad, Op::Leaf))
    }

    /// Untracked constant.
    pub fn constant(&mut self, data: Vec<f64>, shape: Vec<usize>) -> Result<TensorId> {
        self.leaf(data, shape, false)
    }

    fn push(&mut self, data: Vec<f64>, shape: Vec<usize>, requires_grad: bool, op: Op) -> TensorId {
        let id = TensorId(self.nodes.len());
        self.nodes.push(Tensor { shape, data, requires_grad, grad: None, op });
        id
    }

    fn requires(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    // ---- arithmetic ----------------------------------------------------

    fn binary_same_shape(&self, op: &'static str, a: TensorId, b: TensorId) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err(
                op,
                format!("operand shapes differ: {:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_same_shape("add", a, b)?;
        let data: Vec<f64> = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(data, shape, rg, Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_same_shape("sub", a, b)?;
        let data: Vec<f64> = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x - y).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(data, shape, rg, Op::Sub { a, b }))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_same_shape("mul", a, b)?;
        let data: Vec<f64> = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(data, shape, rg, Op::Mul { a, b }))
    }

    /// Broadcast add: `b`'s shape must equal a trailing suffix of `a`'s
    /// shape (a bias over the last axis, a positional table over the last
    /// two, ...).
    pub fn add_bcast(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let ashape = self.shape(a);
        let bshape = self.shape(b);
        if bshape.len() > ashape.len() || &ashape[ashape.len() - bshape.len()..] != bshape {
            return Err(dim_err(
                "add_bcast",
                format!("{bshape:?} is not a trailing suffix of {ashape:?}"),
            ));
        }
        let bn = self.nodes[b.0].numel();
        let data: Vec<f64> = self
            .data(a)
            .iter()
            .enumerate()
            .map(|(i, x)| x + self.data(b)[i % bn])
            .collect();
        let shape = ashape.to_vec();
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(data, shape, rg, Op::AddBcast { a, b }))
    }

    pub fn scale(&mut self, a: TensorId, c: f64) -> Result<TensorId> {
        let data: Vec<f64> = self.data(a).iter().map(|x| x * c).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.requires(a);
        Ok(self.push(data, shape, rg, Op::Scale { a, c }))
    }

    pub fn tanh(&mut self, a: TensorId) -> Result<TensorId> {
        let data: Vec<f64> = self.data(a).iter().map(|&x| libm::tanh(x)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.requires(a);
        Ok(self.push(data, shape, rg, Op::Tanh { a }))
    }

    pub fn sigmoid(&mut self, a: TensorId) -> Result<TensorId> {
        let data: Vec<f64> = self.data(a).iter().map(|&x| 1.0 / (1.0 + libm::exp(-x))).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.requires(a);
        Ok(self.push(data, shape, rg, Op::Sigmoid { a }))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, a: TensorId, axis: usize) -> Result<TensorId> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(dim_err("softmax", format!("axis {axis} out of bounds for shape {shape:?}")));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let src = self.data(a);
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| o * len * inner + k * inner + i;
                let mut max = f64::NEG_INFINITY;
                for k in 0..len {
                    max = max.max(src[at(k)]);
                }
                let mut sum = 0.0;
                for k in 0..len {
                    let e = libm::exp(src[at(k)] - max);
                    out[at(k)] = e;
                    sum += e;
                }
                for k in 0..len {
                    out[at(k)] /= sum;
                }
            }
        }
        let rg = self.requires(a);
        Ok(self.push(out, shape, rg, Op::Softmax { a, axis }))
    }

    // ---- shape ----------------------------------------------------------

    pub fn reshape(&mut self, a: TensorId, shape: Vec<usize>) -> Result<TensorId> {
        let n = self.nodes[a.0].numel();
        if shape_numel(&shape) != n {
            return Err(dim_err(
                "reshape",
                format!("cannot reshape {:?} ({} elements) into {:?} ({} elements)",
                    self.shape(a), n, shape, shape_numel(&shape)),
            ));
        }
        let data = self.data(a).to_vec();
        let rg = self.requires(a);
        Ok(self.push(data, shape, rg, Op::Reshape { a }))
    }

    /// Permute axes: output axis `d` takes input axis `axes[d]`.
    pub fn permute(&mut self, a: TensorId, axes: &[usize]) -> Result<TensorId> {
        let ashape = self.shape(a).to_vec();
        if !is_permutation(axes, ashape.len()) {
            return Err(dim_err(
                "permute",
                format!("{axes:?} is not a permutation of 0..{}", ashape.len()),
            ));
        }
        let (data, shape) = permute_data(self.data(a), &ashape, axes);
        let rg = self.requires(a);
        Ok(self.push(data, shape, rg, Op::Permute { a, axes: axes.to_vec() }))
    }

    /// Swap the last two axes (matrix transpose over the batch prefix).
    pub fn transpose_last(&mut self, a: TensorId) -> Result<TensorId> {
        let nd = self.shape(a).len();
        if nd < 2 {
            return Err(dim_err("transpose", format!("need >= 2 axes, shape is {:?}", self.shape(a))));
        }
        let mut axes: Vec<usize> = (0..nd).collect();
        axes.swap(nd - 2, nd - 1);
        self.permute(a, &axes)
    }

    pub fn concat(&mut self, parts: &[TensorId], axis: usize) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::Contract("concat of zero tensors".into()));
        }
        let first = self.shape(parts[0]).to_vec();
        if axis >= first.len() {
            return Err(dim_err("concat", format!("axis {axis} out of bounds for shape {first:?}")));
        }
        let mut total_axis = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len()
                || s.iter().enumerate().any(|(d, &e)| d != axis && e != first[d])
            {
                return Err(dim_err(
                    "concat",
                    format!("incompatible shapes {:?} vs {:?} along axis {axis}", first, s),
                ));
            }
            total_axis += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = total_axis;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut out = vec![0.0; shape_numel(&shape)];
        for o in 0..outer {
            let mut offset = 0;
            for &p in parts {
                let plen = self.shape(p)[axis];
                let src = self.data(p);
                for k in 0..plen {
                    let dst = (o * total_axis + offset + k) * inner;
                    let s = (o * plen + k) * inner;
                    out[dst..dst + inner].copy_from_slice(&src[s..s + inner]);
                }
                offset += plen;
            }
        }
        let rg = parts.iter().any(|&p| self.requires(p));
        Ok(self.push(out, shape, rg, Op::Concat { parts: parts.to_vec(), axis }))
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&mut self, a: TensorId, axis: usize, start: usize, len: usize) -> Result<TensorId> {
        let ashape = self.shape(a).to_vec();
        if axis >= ashape.len() || start + len > ashape[axis] {
            return Err(dim_err(
                "narrow",
                format!("range {start}..{} out of bounds on axis {axis} of {ashape:?}", start + len),
            ));
        }
        let (outer, alen, inner) = axis_split(&ashape, axis);
        let mut shape = ashape.clone();
        shape[axis] = len;
        let src = self.data(a);
        let mut out = vec![0.0; outer * len * inner];
        for o in 0..outer {
            for k in 0..len {
                let s = (o * alen + start + k) * inner;
                let d = (o * len + k) * inner;
                out[d..d + inner].copy_from_slice(&src[s..s + inner]);
            }
        }
        let rg = self.requires(a);
        Ok(self.push(out, shape, rg, Op::Narrow { a, axis, start }))
    }

    // ---- reductions -----------------------------------------------------

    pub fn sum_all(&mut self, a: TensorId) -> Result<TensorId> {
        let s: f64 = self.data(a).iter().sum();
        let rg = self.requires(a);
        Ok(self.push(vec![s], vec![1], rg, Op::SumAll { a }))
    }

    pub fn mean_all(&mut self, a: TensorId) -> Result<TensorId> {
        let n = self.nodes[a.0].numel() as f64;
        let s: f64 = self.data(a).iter().sum();
        let rg = self.requires(a);
        Ok(self.push(vec![s / n], vec![1], rg, Op::MeanAll { a }))
    }

    // ---- matmul -----------------------------------------------------------

    /// Batched matrix product `a[..., p, q] . b[..., q, r]`.
    ///
    /// Batch prefixes must be equal, or `b` may be a plain matrix that is
    /// broadcast across `a`'s batch.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let ashape = self.shape(a).to_vec();
        let bshape = self.shape(b).to_vec();
        if ashape.len() < 2 || bshape.len() < 2 {
            return Err(dim_err(
                "matmul",
                format!("operands must have >= 2 axes: {ashape:?} vs {bshape:?}"),
            ));
        }
        let (p, q) = (ashape[ashape.len() - 2], ashape[ashape.len() - 1]);
        let (q2, r) = (bshape[bshape.len() - 2], bshape[bshape.len() - 1]);
        if q != q2 {
            return Err(dim_err(
                "matmul",
                format!("inner extents differ: {ashape:?} x {bshape:?}"),
            ));
        }
        let abatch = &ashape[..ashape.len() - 2];
        let bbatch = &bshape[..bshape.len() - 2];
        let b_broadcast = bbatch.is_empty();
        if !b_broadcast && abatch != bbatch {
            return Err(dim_err(
                "matmul",
                format!("batch prefixes not broadcastable: {ashape:?} x {bshape:?}"),
            ));
        }
        let nb = shape_numel(abatch).max(1);
        let adata = self.data(a);
        let bdata = self.data(b);
        let mut out = vec![0.0; nb * p * r];
        for g in 0..nb {
            let ao = g * p * q;
            let bo = if b_broadcast { 0 } else { g * q * r };
            mm_nn(&adata[ao..ao + p * q], &bdata[bo..bo + q * r], &mut out[g * p * r..(g + 1) * p * r], p, q, r);
        }
        let mut shape = abatch.to_vec();
        shape.push(p);
        shape.push(r);
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(out, shape, rg, Op::Matmul { a, b }))
    }

    // ---- backward ---------------------------------------------------------

    /// Reverse-mode sweep from a scalar loss. Populates `grad` on every
    /// tensor on a `requires_grad` path; leaves used several times
    /// accumulate additively.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.nodes[loss.0].numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.nodes[loss.0].requires_grad {
            return Err(Error::Contract("backward on a graph with no requires_grad leaves".into()));
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if self.nodes[i].grad.is_none() || !self.nodes[i].requires_grad {
                continue;
            }
            let grad = self.nodes[i].grad.clone().unwrap();
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {}
                Op::Add { a, b } => {
                    self.accumulate(a, &grad);
                    self.accumulate(b, &grad);
                }
                Op::Sub { a, b } => {
                    self.accumulate(a, &grad);
                    let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
                    self.accumulate(b, &neg);
                }
                Op::Mul { a, b } => {
                    if self.requires(a) {
                        let da: Vec<f64> = grad.iter().zip(self.data(b)).map(|(g, y)| g * y).collect();
                        self.accumulate(a, &da);
                    }
                    if self.requires(b) {
                        let db: Vec<f64> = grad.iter().zip(self.data(a)).map(|(g, x)| g * x).collect();
                        self.accumulate(b, &db);
                    }
                }
                Op::AddBcast { a, b } => {
                    self.accumulate(a, &grad);
                    if self.requires(b) {
                        let bn = self.nodes[b.0].numel();
                        let mut db = vec![0.0; bn];
                        for (i, g) in grad.iter().enumerate() {
                            db[i % bn] += g;
                        }
                        self.accumulate(b, &db);
                    }
                }
                Op::Scale { a, c } => {
                    let da: Vec<f64> = grad.iter().map(|g| g * c).collect();
                    self.accumulate(a, &da);
                }
                Op::Tanh { a } => {
                    let da: Vec<f64> = grad
                        .iter()
                        .zip(&self.nodes[i].data)
                        .map(|(g, &t)| g * (1.0 - t * t))
                        .collect();
                    self.accumulate(a, &da);
                }
                Op::Sigmoid { a } => {
                    let da: Vec<f64> = grad
                        .iter()
                        .zip(&self.nodes[i].data)
                        .map(|(g, &s)| g * s * (1.0 - s))
                        .collect();
                    self.accumulate(a, &da);
                }
                Op::Softmax { a, axis } => {
                    // ds_k = s_k * (g_k - sum_j g_j s_j) per lane.
                    let out = self.nodes[i].data.clone();
                    let shape = self.nodes[i].shape.clone();
                    let (outer, len, inner) = axis_split(&shape, axis);
                    let mut da = vec![0.0; out.len()];
                    for o in 0..outer {
                        for ii in 0..inner {
                            let at = |k: usize| o * len * inner + k * inner + ii;
                            let mut dot = 0.0;
                            for k in 0..len {
                                dot += grad[at(k)] * out[at(k)];
                            }
                            for k in 0..len {
                                da[at(k)] = out[at(k)] * (grad[at(k)] - dot);
                            }
                        }
                    }
                    self.accumulate(a, &da);
                }
                Op::Reshape { a } => {
                    self.accumulate(a, &grad);
                }
                Op::Permute { a, axes } => {
                    let inv = invert_permutation(&axes);
                    let (da, _) = permute_data(&grad, &self.nodes[i].shape.clone(), &inv);
                    self.accumulate(a, &da);
                }
                Op::Concat { parts, axis } => {
                    let shape = self.nodes[i].shape.clone();
                    let (outer, total, inner) = axis_split(&shape, axis);
                    let mut offset = 0;
                    for &p in &parts {
                        let plen = self.shape(p)[axis];
                        if self.requires(p) {
                            let mut dp = vec![0.0; outer * plen * inner];
                            for o in 0..outer {
                                for k in 0..plen {
                                    let s = (o * total + offset + k) * inner;
                                    let d = (o * plen + k) * inner;
                                    dp[d..d + inner].copy_from_slice(&grad[s..s + inner]);
                                }
                            }
                            self.accumulate(p, &dp);
                        }
                        offset += plen;
                    }
                }
                Op::Narrow { a, axis, start } => {
                    let ashape = self.shape(a).to_vec();
                    let (outer, alen, inner) = axis_split(&ashape, axis);
                    let len = self.nodes[i].shape[axis];
                    let mut da = vec![0.0; shape_numel(&ashape)];
                    for o in 0..outer {
                        for k in 0..len {
                            let d = (o * alen + start + k) * inner;
                            let s = (o * len + k) * inner;
                            for j in 0..inner {
                                da[d + j] += grad[s + j];
                            }
                        }
                    }
                    self.accumulate(a, &da);
                }
                Op::SumAll { a } => {
                    let g = grad[0];
                    let da = vec![g; self.nodes[a.0].numel()];
                    self.accumulate(a, &da);
                }
                Op::MeanAll { a } => {
                    let n = self.nodes[a.0].numel();
                    let g = grad[0] / n as f64;
                    let da = vec![g; n];
                    self.accumulate(a, &da);
                }
                Op::Matmul { a, b } => {
                    let ashape = self.shape(a).to_vec();
                    let bshape = self.shape(b).to_vec();
                    let (p, q) = (ashape[ashape.len() - 2], ashape[ashape.len() - 1]);
                    let r = bshape[bshape.len() - 1];
                    let b_broadcast = bshape.len() == 2 && ashape.len() > 2;
                    let nb = shape_numel(&ashape[..ashape.len() - 2]).max(1);
                    if self.requires(a) {
                        // dA = dC . B^T, per batch group.
                        let mut da = vec![0.0; nb * p * q];
                        let bdata = self.data(b);
                        for g in 0..nb {
                            let bo = if b_broadcast || bshape.len() == 2 { 0 } else { g * q * r };
                            mm_nt(
                                &grad[g * p * r..(g + 1) * p * r],
                                &bdata[bo..bo + q * r],
                                &mut da[g * p * q..(g + 1) * p * q],
                                p,
                                r,
                                q,
                            );
                        }
                        self.accumulate(a, &da);
                    }
                    if self.requires(b) {
                        // dB = A^T . dC; summed over the batch when B is broadcast.
                        let adata = self.data(a);
                        if bshape.len() == 2 {
                            let mut db = vec![0.0; q * r];
                            for g in 0..nb {
                                mm_tn(
                                    &adata[g * p * q..(g + 1) * p * q],
                                    &grad[g * p * r..(g + 1) * p * r],
                                    &mut db,
                                    p,
                                    q,
                                    r,
                                );
                            }
                            self.accumulate(b, &db);
                        } else {
                            let mut db = vec![0.0; nb * q * r];
                            for g in 0..nb {
                                mm_tn(
                                    &adata[g * p * q..(g + 1) * p * q],
                                    &grad[g * p * r..(g + 1) * p * r],
                                    &mut db[g * q * r..(g + 1) * q * r],
                                    p,
                                    q,
                                    r,
                                );
                            }
                            self.accumulate(b, &db);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, id: TensorId, contribution: &[f64]) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        let n = self.nodes[id.0].numel();
        debug_assert_eq!(n, contribution.len());
        let grad = self.nodes[id.0].grad.get_or_insert_with(|| vec![0.0; n]);
        for (g, c) in grad.iter_mut().zip(contribution) {
            *g += c;
        }
    }
}

/// (product of extents before `axis`, extent of `axis`, product after).
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn is_permutation(axes: &[usize], n: usize) -> bool {
    if axes.len() != n {
        return false;
    }
    let mut seen = vec![false; n];
    for &a in axes {
        if a >= n || seen[a] {
            return false;
        }
        seen[a] = true;
    }
    true
}

fn invert_permutation(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0usize; axes.len()];
    for (d, &a) in axes.iter().enumerate() {
        inv[a] = d;
    }
    inv
}

/// Materialize `data` (row-major in `shape`) with axes permuted; output axis
/// `d` takes input axis `axes[d]`.
fn permute_data(data: &[f64], shape: &[usize], axes: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let nd = shape.len();
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    // Row-major strides of the input.
    let mut in_strides = vec![1usize; nd];
    for d in (0..nd.saturating_sub(1)).rev() {
        in_strides[d] = in_strides[d + 1] * shape[d + 1];
    }
    let mut out = vec![0.0; data.len()];
    let mut coords = vec![0usize; nd];
    for (flat, slot) in out.iter_mut().enumerate() {
        // Decompose flat output index into output coordinates.
        let mut rem = flat;
        for d in (0..nd).rev() {
            coords[d] = rem % out_shape[d];
            rem /= out_shape[d];
        }
        let mut src = 0;
        for d in 0..nd {
            src += coords[d] * in_strides[axes[d]];
        }
        *slot = data[src];
    }
    (out, out_shape)
}

/// C += A . B with A (m x k), B (k x n).
fn mm_nn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        for l in 0..k {
            let av = a[i * k + l];
            if av == 0.0 {
                continue;
            }
            let brow = &b[l * n..(l + 1) * n];
            let crow = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
}

/// C += A . B^T with A (m x k), B (n x k).
fn mm_nt(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = 0.0;
            for l in 0..k {
                s += arow[l] * brow[l];
            }
            c[i * n + j] += s;
        }
    }
}

/// C += A^T . B with A (m x k), B (m x n), C (k x n).
fn mm_tn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for l in 0..k {
            let av = arow[l];
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[l * n..(l + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
}
