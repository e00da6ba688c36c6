//! Reverse-mode automatic differentiation over a tape of matrix operations.
//!
//! A [`Graph`] records every operation in creation order, which is already a
//! topological order, so [`Graph::backward`] is a single reverse sweep.
//! Nodes are addressed by copyable [`Var`] handles.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::kernels::gemm;
use crate::nn::{ParamId, ParamStore};
use crate::rng;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Addresses one dropout mask: the same key always yields the same mask.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DropoutKey {
    pub seed: u64,
    pub site: u32,
    pub slot: u32,
    pub step: u64,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Transpose(Var),
    Reshape(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Gelu(Var),
    Softmax(Var),
    LayerNorm { x: Var, inv_std: Vec<f64> },
    Sum(Var),
    Mean(Var),
    WeightedRowSum { x: Var, weights: Vec<f64> },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    NormalizeRows { x: Var, norms: Vec<f64> },
    Dropout { x: Var, mask: Vec<f64> },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
    GatherRows { table: Var, ids: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A tape of tensor operations.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<ParamId, Var>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.needs(v)
    }

    fn dims(&self, v: Var) -> Result<(usize, usize)> {
        self.value(v).dims2()
    }

    /// Differentiable leaf.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf holding a copy of parameter `id`. Repeated calls return the same
    /// node so all uses accumulate into one gradient.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.input(store.value(id).clone());
        self.params.insert(id, v);
        v
    }

    /// Stop-gradient: same value, no gradient flows back through it.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    /// `op(a) * op(b)` where `op` optionally transposes.
    pub fn matmul_ex(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var> {
        let (ar, ac) = self.dims(a)?;
        let (br, bc) = self.dims(b)?;
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                self.value(a).shape(),
                self.value(b).shape(),
            ));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            ta,
            self.value(b).data(),
            tb,
            &mut out,
            false,
        );
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(
            Tensor::matrix(m, n, out)?,
            Op::MatMul { a, b, ta, tb },
            rg,
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_ex(a, false, b, false)
    }

    /// `a * b^T`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_ex(a, false, b, true)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).transpose()?;
        let rg = self.needs(a);
        Ok(self.push(t, Op::Transpose(a), rg))
    }

    fn zip(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(op, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip("add", a, b, |x, y| x + y)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip("sub", a, b, |x, y| x - y)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip("mul", a, b, |x, y| x * y)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    fn row_broadcast(
        &mut self,
        op: &'static str,
        a: Var,
        row: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (r, c) = self.dims(a)?;
        let (rr, rc) = self.dims(row)?;
        if rr != 1 || rc != c {
            return Err(Error::shape(op, self.value(a).shape(), self.value(row).shape()));
        }
        let rv = self.value(row).data();
        let av = self.value(a).data();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            out.extend(av[i * c..(i + 1) * c].iter().zip(rv).map(|(&x, &y)| f(x, y)));
        }
        Tensor::matrix(r, c, out)
    }

    /// Adds a `1 x c` row to every row of `a` (bias addition).
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let t = self.row_broadcast("add_row", a, row, |x, y| x + y)?;
        let rg = self.needs(a) || self.needs(row);
        Ok(self.push(t, Op::AddRow(a, row), rg))
    }

    /// Multiplies every row of `a` elementwise by a `1 x c` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let t = self.row_broadcast("mul_row", a, row, |x, y| x * y)?;
        let rg = self.needs(a) || self.needs(row);
        Ok(self.push(t, Op::MulRow(a, row), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a).map(|x| x * s);
        let rg = self.needs(a);
        self.push(t, Op::Scale(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a).map(|x| x + s);
        let rg = self.needs(a);
        self.push(t, Op::AddScalar(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a).map(libm::tanh);
        let rg = self.needs(a);
        self.push(t, Op::Tanh(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let t = self.value(a).map(libm::exp);
        let rg = self.needs(a);
        self.push(t, Op::Exp(a), rg)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|&x| x <= 0.0 || x.is_nan()) {
            return Err(Error::Domain("log of a non-positive value".into()));
        }
        let t = self.value(a).map(libm::log);
        let rg = self.needs(a);
        Ok(self.push(t, Op::Log(a), rg))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let t = self
            .value(a)
            .map(|x| 0.5 * x * (1.0 + libm::tanh(GELU_C * (x + GELU_A * x * x * x))));
        let rg = self.needs(a);
        self.push(t, Op::Gelu(a), rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        self.softmax_rows_masked(a, None)
    }

    /// Row softmax, stabilized by subtracting the row maximum. Columns whose
    /// `mask` entry is `false` get probability exactly zero.
    pub fn softmax_rows_masked(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let (r, c) = self.dims(a)?;
        if let Some(m) = mask {
            if m.len() != c {
                return Err(Error::shape("softmax_rows", &[r, c], &[m.len()]));
            }
            if !m.iter().any(|&k| k) {
                return Err(Error::Domain("softmax over a fully masked row".into()));
            }
        }
        let keep = |j: usize| mask.is_none_or(|m| m[j]);
        let src = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let max = (0..c)
                .filter(|&j| keep(j))
                .map(|j| row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            let dst = &mut out[i * c..(i + 1) * c];
            let mut total = 0.0;
            for j in 0..c {
                if keep(j) {
                    dst[j] = libm::exp(row[j] - max);
                    total += dst[j];
                }
            }
            for v in dst.iter_mut() {
                *v /= total;
            }
        }
        let rg = self.needs(a);
        Ok(self.push(Tensor::matrix(r, c, out)?, Op::Softmax(a), rg))
    }

    /// Per-row standardization `(x - mean) / sqrt(var + eps)`, no affine part.
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Result<Var> {
        let (r, c) = self.dims(a)?;
        let src = self.value(a).data();
        let mut out = vec![0.0; r * c];
        let mut inv_std = Vec::with_capacity(r);
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / libm::sqrt(var + eps);
            for (o, x) in out[i * c..(i + 1) * c].iter_mut().zip(row) {
                *o = (x - mean) * inv;
            }
            inv_std.push(inv);
        }
        let rg = self.needs(a);
        Ok(self.push(Tensor::matrix(r, c, out)?, Op::LayerNorm { x: a, inv_std }, rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.needs(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        let rg = self.needs(a);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Mean over the rows whose `mask` entry is `true` (all rows when `None`),
    /// giving a `1 x c` row.
    pub fn masked_mean_rows(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let (r, c) = self.dims(a)?;
        let weights = match mask {
            None => vec![1.0 / r as f64; r],
            Some(m) => {
                if m.len() != r {
                    return Err(Error::shape("masked_mean_rows", &[r, c], &[m.len()]));
                }
                let count = m.iter().filter(|&&k| k).count();
                if count == 0 {
                    return Err(Error::Domain("mean over a fully masked input".into()));
                }
                m.iter()
                    .map(|&k| if k { 1.0 / count as f64 } else { 0.0 })
                    .collect()
            }
        };
        let src = self.value(a).data();
        let mut out = vec![0.0; c];
        for (i, &w) in weights.iter().enumerate() {
            if w != 0.0 {
                for (o, x) in out.iter_mut().zip(&src[i * c..(i + 1) * c]) {
                    *o += w * x;
                }
            }
        }
        let rg = self.needs(a);
        Ok(self.push(Tensor::row(out), Op::WeightedRowSum { x: a, weights }, rg))
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidShape("concat of nothing".into()))?;
        let (r, _) = self.dims(first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.dims(p)?;
            if pr != r {
                return Err(Error::shape("concat_cols", self.value(first).shape(), self.value(p).shape()));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let rg = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Tensor::matrix(r, total, out)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Vertical concatenation of matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidShape("concat of nothing".into()))?;
        let (_, c) = self.dims(first)?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (pr, pc) = self.dims(p)?;
            if pc != c {
                return Err(Error::shape("concat_rows", self.value(first).shape(), self.value(p).shape()));
            }
            rows += pr;
            out.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Tensor::matrix(rows, c, out)?, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Scales every row to unit Euclidean norm.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a)?;
        let src = self.value(a).data();
        let mut out = vec![0.0; r * c];
        let mut norms = Vec::with_capacity(r);
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let norm = libm::sqrt(row.iter().map(|x| x * x).sum::<f64>());
            if norm == 0.0 || !norm.is_finite() {
                return Err(Error::Domain(format!("row {i} has zero or non-finite norm")));
            }
            for (o, x) in out[i * c..(i + 1) * c].iter_mut().zip(row) {
                *o = x / norm;
            }
            norms.push(norm);
        }
        let rg = self.needs(a);
        Ok(self.push(Tensor::matrix(r, c, out)?, Op::NormalizeRows { x: a, norms }, rg))
    }

    /// Cosine similarity of two equally sized tensors, read as flat vectors.
    pub fn cosine_similarity(&mut self, u: Var, v: Var) -> Result<Var> {
        let (nu, nv) = (self.value(u).numel(), self.value(v).numel());
        if nu != nv {
            return Err(Error::shape("cosine_similarity", self.value(u).shape(), self.value(v).shape()));
        }
        let u = self.as_row(u)?;
        let v = self.as_row(v)?;
        let un = self.normalize_rows(u)?;
        let vn = self.normalize_rows(v)?;
        let p = self.mul(un, vn)?;
        Ok(self.sum(p))
    }

    /// Flattens to a `1 x n` row (no-op for rows).
    fn as_row(&mut self, a: Var) -> Result<Var> {
        if self.dims(a).map(|(r, _)| r == 1).unwrap_or(false) {
            return Ok(a);
        }
        let n = self.value(a).numel();
        self.reshape(a, vec![1, n])
    }

    /// Same data under a new shape with the same element count.
    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        let rg = self.needs(a);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    /// Inverted dropout. Identity when `train` is false or `rate` is zero.
    /// The mask is a pure function of `key`.
    pub fn dropout(&mut self, a: Var, rate: f64, train: bool, key: DropoutKey) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Parameter(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !train || rate == 0.0 {
            return Ok(a);
        }
        let mut rng = rng::stream(key.seed, ((key.site as u64) << 32) | key.slot as u64, key.step);
        let keep = 1.0 / (1.0 - rate);
        let t = self.value(a);
        let mask: Vec<f64> = (0..t.numel())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let data = t.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let out = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.needs(a);
        Ok(self.push(out, Op::Dropout { x: a, mask }, rg))
    }

    /// Mean softmax cross-entropy of `B x C` logits against `B` labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(logits)?;
        if labels.len() != r {
            return Err(Error::shape("cross_entropy", &[r, c], &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::LabelRange { label: bad, classes: c });
        }
        let src = self.value(logits).data();
        let mut probs = vec![0.0; r * c];
        let mut loss = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            let row = &src[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = row.iter().map(|x| libm::exp(x - max)).sum();
            let lse = max + libm::log(total);
            for j in 0..c {
                probs[i * c + j] = libm::exp(row[j] - lse);
            }
            loss += lse - row[label];
        }
        let rg = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss / r as f64),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Rows `ids` of `table` (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(table)?;
        if ids.is_empty() {
            return Err(Error::InvalidShape("gather of no rows".into()));
        }
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            if id >= r {
                return Err(Error::shape("gather_rows", &[r, c], &[id]));
            }
            out.extend_from_slice(&src[id * c..(id + 1) * c]);
        }
        let rg = self.needs(table);
        Ok(self.push(
            Tensor::matrix(ids.len(), c, out)?,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::InvalidShape(format!(
                "backward needs a scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let end = loss.0 + 1;
        let mut grads: Vec<Option<Tensor>> = (0..end).map(|_| None).collect();
        if self.needs(loss) {
            grads[loss.0] = Some(Tensor::new(self.value(loss).shape().to_vec(), vec![1.0])?);
        }
        for i in (0..end).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let (lower, upper) = grads.split_at_mut(i);
            if let Some(dy) = upper[0].as_ref() {
                self.propagate(i, dy, lower);
            }
        }
        for (i, g) in grads.iter_mut().enumerate() {
            if g.is_none() && self.nodes[i].requires_grad {
                *g = Some(Tensor::zeros(self.nodes[i].value.shape()));
            }
        }
        let params = self
            .params
            .iter()
            .filter(|(_, v)| v.0 < end)
            .map(|(&id, &v)| (id, v))
            .collect();
        Ok(Gradients { grads, params })
    }

    fn propagate(&self, i: usize, dy: &Tensor, lower: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        let g = dy.data();
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, ta, tb } => {
                let av = self.value(a);
                let bv = self.value(b);
                let (m, n) = (node.value.rows(), node.value.cols());
                let (ar, ac) = (av.rows(), av.cols());
                let k = if ta { ar } else { ac };
                if self.needs(a) {
                    let da = accum(lower, a, av.shape());
                    if ta {
                        gemm(k, n, m, bv.data(), tb, g, true, da, true);
                    } else {
                        gemm(m, n, k, g, false, bv.data(), !tb, da, true);
                    }
                }
                if self.needs(b) {
                    let db = accum(lower, b, bv.shape());
                    if tb {
                        gemm(n, m, k, g, true, av.data(), ta, db, true);
                    } else {
                        gemm(k, m, n, av.data(), !ta, g, false, db, true);
                    }
                }
            }
            &Op::Transpose(a) => {
                if self.needs(a) {
                    let (r, c) = (node.value.rows(), node.value.cols());
                    let da = accum(lower, a, self.value(a).shape());
                    for p in 0..r {
                        for q in 0..c {
                            da[q * r + p] += g[p * c + q];
                        }
                    }
                }
            }
            &Op::Reshape(a) => {
                if self.needs(a) {
                    add_into(accum(lower, a, self.value(a).shape()), g);
                }
            }
            &Op::Add(a, b) => {
                for v in [a, b] {
                    if self.needs(v) {
                        add_into(accum(lower, v, node.value.shape()), g);
                    }
                }
            }
            &Op::Sub(a, b) => {
                if self.needs(a) {
                    add_into(accum(lower, a, node.value.shape()), g);
                }
                if self.needs(b) {
                    for (d, x) in accum(lower, b, node.value.shape()).iter_mut().zip(g) {
                        *d -= x;
                    }
                }
            }
            &Op::Mul(a, b) => {
                for (v, other) in [(a, b), (b, a)] {
                    if self.needs(v) {
                        let o = self.value(other).data();
                        for ((d, x), w) in accum(lower, v, node.value.shape()).iter_mut().zip(g).zip(o) {
                            *d += x * w;
                        }
                    }
                }
            }
            &Op::AddRow(a, row) => {
                let c = node.value.cols();
                if self.needs(a) {
                    add_into(accum(lower, a, node.value.shape()), g);
                }
                if self.needs(row) {
                    let dr = accum(lower, row, self.value(row).shape());
                    for chunk in g.chunks(c) {
                        add_into(dr, chunk);
                    }
                }
            }
            &Op::MulRow(a, row) => {
                let c = node.value.cols();
                let rv = self.value(row).data();
                if self.needs(a) {
                    let da = accum(lower, a, node.value.shape());
                    for (dchunk, gchunk) in da.chunks_mut(c).zip(g.chunks(c)) {
                        for ((d, x), w) in dchunk.iter_mut().zip(gchunk).zip(rv) {
                            *d += x * w;
                        }
                    }
                }
                if self.needs(row) {
                    let av = self.value(a).data();
                    let dr = accum(lower, row, self.value(row).shape());
                    for (gchunk, achunk) in g.chunks(c).zip(av.chunks(c)) {
                        for ((d, x), w) in dr.iter_mut().zip(gchunk).zip(achunk) {
                            *d += x * w;
                        }
                    }
                }
            }
            &Op::Scale(a, s) => {
                if self.needs(a) {
                    for (d, x) in accum(lower, a, node.value.shape()).iter_mut().zip(g) {
                        *d += s * x;
                    }
                }
            }
            &Op::AddScalar(a) => {
                if self.needs(a) {
                    add_into(accum(lower, a, node.value.shape()), g);
                }
            }
            &Op::Tanh(a) => {
                if self.needs(a) {
                    for ((d, x), t) in accum(lower, a, node.value.shape()).iter_mut().zip(g).zip(y) {
                        *d += x * (1.0 - t * t);
                    }
                }
            }
            &Op::Exp(a) => {
                if self.needs(a) {
                    for ((d, x), e) in accum(lower, a, node.value.shape()).iter_mut().zip(g).zip(y) {
                        *d += x * e;
                    }
                }
            }
            &Op::Log(a) => {
                if self.needs(a) {
                    let xv = self.value(a).data();
                    for ((d, x), v) in accum(lower, a, node.value.shape()).iter_mut().zip(g).zip(xv) {
                        *d += x / v;
                    }
                }
            }
            &Op::Gelu(a) => {
                if self.needs(a) {
                    let xv = self.value(a).data();
                    for ((d, gi), &x) in accum(lower, a, node.value.shape()).iter_mut().zip(g).zip(xv) {
                        let t = libm::tanh(GELU_C * (x + GELU_A * x * x * x));
                        let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                        *d += gi * (0.5 * (1.0 + t) + 0.5 * x * dt);
                    }
                }
            }
            &Op::Softmax(a) => {
                if self.needs(a) {
                    let c = node.value.cols();
                    let da = accum(lower, a, node.value.shape());
                    for ((dchunk, gchunk), ychunk) in da.chunks_mut(c).zip(g.chunks(c)).zip(y.chunks(c)) {
                        let dot: f64 = gchunk.iter().zip(ychunk).map(|(a, b)| a * b).sum();
                        for ((d, gi), yi) in dchunk.iter_mut().zip(gchunk).zip(ychunk) {
                            *d += yi * (gi - dot);
                        }
                    }
                }
            }
            Op::LayerNorm { x, inv_std } => {
                if self.needs(*x) {
                    let c = node.value.cols();
                    let dx = accum(lower, *x, node.value.shape());
                    for (((dchunk, gchunk), ychunk), inv) in
                        dx.chunks_mut(c).zip(g.chunks(c)).zip(y.chunks(c)).zip(inv_std)
                    {
                        let mg = gchunk.iter().sum::<f64>() / c as f64;
                        let mgy = gchunk.iter().zip(ychunk).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                        for ((d, gi), yi) in dchunk.iter_mut().zip(gchunk).zip(ychunk) {
                            *d += inv * (gi - mg - yi * mgy);
                        }
                    }
                }
            }
            &Op::Sum(a) => {
                if self.needs(a) {
                    let s = g[0];
                    for d in accum(lower, a, self.value(a).shape()).iter_mut() {
                        *d += s;
                    }
                }
            }
            &Op::Mean(a) => {
                if self.needs(a) {
                    let n = self.value(a).numel() as f64;
                    let s = g[0] / n;
                    for d in accum(lower, a, self.value(a).shape()).iter_mut() {
                        *d += s;
                    }
                }
            }
            Op::WeightedRowSum { x, weights } => {
                if self.needs(*x) {
                    let c = node.value.cols();
                    let dx = accum(lower, *x, self.value(*x).shape());
                    for (dchunk, &w) in dx.chunks_mut(c).zip(weights) {
                        if w != 0.0 {
                            for (d, gi) in dchunk.iter_mut().zip(g) {
                                *d += w * gi;
                            }
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.needs(p) {
                        let dp = accum(lower, p, self.value(p).shape());
                        for (dchunk, gchunk) in dp.chunks_mut(w).zip(g.chunks(total)) {
                            add_into(dchunk, &gchunk[offset..offset + w]);
                        }
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    if self.needs(p) {
                        add_into(accum(lower, p, self.value(p).shape()), &g[offset..offset + n]);
                    }
                    offset += n;
                }
            }
            Op::NormalizeRows { x, norms } => {
                if self.needs(*x) {
                    let c = node.value.cols();
                    let dx = accum(lower, *x, node.value.shape());
                    for (((dchunk, gchunk), ychunk), norm) in
                        dx.chunks_mut(c).zip(g.chunks(c)).zip(y.chunks(c)).zip(norms)
                    {
                        let dot: f64 = gchunk.iter().zip(ychunk).map(|(a, b)| a * b).sum();
                        for ((d, gi), yi) in dchunk.iter_mut().zip(gchunk).zip(ychunk) {
                            *d += (gi - yi * dot) / norm;
                        }
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if self.needs(*x) {
                    for ((d, gi), m) in accum(lower, *x, node.value.shape()).iter_mut().zip(g).zip(mask) {
                        *d += gi * m;
                    }
                }
            }
            Op::CrossEntropy { logits, labels, probs } => {
                if self.needs(*logits) {
                    let shape = self.value(*logits).shape();
                    let c = self.value(*logits).cols();
                    let scale = g[0] / labels.len() as f64;
                    let dl = accum(lower, *logits, shape);
                    for (i, &label) in labels.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == label { 1.0 } else { 0.0 };
                            dl[i * c + j] += scale * (probs[i * c + j] - onehot);
                        }
                    }
                }
            }
            Op::GatherRows { table, ids } => {
                if self.needs(*table) {
                    let c = node.value.cols();
                    let dt = accum(lower, *table, self.value(*table).shape());
                    for (k, &id) in ids.iter().enumerate() {
                        add_into(&mut dt[id * c..(id + 1) * c], &g[k * c..(k + 1) * c]);
                    }
                }
            }
        }
    }
}

fn accum<'a>(lower: &'a mut [Option<Tensor>], v: Var, shape: &[usize]) -> &'a mut [f64] {
    lower[v.0]
        .get_or_insert_with(|| Tensor::zeros(shape))
        .data_mut()
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Result of [`Graph::backward`].
#[derive(Debug, Default)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; `None` when `v` does not
    /// require a gradient or was created after the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for a parameter leaf created with [`Graph::param`].
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|&(_, v)| self.get(v))
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> + '_ {
        self.params
            .iter()
            .filter_map(|&(id, v)| self.get(v).map(|g| (id, g)))
    }
}
