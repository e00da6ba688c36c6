//! Parameter storage and the small set of layers the model is built from.

use alloc::string::String;
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};

use crate::graph::{DropoutKey, Graph, Var};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Layer-norm epsilon (BERT's value).
pub const LN_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    /// Whether decoupled weight decay applies (weights yes; biases and
    /// layer-norm parameters no).
    pub decay: bool,
}

/// Every trainable tensor of a model, in creation order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, decay: bool) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
            decay,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Replaces a value, keeping its shape.
    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let slot = &mut self.params[id.0].value;
        if slot.shape() != value.shape() {
            return Err(Error::shape("set_param", slot.shape(), value.shape()));
        }
        *slot = value;
        Ok(())
    }
}

/// Construction-time state: parameter store, init RNG, dropout site counter.
pub struct Builder {
    pub store: ParamStore,
    rng: Rng,
    next_site: u32,
}

impl Builder {
    pub fn new(seed: u64) -> Self {
        Builder {
            store: ParamStore::new(),
            rng: rng::seeded(seed),
            next_site: 0,
        }
    }

    pub fn normal(&mut self, shape: &[usize], std: f64) -> Tensor {
        let mut t = Tensor::zeros(shape);
        for v in t.data_mut() {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            *v = z * std;
        }
        t
    }

    pub fn site(&mut self) -> u32 {
        self.next_site += 1;
        self.next_site
    }

    pub fn finish(self) -> ParamStore {
        self.store
    }
}

/// Per-forward settings: train/eval mode and the dropout key material.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForwardCtx {
    pub train: bool,
    pub dropout: f64,
    pub seed: u64,
    pub step: u64,
    /// Distinguishes masks of different samples within one step.
    pub slot: u32,
}

impl ForwardCtx {
    pub fn eval() -> Self {
        ForwardCtx {
            train: false,
            dropout: 0.0,
            seed: 0,
            step: 0,
            slot: 0,
        }
    }

    pub fn train(dropout: f64, seed: u64, step: u64) -> Self {
        ForwardCtx {
            train: true,
            dropout,
            seed,
            step,
            slot: 0,
        }
    }

    pub fn with_slot(self, slot: u32) -> Self {
        ForwardCtx { slot, ..self }
    }

    pub fn dropout(&self, g: &mut Graph, x: Var, site: u32) -> Result<Var> {
        g.dropout(
            x,
            self.dropout,
            self.train,
            DropoutKey {
                seed: self.seed,
                site,
                slot: self.slot,
                step: self.step,
            },
        )
    }
}

/// `y = x W + b` with `W` stored `in x out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(b: &mut Builder, name: &str, in_dim: usize, out_dim: usize, bias: bool) -> Self {
        let w = b.normal(&[in_dim, out_dim], 1.0 / libm::sqrt(in_dim as f64));
        let weight = b.store.add(alloc::format!("{name}.weight"), w, true);
        let bias = bias.then(|| {
            b.store
                .add(alloc::format!("{name}.bias"), Tensor::zeros(&[1, out_dim]), false)
        });
        Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let y = g.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = g.param(store, b);
                g.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(b: &mut Builder, name: &str, width: usize) -> Self {
        let gain = b
            .store
            .add(alloc::format!("{name}.gain"), Tensor::filled(&[1, width], 1.0), false);
        let bias = b
            .store
            .add(alloc::format!("{name}.bias"), Tensor::zeros(&[1, width]), false);
        LayerNorm { gain, bias }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let n = g.layer_norm_rows(x, LN_EPS)?;
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        let y = g.mul_row(n, gain)?;
        g.add_row(y, bias)
    }
}

/// Position-wise `Linear -> GELU -> Linear`.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new(b: &mut Builder, name: &str, width: usize, hidden: usize) -> Self {
        FeedForward {
            up: Linear::new(b, &alloc::format!("{name}.up"), width, hidden, true),
            down: Linear::new(b, &alloc::format!("{name}.down"), hidden, width, true),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.up.forward(g, store, x)?;
        let h = g.gelu(h);
        self.down.forward(g, store, h)
    }
}

/// Attention weights and output of one scaled dot-product attention.
#[derive(Clone, Copy, Debug)]
pub struct Attended {
    pub output: Var,
    pub weights: Var,
}

/// Single-head pre-norm transformer block. Queries come from one sequence,
/// keys and values from another (or the same one for self-attention).
#[derive(Clone, Debug)]
pub struct AttentionBlock {
    pub width: usize,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub norm_q: LayerNorm,
    /// `None` for self-attention: keys/values reuse the normalized queries.
    pub norm_kv: Option<LayerNorm>,
    pub norm_ff: LayerNorm,
    pub ffn: FeedForward,
    drop_attn: u32,
    drop_ffn: u32,
}

impl AttentionBlock {
    pub fn new(b: &mut Builder, name: &str, width: usize, ffn_hidden: usize, cross: bool) -> Self {
        AttentionBlock {
            width,
            query: Linear::new(b, &alloc::format!("{name}.query"), width, width, true),
            key: Linear::new(b, &alloc::format!("{name}.key"), width, width, true),
            value: Linear::new(b, &alloc::format!("{name}.value"), width, width, true),
            norm_q: LayerNorm::new(b, &alloc::format!("{name}.norm_q"), width),
            norm_kv: cross.then(|| LayerNorm::new(b, &alloc::format!("{name}.norm_kv"), width)),
            norm_ff: LayerNorm::new(b, &alloc::format!("{name}.norm_ff"), width),
            ffn: FeedForward::new(b, &alloc::format!("{name}.ffn"), width, ffn_hidden),
            drop_attn: b.site(),
            drop_ffn: b.site(),
        }
    }

    /// `softmax(Q K^T * (1 + sc) / sqrt(d)) V` on already-normalized inputs.
    ///
    /// `sc`, when given, is an `n x m` matrix of multiplicative logit weights;
    /// `kv_mask` hides key positions.
    pub fn attention(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        q_src: Var,
        kv_src: Var,
        kv_mask: Option<&[bool]>,
        sc: Option<&Tensor>,
    ) -> Result<Attended> {
        let qw = g.value(q_src).cols();
        let kw = g.value(kv_src).cols();
        if qw != self.width || kw != self.width {
            return Err(Error::shape(
                "attention",
                g.value(q_src).shape(),
                g.value(kv_src).shape(),
            ));
        }
        let q = self.query.forward(g, store, q_src)?;
        let k = self.key.forward(g, store, kv_src)?;
        let v = self.value.forward(g, store, kv_src)?;
        let mut scores = g.matmul_t(q, k)?;
        if let Some(sc) = sc {
            if sc.shape() != g.value(scores).shape() {
                return Err(Error::shape("sentiment weights", g.value(scores).shape(), sc.shape()));
            }
            let factor = g.constant(sc.map(|s| 1.0 + s));
            scores = g.mul(scores, factor)?;
        }
        let scores = g.scale(scores, 1.0 / libm::sqrt(self.width as f64));
        let weights = g.softmax_rows_masked(scores, kv_mask)?;
        let output = g.matmul(weights, v)?;
        Ok(Attended { output, weights })
    }

    /// Full block: `x = q + Attn(LN(q), LN(kv))`, then `x = x + FFN(LN(x))`.
    /// `kv_src = None` means self-attention over `q_src`.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        q_src: Var,
        kv_src: Option<Var>,
        kv_mask: Option<&[bool]>,
        sc: Option<&Tensor>,
        ctx: &ForwardCtx,
    ) -> Result<Var> {
        let qn = self.norm_q.forward(g, store, q_src)?;
        let kvn = match (kv_src, &self.norm_kv) {
            (None, _) => qn,
            (Some(kv), Some(norm)) => norm.forward(g, store, kv)?,
            (Some(kv), None) => self.norm_q.forward(g, store, kv)?,
        };
        let att = self.attention(g, store, qn, kvn, kv_mask, sc)?;
        let att = ctx.dropout(g, att.output, self.drop_attn)?;
        let x = g.add(q_src, att)?;
        let h = self.norm_ff.forward(g, store, x)?;
        let h = self.ffn.forward(g, store, h)?;
        let h = ctx.dropout(g, h, self.drop_ffn)?;
        g.add(x, h)
    }
}
