//! Cross-modal aggregation heads.
//!
//! Features arrive row-per-position: text `n x d_C`, image `m x d_C` and,
//! for the knowledge stack, auxiliary text `a x d_C`. Every head returns a
//! single `1 x w` row whose width depends only on the configuration.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::graph::{Graph, Var};
use crate::nn::{AttentionBlock, Builder, ForwardCtx, ParamId, ParamStore};
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FusionVariant {
    Concat,
    CoAttention,
    CrossAttention,
    KnowledgeCrossAttention,
}

impl FusionVariant {
    pub const ALL: [FusionVariant; 4] = [
        FusionVariant::Concat,
        FusionVariant::CoAttention,
        FusionVariant::CrossAttention,
        FusionVariant::KnowledgeCrossAttention,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FusionVariant::Concat => "concat",
            FusionVariant::CoAttention => "co_attention",
            FusionVariant::CrossAttention => "cross_attention",
            FusionVariant::KnowledgeCrossAttention => "knowledge_cross_attention",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FusionConfig {
    pub variant: FusionVariant,
    pub layers: usize,
    /// Feature width `d_C`; also the co-attention joint width `k`.
    pub width: usize,
    pub ffn_hidden: usize,
}

impl FusionConfig {
    pub fn new(variant: FusionVariant, width: usize) -> Self {
        FusionConfig {
            variant,
            layers: 3,
            width,
            ffn_hidden: 2 * width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::Config("fusion needs at least one layer".into()));
        }
        if self.width == 0 {
            return Err(Error::Config("fusion width must be positive".into()));
        }
        if self.variant == FusionVariant::KnowledgeCrossAttention && self.layers != 3 {
            return Err(Error::Config(format!(
                "the knowledge stack has exactly 3 layers, got {}",
                self.layers
            )));
        }
        Ok(())
    }

    pub fn output_width(&self) -> usize {
        match self.variant {
            FusionVariant::Concat | FusionVariant::CoAttention => 2 * self.width,
            _ => self.width,
        }
    }
}

/// Token sentiment scores in `[-1, 1]`; unknown tokens score 0.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SentimentLexicon {
    entries: BTreeMap<String, f64>,
}

impl SentimentLexicon {
    pub fn new<I, S>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        let mut map = BTreeMap::new();
        for (token, value) in entries {
            let token = token.into();
            if !(-1.0..=1.0).contains(&value) {
                return Err(Error::Parameter(format!(
                    "sentiment of {token:?} is {value}, outside [-1, 1]"
                )));
            }
            map.insert(token, value);
        }
        Ok(SentimentLexicon { entries: map })
    }

    pub fn get(&self, token: &str) -> f64 {
        self.entries.get(token).copied().unwrap_or(0.0)
    }

    /// Scores for token ids, looked up by their decimal spelling.
    pub fn score_ids(&self, ids: &[u32]) -> Vec<f64> {
        ids.iter().map(|id| self.get(&id.to_string())).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.entries.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Sentiment discrepancy `|s_x - s_y| * exp(-s_x * s_y)`.
pub fn sc(sx: f64, sy: f64) -> f64 {
    (sx - sy).abs() * libm::exp(-sx * sy)
}

/// `n x m` matrix of [`sc`] between query and key scores.
pub fn sc_matrix(query: &[f64], key: &[f64]) -> Result<Tensor> {
    let data = query
        .iter()
        .flat_map(|&q| key.iter().map(move |&k| sc(q, k)))
        .collect();
    Tensor::matrix(query.len(), key.len(), data)
}

/// One cross-attention transformer layer: text queries, image keys/values.
pub fn cross_attention(
    block: &AttentionBlock,
    g: &mut Graph,
    store: &ParamStore,
    q_src: Var,
    kv_src: Var,
    kv_mask: Option<&[bool]>,
    ctx: &ForwardCtx,
) -> Result<Var> {
    block.forward(g, store, q_src, Some(kv_src), kv_mask, None, ctx)
}

/// Attention with logits weighted by `1 + SC` between the query and key
/// tokens. Token lists must align with the rows of the two sources.
#[allow(clippy::too_many_arguments)]
pub fn sentiment_attention(
    block: &AttentionBlock,
    g: &mut Graph,
    store: &ParamStore,
    q_src: Var,
    kv_src: Option<Var>,
    q_tokens: &[u32],
    kv_tokens: &[u32],
    kv_mask: Option<&[bool]>,
    lexicon: &SentimentLexicon,
    ctx: &ForwardCtx,
) -> Result<Var> {
    let n = g.value(q_src).rows();
    let m = kv_src.map_or(n, |kv| g.value(kv).rows());
    if q_tokens.len() != n || kv_tokens.len() != m {
        return Err(Error::shape(
            "sentiment_attention tokens",
            &[n, m],
            &[q_tokens.len(), kv_tokens.len()],
        ));
    }
    let weights = sc_matrix(&lexicon.score_ids(q_tokens), &lexicon.score_ids(kv_tokens))?;
    block.forward(g, store, q_src, kv_src, kv_mask, Some(&weights), ctx)
}

/// Inputs to a fusion head for one sample.
#[derive(Clone, Copy, Debug)]
pub struct FusionInput<'a> {
    pub text: Var,
    pub text_mask: Option<&'a [bool]>,
    pub text_tokens: &'a [u32],
    pub image: Var,
    pub aux: Option<Var>,
    pub aux_mask: Option<&'a [bool]>,
    pub aux_tokens: Option<&'a [u32]>,
}

#[derive(Clone, Debug)]
enum Head {
    Concat,
    CoAttention { affinity: ParamId, text: ParamId, image: ParamId },
    CrossStack(Vec<AttentionBlock>),
    Knowledge { blocks: Vec<AttentionBlock>, lexicon: Option<SentimentLexicon> },
}

#[derive(Clone, Debug)]
pub struct Fusion {
    pub config: FusionConfig,
    head: Head,
}

impl Fusion {
    /// `lexicon` is only consulted by the knowledge stack; `None` there gives
    /// the same three layers with plain attention throughout.
    pub fn new(b: &mut Builder, config: FusionConfig, lexicon: Option<SentimentLexicon>) -> Result<Self> {
        config.validate()?;
        let w = config.width;
        let blocks = |b: &mut Builder| -> Vec<AttentionBlock> {
            (0..config.layers)
                .map(|l| AttentionBlock::new(b, &format!("fusion.layer{l}"), w, config.ffn_hidden, true))
                .collect()
        };
        let head = match config.variant {
            FusionVariant::Concat => Head::Concat,
            FusionVariant::CoAttention => {
                let std = 1.0 / libm::sqrt(w as f64);
                let a = b.normal(&[w, w], std);
                let t = b.normal(&[w, w], std);
                let i = b.normal(&[w, w], std);
                Head::CoAttention {
                    affinity: b.store.add("fusion.affinity", a, true),
                    text: b.store.add("fusion.text", t, true),
                    image: b.store.add("fusion.image", i, true),
                }
            }
            FusionVariant::CrossAttention => Head::CrossStack(blocks(b)),
            FusionVariant::KnowledgeCrossAttention => Head::Knowledge {
                blocks: blocks(b),
                lexicon,
            },
        };
        Ok(Fusion { config, head })
    }

    pub fn output_width(&self) -> usize {
        self.config.output_width()
    }

    pub fn needs_aux(&self) -> bool {
        matches!(self.head, Head::Knowledge { .. })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        input: &FusionInput<'_>,
        ctx: &ForwardCtx,
    ) -> Result<Var> {
        let w = self.config.width;
        for v in [Some(input.text), Some(input.image), input.aux].into_iter().flatten() {
            if g.value(v).cols() != w {
                return Err(Error::shape("fusion input", &[w], g.value(v).shape()));
            }
        }
        match &self.head {
            Head::Concat => fuse_concat(g, input.text, input.text_mask, input.image),
            Head::CoAttention {
                affinity,
                text,
                image,
            } => {
                let wc = g.param(store, *affinity);
                let wt = g.param(store, *text);
                let wi = g.param(store, *image);
                fuse_co_attention(g, input.text, input.text_mask, input.image, wc, wt, wi)
            }
            Head::CrossStack(blocks) => {
                let mut h = input.text;
                for block in blocks {
                    h = cross_attention(block, g, store, h, input.image, None, ctx)?;
                }
                g.masked_mean_rows(h, input.text_mask)
            }
            Head::Knowledge { blocks, lexicon } => {
                let aux = input
                    .aux
                    .ok_or_else(|| Error::Config("knowledge fusion needs auxiliary text".into()))?;
                let aux_tokens = input.aux_tokens.ok_or_else(|| {
                    Error::Config("knowledge fusion needs auxiliary tokens".into())
                })?;
                let h = match lexicon {
                    Some(lex) => sentiment_attention(
                        &blocks[0],
                        g,
                        store,
                        input.text,
                        None,
                        input.text_tokens,
                        input.text_tokens,
                        input.text_mask,
                        lex,
                        ctx,
                    )?,
                    None => blocks[0].forward(g, store, input.text, None, input.text_mask, None, ctx)?,
                };
                let h = cross_attention(&blocks[1], g, store, h, input.image, None, ctx)?;
                let h = match lexicon {
                    Some(lex) => sentiment_attention(
                        &blocks[2],
                        g,
                        store,
                        h,
                        Some(aux),
                        input.text_tokens,
                        aux_tokens,
                        input.aux_mask,
                        lex,
                        ctx,
                    )?,
                    None => blocks[2].forward(g, store, h, Some(aux), input.aux_mask, None, ctx)?,
                };
                g.masked_mean_rows(h, input.text_mask)
            }
        }
    }
}

/// Mean-pools each modality and concatenates, text first.
pub fn fuse_concat(g: &mut Graph, text: Var, text_mask: Option<&[bool]>, image: Var) -> Result<Var> {
    let t = g.masked_mean_rows(text, text_mask)?;
    let i = g.masked_mean_rows(image, None)?;
    g.concat_cols(&[t, i])
}

/// Parallel co-attention in row form (`T: n x d`, `I: m x d`):
///
/// ```text
/// C   = tanh(T Wc I^T)              n x m
/// h_t = tanh(T Wt + C (I Wi))       n x k
/// h_i = tanh(I Wi + C^T (T Wt))     m x k
/// ```
///
/// Each is mean-pooled over positions and the two are concatenated.
/// Padded text rows are zeroed out of `C`.
pub fn fuse_co_attention(
    g: &mut Graph,
    text: Var,
    text_mask: Option<&[bool]>,
    image: Var,
    wc: Var,
    wt: Var,
    wi: Var,
) -> Result<Var> {
    let tw = g.matmul(text, wc)?;
    let c = g.matmul_t(tw, image)?;
    let mut c = g.tanh(c);
    if let Some(mask) = text_mask {
        let (n, m) = g.value(c).dims2()?;
        if mask.len() != n {
            return Err(Error::shape("co-attention mask", &[n], &[mask.len()]));
        }
        let keep = mask
            .iter()
            .flat_map(|&k| core::iter::repeat_n(if k { 1.0 } else { 0.0 }, m))
            .collect();
        let keep = g.constant(Tensor::matrix(n, m, keep)?);
        c = g.mul(c, keep)?;
    }
    let ht = g.matmul(text, wt)?;
    let hi = g.matmul(image, wi)?;
    let ci = g.matmul(c, hi)?;
    let st = g.add(ht, ci)?;
    let h_text = g.tanh(st);
    let ct = g.matmul_ex(c, true, ht, false)?;
    let si = g.add(hi, ct)?;
    let h_image = g.tanh(si);
    let pt = g.masked_mean_rows(h_text, text_mask)?;
    let pi = g.masked_mean_rows(h_image, None)?;
    g.concat_cols(&[pt, pi])
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn sc_values() {
        assert_eq!(sc(0.3, 0.3), 0.0);
        assert_eq!(sc(-1.0, -1.0), 0.0);
        assert!((sc(1.0, -1.0) - 2.0 * core::f64::consts::E).abs() < 1e-12);
        assert_eq!(sc(0.2, -0.7), sc(-0.7, 0.2));
    }

    #[test]
    fn lexicon_rejects_out_of_range() {
        assert!(SentimentLexicon::new([("a", 1.5)]).is_err());
        let lex = SentimentLexicon::new([("3", -0.5)]).unwrap();
        assert_eq!(lex.score_ids(&[3, 4]), vec![-0.5, 0.0]);
    }

    #[test]
    fn output_widths() {
        for v in FusionVariant::ALL {
            let cfg = FusionConfig::new(v, 32);
            let want = if matches!(v, FusionVariant::Concat | FusionVariant::CoAttention) {
                64
            } else {
                32
            };
            assert_eq!(cfg.output_width(), want);
        }
    }

    #[test]
    fn knowledge_stack_has_three_layers() {
        let mut cfg = FusionConfig::new(FusionVariant::KnowledgeCrossAttention, 8);
        cfg.layers = 2;
        assert!(cfg.validate().is_err());
        cfg.variant = FusionVariant::CrossAttention;
        assert!(cfg.validate().is_ok());
        cfg.layers = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn concat_is_text_first() {
        let mut g = Graph::new();
        let t = g.input(Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap());
        let i = g.input(Tensor::from_rows(&[[5.0, 6.0]]).unwrap());
        let out = fuse_concat(&mut g, t, None, i).unwrap();
        assert_eq!(g.value(out).data(), &[2.0, 3.0, 5.0, 6.0]);
        let swapped = fuse_concat(&mut g, i, None, t).unwrap();
        assert_eq!(g.value(swapped).data(), &[5.0, 6.0, 2.0, 3.0]);
    }

    #[test]
    fn co_attention_zero_weights() {
        let mut g = Graph::new();
        let t = g.input(Tensor::from_rows(&[[1.0, 2.0], [3.0, -4.0]]).unwrap());
        let i = g.input(Tensor::from_rows(&[[5.0, 6.0]]).unwrap());
        let z = g.input(Tensor::zeros(&[2, 2]));
        let out = fuse_co_attention(&mut g, t, None, i, z, z, z).unwrap();
        assert!(g.value(out).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn co_attention_scalar_case() {
        let (t, i, wc, wt, wi) = (0.7, -0.4, 0.9, 1.3, -0.6);
        let c = libm::tanh(t * wc * i);
        let ht = libm::tanh(wt * t + c * wi * i);
        let hi = libm::tanh(wi * i + c * wt * t);
        let mut g = Graph::new();
        let s = |g: &mut Graph, x: f64| g.input(Tensor::scalar(x));
        let (tv, iv, wcv, wtv, wiv) = (s(&mut g, t), s(&mut g, i), s(&mut g, wc), s(&mut g, wt), s(&mut g, wi));
        let out = fuse_co_attention(&mut g, tv, None, iv, wcv, wtv, wiv).unwrap();
        let got = g.value(out).data();
        assert!((got[0] - ht).abs() < 1e-15);
        assert!((got[1] - hi).abs() < 1e-15);
    }
}
