//! Student text and image encoders and the frozen teacher.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};

use crate::data::{Image, Sample};
use crate::graph::{Graph, Var};
use crate::nn::{AttentionBlock, Builder, ForwardCtx, LayerNorm, Linear, ParamId, ParamStore};
use crate::rng;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Shared shape of the two student encoders.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderConfig {
    pub width: usize,
    pub layers: usize,
    pub ffn_hidden: usize,
    /// Learned additive positional embeddings.
    pub positional: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            width: 64,
            layers: 2,
            ffn_hidden: 128,
            positional: true,
        }
    }
}

/// Splits an `H x W x c` image into non-overlapping `p x p` patches in
/// row-major patch order, each flattened row-major to `p * p * c` values.
pub fn patchify(image: &Image, p: usize) -> Result<Tensor> {
    if p == 0 || !image.height.is_multiple_of(p) || !image.width.is_multiple_of(p) {
        return Err(Error::InvalidShape(format!(
            "{}x{} image is not divisible into {p}x{p} patches",
            image.height, image.width
        )));
    }
    let c = image.channels;
    let (gh, gw) = (image.height / p, image.width / p);
    let mut out = Vec::with_capacity(image.pixels.len());
    for py in 0..gh {
        for px in 0..gw {
            for y in py * p..(py + 1) * p {
                let start = (y * image.width + px * p) * c;
                out.extend_from_slice(&image.pixels[start..start + p * c]);
            }
        }
    }
    Tensor::matrix(gh * gw, p * p * c, out)
}

fn embed_positions(
    g: &mut Graph,
    store: &ParamStore,
    x: Var,
    table: Option<ParamId>,
    n: usize,
) -> Result<Var> {
    match table {
        None => Ok(x),
        Some(id) => {
            let t = g.param(store, id);
            let ids: Vec<usize> = (0..n).collect();
            let pos = g.gather_rows(t, &ids)?;
            g.add(x, pos)
        }
    }
}

/// Token embeddings followed by pre-norm self-attention blocks.
#[derive(Clone, Debug)]
pub struct TextEncoder {
    pub vocab_size: usize,
    pub n_max: usize,
    pub width: usize,
    embed: ParamId,
    positions: Option<ParamId>,
    blocks: Vec<AttentionBlock>,
    final_norm: LayerNorm,
    drop_embed: u32,
}

impl TextEncoder {
    pub fn new(b: &mut Builder, name: &str, vocab_size: usize, n_max: usize, cfg: EncoderConfig) -> Self {
        let d = cfg.width;
        let e = b.normal(&[vocab_size, d], 1.0);
        let embed = b.store.add(format!("{name}.embed"), e, true);
        let positions = cfg.positional.then(|| {
            let t = b.normal(&[n_max, d], 1.0);
            b.store.add(format!("{name}.positions"), t, true)
        });
        let blocks = (0..cfg.layers)
            .map(|l| AttentionBlock::new(b, &format!("{name}.block{l}"), d, cfg.ffn_hidden, false))
            .collect();
        TextEncoder {
            vocab_size,
            n_max,
            width: d,
            embed,
            positions,
            blocks,
            final_norm: LayerNorm::new(b, &format!("{name}.final_norm"), d),
            drop_embed: b.site(),
        }
    }

    /// Contextual token representations, `n x d`. Positions whose `mask`
    /// entry is false are padding: no other position attends to them.
    pub fn encode_text(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        tokens: &[u32],
        mask: Option<&[bool]>,
        ctx: &ForwardCtx,
    ) -> Result<Var> {
        let n = tokens.len();
        if n == 0 || n > self.n_max {
            return Err(Error::InvalidShape(format!(
                "text length {n} outside 1..={}",
                self.n_max
            )));
        }
        if let Some(m) = mask {
            if m.len() != n {
                return Err(Error::shape("encode_text mask", &[n], &[m.len()]));
            }
        }
        if let Some(&id) = tokens.iter().find(|&&t| t as usize >= self.vocab_size) {
            return Err(Error::Vocabulary {
                id,
                vocab: self.vocab_size,
            });
        }
        let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        let table = g.param(store, self.embed);
        let x = g.gather_rows(table, &ids)?;
        let x = embed_positions(g, store, x, self.positions, n)?;
        let mut x = ctx.dropout(g, x, self.drop_embed)?;
        for block in &self.blocks {
            x = block.forward(g, store, x, None, mask, None, ctx)?;
        }
        self.final_norm.forward(g, store, x)
    }
}

/// Patch projection followed by pre-norm self-attention blocks.
#[derive(Clone, Debug)]
pub struct ImageEncoder {
    pub patch: usize,
    pub channels: usize,
    pub max_patches: usize,
    pub width: usize,
    projection: Linear,
    positions: Option<ParamId>,
    blocks: Vec<AttentionBlock>,
    final_norm: LayerNorm,
    drop_embed: u32,
}

impl ImageEncoder {
    pub fn new(
        b: &mut Builder,
        name: &str,
        patch: usize,
        channels: usize,
        max_patches: usize,
        cfg: EncoderConfig,
    ) -> Self {
        let d = cfg.width;
        let projection = Linear::new(b, &format!("{name}.patch_proj"), patch * patch * channels, d, true);
        let positions = cfg.positional.then(|| {
            let t = b.normal(&[max_patches, d], 1.0);
            b.store.add(format!("{name}.positions"), t, true)
        });
        let blocks = (0..cfg.layers)
            .map(|l| AttentionBlock::new(b, &format!("{name}.block{l}"), d, cfg.ffn_hidden, false))
            .collect();
        ImageEncoder {
            patch,
            channels,
            max_patches,
            width: d,
            projection,
            positions,
            blocks,
            final_norm: LayerNorm::new(b, &format!("{name}.final_norm"), d),
            drop_embed: b.site(),
        }
    }

    /// Per-patch representations, `m x d`.
    pub fn encode_image(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        image: &Image,
        ctx: &ForwardCtx,
    ) -> Result<Var> {
        if image.channels != self.channels {
            return Err(Error::InvalidShape(format!(
                "expected {} channels, got {}",
                self.channels, image.channels
            )));
        }
        let patches = patchify(image, self.patch)?;
        let m = patches.rows();
        if self.positions.is_some() && m > self.max_patches {
            return Err(Error::InvalidShape(format!(
                "{m} patches exceed the {} positional slots",
                self.max_patches
            )));
        }
        let x = g.constant(patches);
        let x = self.projection.forward(g, store, x)?;
        let x = embed_positions(g, store, x, self.positions, m)?;
        let mut x = ctx.dropout(g, x, self.drop_embed)?;
        for block in &self.blocks {
            x = block.forward(g, store, x, None, None, None, ctx)?;
        }
        self.final_norm.forward(g, store, x)
    }
}

/// Frozen source of target embeddings. Holds plain tensors, never
/// parameters, so nothing can train it.
#[derive(Clone, Debug, PartialEq)]
pub enum Teacher {
    Synthetic(SyntheticTeacher),
    Fixture(FixtureTeacher),
}

impl Teacher {
    pub fn width(&self) -> usize {
        match self {
            Teacher::Synthetic(t) => t.width,
            Teacher::Fixture(t) => t.width,
        }
    }

    /// `(C_t, C_i)` for a sample, each a `1 x d_C` row.
    pub fn teacher_embed(&self, sample: &Sample) -> Result<(Tensor, Tensor)> {
        match self {
            Teacher::Synthetic(t) => t.embed(sample),
            Teacher::Fixture(t) => t.embed(sample.id),
        }
    }
}

const TEACHER_STREAM: u64 = 0x7465_6163;
const TEACHER_NOISE: f64 = 0.1;
const MODALITY_SPREAD: f64 = 0.1;

/// `C_t = A_t z_t + e`, `C_i = A_i z_i + e` with `A_t`, `A_i` sharing a
/// common component so matched pairs land close together.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTeacher {
    pub width: usize,
    pub latent_dim: usize,
    seed: u64,
    text_map: Tensor,
    image_map: Tensor,
}

impl SyntheticTeacher {
    pub fn new(width: usize, latent_dim: usize, seed: u64) -> Self {
        let mut rng = rng::stream(seed, TEACHER_STREAM, 0);
        let std = 1.0 / libm::sqrt(latent_dim as f64);
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * std
                })
                .collect()
        };
        let n = width * latent_dim;
        let shared = draw(n);
        let spread_t = draw(n);
        let spread_i = draw(n);
        let mix = |s: &[f64]| -> Tensor {
            let data = shared.iter().zip(s).map(|(a, g)| a + MODALITY_SPREAD * g).collect();
            Tensor::new(alloc::vec![width, latent_dim], data).expect("sizes agree")
        };
        SyntheticTeacher {
            width,
            latent_dim,
            seed,
            text_map: mix(&spread_t),
            image_map: mix(&spread_i),
        }
    }

    fn embed(&self, sample: &Sample) -> Result<(Tensor, Tensor)> {
        let z = sample.latents.as_ref().ok_or(Error::Lookup(sample.id))?;
        if z.text.len() != self.latent_dim || z.image.len() != self.latent_dim {
            return Err(Error::shape(
                "teacher latents",
                &[self.latent_dim],
                &[z.text.len()],
            ));
        }
        // Noise keyed by teacher id: duplicates get identical embeddings.
        let mut rng = rng::stream(self.seed, TEACHER_STREAM + 1, sample.teacher_id);
        let mut apply = |map: &Tensor, z: &[f64]| -> Tensor {
            let out = (0..self.width)
                .map(|r| {
                    let dot: f64 = map.row_slice(r).iter().zip(z).map(|(a, b)| a * b).sum();
                    let e: f64 = StandardNormal.sample(&mut rng);
                    dot + TEACHER_NOISE * e
                })
                .collect();
            Tensor::row(out)
        };
        let t = apply(&self.text_map, &z.text);
        let i = apply(&self.image_map, &z.image);
        Ok((t, i))
    }
}

/// Embeddings loaded from a fixture file, keyed by sample id.
#[derive(Clone, Debug, PartialEq)]
pub struct FixtureTeacher {
    pub width: usize,
    entries: BTreeMap<u64, (Tensor, Tensor)>,
}

impl FixtureTeacher {
    pub fn new<I>(width: usize, records: I) -> Result<Self>
    where
        I: IntoIterator<Item = (u64, Vec<f64>, Vec<f64>)>,
    {
        if width == 0 {
            return Err(Error::InvalidShape("teacher width must be positive".into()));
        }
        let mut entries = BTreeMap::new();
        for (id, text, image) in records {
            if text.len() != width || image.len() != width {
                return Err(Error::shape("fixture record", &[width], &[text.len(), image.len()]));
            }
            entries.insert(id, (Tensor::row(text), Tensor::row(image)));
        }
        Ok(FixtureTeacher { width, entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn embed(&self, id: u64) -> Result<(Tensor, Tensor)> {
        self.entries.get(&id).cloned().ok_or(Error::Lookup(id))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic;

    fn text_encoder(positional: bool) -> (TextEncoder, ParamStore) {
        let mut b = Builder::new(3);
        let cfg = EncoderConfig {
            width: 16,
            layers: 2,
            ffn_hidden: 24,
            positional,
        };
        let enc = TextEncoder::new(&mut b, "text", 64, 77, cfg);
        (enc, b.finish())
    }

    #[test]
    fn patchify_geometry() {
        let img = Image::filled(224, 224, 1, 0.5);
        let p = patchify(&img, 32).unwrap();
        assert_eq!(p.shape(), &[49, 1024]);
        let img = Image::filled(16, 16, 1, 0.5);
        let p = patchify(&img, 8).unwrap();
        assert_eq!(p.shape(), &[4, 64]);
        for r in 1..4 {
            assert_eq!(p.row_slice(r), p.row_slice(0));
        }
    }

    #[test]
    fn patchify_order_is_row_major() {
        let pixels = (0..16).map(f64::from).collect();
        let img = Image::new(4, 4, 1, pixels).unwrap();
        let p = patchify(&img, 2).unwrap();
        assert_eq!(p.row_slice(0), &[0.0, 1.0, 4.0, 5.0]);
        assert_eq!(p.row_slice(1), &[2.0, 3.0, 6.0, 7.0]);
        assert_eq!(p.row_slice(2), &[8.0, 9.0, 12.0, 13.0]);
    }

    #[test]
    fn patchify_rejects_indivisible() {
        let img = Image::filled(10, 16, 1, 0.0);
        assert!(matches!(patchify(&img, 8), Err(Error::InvalidShape(_))));
    }

    #[test]
    fn text_shape_and_vocabulary() {
        let (enc, store) = text_encoder(true);
        let mut g = Graph::new();
        let out = enc
            .encode_text(&mut g, &store, &[1, 2, 3, 4, 5], None, &ForwardCtx::eval())
            .unwrap();
        assert_eq!(g.value(out).shape(), &[5, 16]);
        let err = enc
            .encode_text(&mut g, &store, &[1, 64], None, &ForwardCtx::eval())
            .unwrap_err();
        assert_eq!(err, Error::Vocabulary { id: 64, vocab: 64 });
    }

    #[test]
    fn padding_does_not_leak() {
        let (enc, store) = text_encoder(true);
        let mask = [true, true, true, false];
        let run = |pad: u32| {
            let mut g = Graph::new();
            let out = enc
                .encode_text(&mut g, &store, &[7, 8, 9, pad], Some(&mask), &ForwardCtx::eval())
                .unwrap();
            g.value(out).clone()
        };
        let a = run(0);
        let b = run(33);
        for r in 0..3 {
            assert_eq!(a.row_slice(r), b.row_slice(r));
        }
    }

    #[test]
    fn image_patch_equivariance_without_positions() {
        let mut b = Builder::new(5);
        let cfg = EncoderConfig {
            width: 16,
            layers: 2,
            ffn_hidden: 24,
            positional: false,
        };
        let enc = ImageEncoder::new(&mut b, "image", 8, 1, 4, cfg);
        let store = b.finish();
        let d = generate_synthetic(1, 2, 2).unwrap();
        let img = d.samples[0].image.clone();
        // Swap patches 0 and 1 (the two top 8x8 blocks).
        let mut swapped = img.clone();
        for y in 0..8 {
            for x in 0..8 {
                swapped.pixels[y * 16 + x] = img.pixels[y * 16 + x + 8];
                swapped.pixels[y * 16 + x + 8] = img.pixels[y * 16 + x];
            }
        }
        let enc_of = |im: &Image| {
            let mut g = Graph::new();
            let o = enc.encode_image(&mut g, &store, im, &ForwardCtx::eval()).unwrap();
            g.value(o).clone()
        };
        let a = enc_of(&img);
        let s = enc_of(&swapped);
        assert_eq!(a.shape(), &[4, 16]);
        for (x, y) in a.row_slice(0).iter().zip(s.row_slice(1)) {
            assert!((x - y).abs() < 1e-12);
        }
        for (x, y) in a.row_slice(2).iter().zip(s.row_slice(2)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn synthetic_teacher_is_frozen_and_deterministic() {
        let d = generate_synthetic(3, 2, 2).unwrap();
        let t = Teacher::Synthetic(SyntheticTeacher::new(32, crate::data::LATENT_DIM, 9));
        let a = t.teacher_embed(&d.samples[1]).unwrap();
        let b = t.teacher_embed(&d.samples[1]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.0.shape(), &[1, 32]);
        let mut no_latents = d.samples[0].clone();
        no_latents.latents = None;
        assert_eq!(t.teacher_embed(&no_latents), Err(Error::Lookup(0)));
    }

    #[test]
    fn fixture_teacher_lookup() {
        let t = FixtureTeacher::new(2, [(5, alloc::vec![1.0, 2.0], alloc::vec![3.0, 4.0])]).unwrap();
        let t = Teacher::Fixture(t);
        let mut d = generate_synthetic(1, 1, 2).unwrap();
        d.samples[0].id = 5;
        let (ct, ci) = t.teacher_embed(&d.samples[0]).unwrap();
        assert_eq!(ct.data(), &[1.0, 2.0]);
        assert_eq!(ci.data(), &[3.0, 4.0]);
        d.samples[0].id = 6;
        assert_eq!(t.teacher_embed(&d.samples[0]), Err(Error::Lookup(6)));
    }
}
