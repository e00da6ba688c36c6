//! The full dual-encoder classifier.

use alloc::format;
use alloc::vec::Vec;

use crate::alignment::ProjectionHead;
use crate::data::{Sample, IMAGE_SIDE, VOCAB_SIZE};
use crate::encoders::{EncoderConfig, ImageEncoder, TextEncoder};
use crate::fusion::{Fusion, FusionConfig, FusionInput, FusionVariant, SentimentLexicon};
use crate::graph::{Graph, Var};
use crate::nn::{Builder, ForwardCtx, Linear, ParamStore};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub n_max: usize,
    pub encoder: EncoderConfig,
    pub patch: usize,
    pub channels: usize,
    pub max_patches: usize,
    pub proj_hidden: usize,
    /// Teacher embedding width `d_C`.
    pub teacher_width: usize,
    pub fusion: FusionVariant,
    pub fusion_layers: usize,
    pub classifier_hidden: usize,
    pub classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let patch = 8;
        ModelConfig {
            vocab_size: VOCAB_SIZE,
            n_max: 77,
            encoder: EncoderConfig::default(),
            patch,
            channels: 1,
            max_patches: (IMAGE_SIDE / patch) * (IMAGE_SIDE / patch),
            proj_hidden: 128,
            teacher_width: 32,
            fusion: FusionVariant::CrossAttention,
            fusion_layers: 3,
            classifier_hidden: 64,
            classes: 2,
        }
    }
}

impl ModelConfig {
    pub fn fusion_config(&self) -> FusionConfig {
        FusionConfig {
            layers: self.fusion_layers,
            ..FusionConfig::new(self.fusion, self.teacher_width)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("n_max", self.n_max),
            ("width", self.encoder.width),
            ("ffn_hidden", self.encoder.ffn_hidden),
            ("patch", self.patch),
            ("channels", self.channels),
            ("max_patches", self.max_patches),
            ("proj_hidden", self.proj_hidden),
            ("teacher_width", self.teacher_width),
            ("classifier_hidden", self.classifier_hidden),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.classes)));
        }
        self.fusion_config().validate()
    }
}

/// `Linear -> GELU -> Linear` from the fused vector to class logits.
#[derive(Clone, Debug)]
pub struct Classifier {
    pub hidden: Linear,
    pub output: Linear,
    drop: u32,
}

impl Classifier {
    pub fn new(b: &mut Builder, input: usize, hidden: usize, classes: usize) -> Self {
        Classifier {
            hidden: Linear::new(b, "classifier.hidden", input, hidden, true),
            output: Linear::new(b, "classifier.output", hidden, classes, true),
            drop: b.site(),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, ctx: &ForwardCtx) -> Result<Var> {
        let h = self.hidden.forward(g, store, x)?;
        let h = g.gelu(h);
        let h = ctx.dropout(g, h, self.drop)?;
        self.output.forward(g, store, h)
    }
}

/// Graph nodes produced for one sample.
#[derive(Clone, Copy, Debug)]
pub struct SampleOutput {
    /// Pooled projections (`1 x d_C`), the inputs to alignment.
    pub text_proj: Var,
    pub image_proj: Var,
    pub fused: Var,
    pub logits: Var,
}

/// Stacked rows for a batch.
#[derive(Clone, Copy, Debug)]
pub struct BatchOutput {
    pub text_proj: Var,
    pub image_proj: Var,
    pub logits: Var,
}

#[derive(Clone, Debug)]
pub struct ClfaModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    text: TextEncoder,
    image: ImageEncoder,
    text_proj: ProjectionHead,
    image_proj: ProjectionHead,
    fusion: Fusion,
    classifier: Classifier,
}

impl ClfaModel {
    pub fn new(config: ModelConfig, lexicon: Option<SentimentLexicon>, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut b = Builder::new(seed);
        let d = config.encoder.width;
        let dc = config.teacher_width;
        let text = TextEncoder::new(&mut b, "text", config.vocab_size, config.n_max, config.encoder);
        let image = ImageEncoder::new(
            &mut b,
            "image",
            config.patch,
            config.channels,
            config.max_patches,
            config.encoder,
        );
        let text_proj = ProjectionHead::new(&mut b, "text_proj", d, config.proj_hidden, dc);
        let image_proj = ProjectionHead::new(&mut b, "image_proj", d, config.proj_hidden, dc);
        let fusion = Fusion::new(&mut b, config.fusion_config(), lexicon)?;
        let classifier = Classifier::new(&mut b, fusion.output_width(), config.classifier_hidden, config.classes);
        Ok(ClfaModel {
            config,
            params: b.finish(),
            text,
            image,
            text_proj,
            image_proj,
            fusion,
            classifier,
        })
    }

    /// Forward pass for one sample. `slot` separates dropout masks of
    /// different samples within a step.
    pub fn forward_sample(
        &self,
        g: &mut Graph,
        sample: &Sample,
        ctx: &ForwardCtx,
        slot: u32,
    ) -> Result<SampleOutput> {
        let store = &self.params;
        let main = ctx.with_slot(2 * slot);
        let t = self.text.encode_text(g, store, &sample.tokens, None, &main)?;
        let i = self.image.encode_image(g, store, &sample.image, &main)?;
        let text_proj = self.text_proj.project(g, store, t, None)?;
        let image_proj = self.image_proj.project(g, store, i, None)?;
        let text_rows = self.text_proj.forward_rows(g, store, t)?;
        let image_rows = self.image_proj.forward_rows(g, store, i)?;
        let aux = match (&sample.aux_tokens, self.fusion.needs_aux()) {
            (Some(tokens), true) => {
                let side = ctx.with_slot(2 * slot + 1);
                let a = self.text.encode_text(g, store, tokens, None, &side)?;
                Some(self.text_proj.forward_rows(g, store, a)?)
            }
            _ => None,
        };
        let input = FusionInput {
            text: text_rows,
            text_mask: None,
            text_tokens: &sample.tokens,
            image: image_rows,
            aux,
            aux_mask: None,
            aux_tokens: sample.aux_tokens.as_deref(),
        };
        let fused = self.fusion.forward(g, store, &input, &main)?;
        let logits = self.classifier.forward(g, store, fused, &main)?;
        Ok(SampleOutput {
            text_proj,
            image_proj,
            fused,
            logits,
        })
    }

    /// Pooled text and image projections only, skipping fusion.
    pub fn project_sample(&self, g: &mut Graph, sample: &Sample, ctx: &ForwardCtx) -> Result<(Var, Var)> {
        let store = &self.params;
        let t = self.text.encode_text(g, store, &sample.tokens, None, ctx)?;
        let i = self.image.encode_image(g, store, &sample.image, ctx)?;
        Ok((
            self.text_proj.project(g, store, t, None)?,
            self.image_proj.project(g, store, i, None)?,
        ))
    }

    pub fn forward_batch(&self, g: &mut Graph, batch: &[&Sample], ctx: &ForwardCtx) -> Result<BatchOutput> {
        if batch.is_empty() {
            return Err(Error::Config("empty batch".into()));
        }
        let mut text = Vec::with_capacity(batch.len());
        let mut image = Vec::with_capacity(batch.len());
        let mut logits = Vec::with_capacity(batch.len());
        for (k, s) in batch.iter().enumerate() {
            let out = self.forward_sample(g, s, ctx, k as u32)?;
            text.push(out.text_proj);
            image.push(out.image_proj);
            logits.push(out.logits);
        }
        Ok(BatchOutput {
            text_proj: g.concat_rows(&text)?,
            image_proj: g.concat_rows(&image)?,
            logits: g.concat_rows(&logits)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic;

    #[test]
    fn every_variant_builds_and_runs() {
        let d = generate_synthetic(2, 1, 2).unwrap();
        for v in FusionVariant::ALL {
            let cfg = ModelConfig {
                fusion: v,
                encoder: EncoderConfig {
                    width: 8,
                    layers: 1,
                    ffn_hidden: 8,
                    positional: true,
                },
                proj_hidden: 8,
                teacher_width: 4,
                classifier_hidden: 4,
                ..ModelConfig::default()
            };
            let m = ClfaModel::new(cfg, None, 3).unwrap();
            let mut g = Graph::new();
            let refs: Vec<&Sample> = d.samples.iter().collect();
            let out = m.forward_batch(&mut g, &refs, &ForwardCtx::eval()).unwrap();
            assert_eq!(g.value(out.logits).shape(), &[2, 2]);
            assert_eq!(g.value(out.text_proj).shape(), &[2, 4]);
        }
    }

    #[test]
    fn knowledge_variant_needs_aux() {
        let mut d = generate_synthetic(1, 1, 2).unwrap();
        d.samples[0].aux_tokens = None;
        let cfg = ModelConfig {
            fusion: FusionVariant::KnowledgeCrossAttention,
            ..ModelConfig::default()
        };
        let m = ClfaModel::new(cfg, None, 3).unwrap();
        let mut g = Graph::new();
        let err = m.forward_sample(&mut g, &d.samples[0], &ForwardCtx::eval(), 0);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn no_parameter_belongs_to_a_teacher() {
        let m = ClfaModel::new(ModelConfig::default(), None, 1).unwrap();
        assert!(m.params.iter().all(|(_, p)| !p.name.starts_with("teacher")));
    }
}
