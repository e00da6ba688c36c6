//! Objective, training loop and evaluation.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::alignment::{alignment_loss, AlignmentLoss};
use crate::data::{batch_iter, Sample};
use crate::encoders::Teacher;
use crate::graph::Graph;
use crate::metrics::{argmax, ConfusionMatrix, MetricsReport};
use crate::model::ClfaModel;
use crate::nn::ForwardCtx;
use crate::optim::{lr_schedule, AdamW};
use crate::rng;
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub alpha: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub warmup: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub seed: u64,
    /// When false the alignment branch is not built at all.
    pub align: bool,
    pub drop_duplicates: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 1.0,
            tau: 0.1,
            batch_size: 8,
            lr: 1e-3,
            epochs: 15,
            warmup: 0.1,
            weight_decay: 0.01,
            dropout: 0.1,
            seed: 0,
            align: true,
            drop_duplicates: true,
        }
    }
}

impl TrainConfig {
    /// The settings used with pretrained encoders.
    pub fn paper_scale() -> Self {
        TrainConfig {
            lr: 1e-5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(Error::Parameter(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !self.tau.is_finite() || self.tau <= 0.0 {
            return Err(Error::Parameter(format!("tau must be > 0, got {}", self.tau)));
        }
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch size must be at least 1".into()));
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(Error::Parameter(format!("learning rate must be >= 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.warmup) {
            return Err(Error::Parameter(format!("warmup must lie in [0, 1), got {}", self.warmup)));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return Err(Error::Parameter(format!(
                "weight decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Parameter(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub align: AlignmentLoss,
    pub ce: f64,
    pub alpha: f64,
    pub total: f64,
}

/// `total = alpha * L_con + L_ce`.
pub fn total_loss(align: AlignmentLoss, ce: f64, alpha: f64) -> Result<LossReport> {
    if alpha.is_nan() || alpha < 0.0 {
        return Err(Error::Parameter(format!("alpha must be >= 0, got {alpha}")));
    }
    Ok(LossReport {
        align,
        ce,
        alpha,
        total: alpha * align.con + ce,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub loss: LossReport,
    pub metrics: MetricsReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub loss: LossReport,
    pub lr: f64,
    pub predictions: Vec<usize>,
}

const BATCH_STREAM: u64 = 0x6261_7463;

/// Stateful optimizer loop over student parameters.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: ClfaModel,
    pub teacher: Teacher,
    pub config: TrainConfig,
    optimizer: AdamW,
    step: usize,
    total_steps: usize,
}

impl Trainer {
    pub fn new(model: ClfaModel, teacher: Teacher, config: TrainConfig, total_steps: usize) -> Result<Self> {
        config.validate()?;
        if let Some((_, p)) = model.params.iter().find(|(_, p)| p.name.starts_with("teacher")) {
            return Err(Error::Config(format!(
                "teacher parameter {:?} must not be optimized",
                p.name
            )));
        }
        if config.align && teacher.width() != model.config.teacher_width {
            return Err(Error::Config(format!(
                "teacher width {} does not match projection width {}",
                teacher.width(),
                model.config.teacher_width
            )));
        }
        let optimizer = AdamW::new(&model.params, config.weight_decay);
        Ok(Trainer {
            model,
            teacher,
            config,
            optimizer,
            step: 0,
            total_steps,
        })
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    /// Batches for every epoch, drawn from per-epoch seeds.
    pub fn plan(config: &TrainConfig, samples: &[Sample]) -> Result<Vec<Vec<Vec<usize>>>> {
        (0..config.epochs as u64)
            .map(|epoch| {
                let seed = rng::stream(config.seed, BATCH_STREAM, epoch).random::<u64>();
                batch_iter(samples, config.batch_size, seed, config.drop_duplicates)
            })
            .collect()
    }

    /// One optimizer update on `batch`.
    pub fn train_step(&mut self, batch: &[&Sample]) -> Result<StepReport> {
        let cfg = self.config;
        let lr = lr_schedule(self.step, self.total_steps, cfg.lr, cfg.warmup);
        let mut g = Graph::new();
        let ctx = ForwardCtx::train(cfg.dropout, cfg.seed, self.step as u64);
        let out = self.model.forward_batch(&mut g, batch, &ctx)?;
        let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
        let ce = g.cross_entropy(out.logits, &labels)?;
        let (loss, align) = if cfg.align {
            let mut text = Vec::with_capacity(batch.len());
            let mut image = Vec::with_capacity(batch.len());
            for s in batch {
                let (t, i) = self.teacher.teacher_embed(s)?;
                text.push(t);
                image.push(i);
            }
            let tt = g.constant(stack(&text)?);
            let ti = g.constant(stack(&image)?);
            let terms = alignment_loss(&mut g, out.image_proj, ti, out.text_proj, tt, cfg.tau)?;
            let weighted = g.scale(terms.con, cfg.alpha);
            (g.add(weighted, ce)?, terms.values(&g))
        } else {
            (ce, AlignmentLoss::default())
        };
        let report = total_loss(align, g.value(ce).item(), cfg.alpha)?;
        if !g.value(loss).item().is_finite() {
            return Err(Error::Domain(format!("non-finite loss at step {}", self.step)));
        }
        let grads = g.backward(loss)?;
        self.optimizer.step(&mut self.model.params, &grads, lr)?;
        self.step += 1;
        let logits = g.value(out.logits);
        let predictions = (0..logits.rows()).map(|r| argmax(logits.row_slice(r))).collect();
        Ok(StepReport {
            loss: report,
            lr,
            predictions,
        })
    }

    /// Runs every epoch of `plan`. Per-epoch metrics come from `eval` when
    /// given, otherwise from the predictions made while training.
    pub fn fit(
        &mut self,
        samples: &[Sample],
        plan: &[Vec<Vec<usize>>],
        eval: Option<&[Sample]>,
    ) -> Result<Vec<EpochRecord>> {
        let mut history = Vec::with_capacity(plan.len());
        for (e, batches) in plan.iter().enumerate() {
            let mut sum = [0.0f64; 8];
            let mut actual = Vec::with_capacity(samples.len());
            let mut predicted = Vec::with_capacity(samples.len());
            for batch in batches {
                let refs: Vec<&Sample> = batch.iter().map(|&i| &samples[i]).collect();
                let step = self.train_step(&refs)?;
                let a = step.loss.align;
                for (s, v) in sum.iter_mut().zip([a.ic, a.ci, a.i, a.tc, a.ct, a.t, a.con, step.loss.ce]) {
                    *s += v;
                }
                actual.extend(refs.iter().map(|s| s.label));
                predicted.extend(step.predictions);
            }
            let n = batches.len().max(1) as f64;
            let m = sum.map(|s| s / n);
            let align = AlignmentLoss {
                ic: m[0],
                ci: m[1],
                i: m[2],
                tc: m[3],
                ct: m[4],
                t: m[5],
                con: m[6],
            };
            let loss = total_loss(align, m[7], self.config.alpha)?;
            let metrics = match eval {
                Some(set) => evaluate(&self.model, set)?,
                None => MetricsReport::from_predictions(self.model.config.classes, &actual, &predicted)?,
            };
            history.push(EpochRecord {
                epoch: e + 1,
                loss,
                metrics,
            });
        }
        Ok(history)
    }
}

fn stack(rows: &[Tensor]) -> Result<Tensor> {
    let slices: Vec<&[f64]> = rows.iter().map(|t| t.data()).collect();
    Tensor::from_rows(&slices)
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub model: ClfaModel,
    pub history: Vec<EpochRecord>,
}

/// Trains `model` on `samples` for `config.epochs` epochs.
pub fn train(
    model: ClfaModel,
    teacher: Teacher,
    samples: &[Sample],
    eval: Option<&[Sample]>,
    config: TrainConfig,
) -> Result<TrainOutput> {
    if samples.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    config.validate()?;
    let plan = Trainer::plan(&config, samples)?;
    let total: usize = plan.iter().map(Vec::len).sum();
    let mut trainer = Trainer::new(model, teacher, config, total)?;
    let history = trainer.fit(samples, &plan, eval)?;
    Ok(TrainOutput {
        model: trainer.model,
        history,
    })
}

/// Class logits for one sample in eval mode.
pub fn logits(model: &ClfaModel, sample: &Sample) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let out = model.forward_sample(&mut g, sample, &ForwardCtx::eval(), 0)?;
    Ok(g.value(out.logits).data().to_vec())
}

pub fn predict(model: &ClfaModel, sample: &Sample) -> Result<usize> {
    Ok(argmax(&logits(model, sample)?))
}

/// Metrics of argmax predictions against the samples' labels.
pub fn evaluate(model: &ClfaModel, samples: &[Sample]) -> Result<MetricsReport> {
    let mut cm = ConfusionMatrix::new(model.config.classes);
    for s in samples {
        cm.record(s.label, predict(model, s)?)?;
    }
    Ok(MetricsReport::from_confusion(cm))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn total_loss_arithmetic() {
        let align = AlignmentLoss {
            con: 0.5,
            ..AlignmentLoss::default()
        };
        assert_eq!(total_loss(align, 0.7, 1.0).unwrap().total, 1.2);
        assert_eq!(total_loss(align, 0.7, 0.0).unwrap().total, 0.7);
        let align = AlignmentLoss {
            con: 0.25,
            ..AlignmentLoss::default()
        };
        assert_eq!(total_loss(align, 0.5, 2.0).unwrap().total, 1.0);
        assert!(total_loss(align, 0.5, -1.0).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig { alpha: -0.1, ..Default::default() },
            TrainConfig { tau: 0.0, ..Default::default() },
            TrainConfig { warmup: 1.0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
        assert_eq!(TrainConfig::paper_scale().lr, 1e-5);
    }
}
