use clfa_core::data::{generate_synthetic, Sample, LATENT_DIM};
use clfa_core::encoders::{EncoderConfig, FixtureTeacher, SyntheticTeacher, Teacher};
use clfa_core::fusion::{FusionVariant, SentimentLexicon};
use clfa_core::model::{ClfaModel, ModelConfig};
use clfa_core::optim::lr_schedule;
use clfa_core::train::{evaluate, predict, train, TrainConfig, Trainer};
use clfa_core::Error;

fn tiny(fusion: FusionVariant) -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            width: 16,
            layers: 1,
            ffn_hidden: 16,
            positional: true,
        },
        proj_hidden: 16,
        teacher_width: 8,
        fusion,
        fusion_layers: if fusion == FusionVariant::KnowledgeCrossAttention { 3 } else { 1 },
        classifier_hidden: 8,
        ..ModelConfig::default()
    }
}

fn lexicon() -> SentimentLexicon {
    SentimentLexicon::new(clfa_core::data::synthetic_lexicon_entries()).unwrap()
}

fn teacher(seed: u64) -> Teacher {
    Teacher::Synthetic(SyntheticTeacher::new(8, LATENT_DIM, seed))
}

fn config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        seed: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn identical_seeds_give_identical_histories() {
    let data = generate_synthetic(40, 2, 2).unwrap();
    let run = || {
        let model = ClfaModel::new(tiny(FusionVariant::CoAttention), None, 4).unwrap();
        train(model, teacher(1), &data.samples, None, config(2)).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.history, b.history);
    assert_eq!(a.history.len(), 2);
    assert_eq!(a.history[1].epoch, 2);
}

#[test]
fn every_variant_reduces_its_loss() {
    let data = generate_synthetic(48, 5, 2).unwrap();
    for v in FusionVariant::ALL {
        let lex = (v == FusionVariant::KnowledgeCrossAttention).then(lexicon);
        let model = ClfaModel::new(tiny(v), lex, 1).unwrap();
        let out = train(model, teacher(2), &data.samples, None, config(6)).unwrap();
        let first = out.history[0].loss.total;
        let last = out.history.last().unwrap().loss.total;
        assert!(last < first, "{}: {first} -> {last}", v.name());
    }
}

#[test]
fn memorizes_a_small_training_set() {
    let data = generate_synthetic(32, 7, 2).unwrap();
    let model = ClfaModel::new(tiny(FusionVariant::CrossAttention), None, 2).unwrap();
    let cfg = TrainConfig {
        epochs: 60,
        dropout: 0.0,
        lr: 3e-3,
        ..config(0)
    };
    let out = train(model, teacher(7), &data.samples, None, cfg).unwrap();
    let m = evaluate(&out.model, &data.samples).unwrap();
    assert!(m.accuracy >= 0.95, "{}", m.accuracy);
}

#[test]
fn rejects_empty_data_and_bad_configs() {
    let model = ClfaModel::new(tiny(FusionVariant::Concat), None, 1).unwrap();
    assert!(matches!(
        train(model.clone(), teacher(1), &[], None, config(1)),
        Err(Error::Config(_))
    ));
    let data = generate_synthetic(4, 1, 2).unwrap();
    let wide = Teacher::Synthetic(SyntheticTeacher::new(16, LATENT_DIM, 1));
    assert!(matches!(
        Trainer::new(model.clone(), wide, config(1), 1),
        Err(Error::Config(_))
    ));
    let bad = TrainConfig {
        tau: -1.0,
        ..config(1)
    };
    assert!(train(model, teacher(1), &data.samples, None, bad).is_err());
    let invalid = ModelConfig {
        fusion_layers: 2,
        ..tiny(FusionVariant::KnowledgeCrossAttention)
    };
    assert!(ClfaModel::new(invalid, Some(lexicon()), 1).is_err());
}

#[test]
fn knowledge_fusion_needs_auxiliary_text() {
    let mut data = generate_synthetic(2, 1, 2).unwrap();
    let model = ClfaModel::new(tiny(FusionVariant::KnowledgeCrossAttention), Some(lexicon()), 1).unwrap();
    assert!(predict(&model, &data.samples[0]).is_ok());
    data.samples[0].aux_tokens = None;
    assert!(matches!(predict(&model, &data.samples[0]), Err(Error::Config(_))));
}

#[test]
fn fixture_teacher_drives_training() {
    let data = generate_synthetic(16, 3, 2).unwrap();
    let synthetic = teacher(3);
    let records = data.samples.iter().map(|s| {
        let (t, i) = synthetic.teacher_embed(s).unwrap();
        (s.id, t.data().to_vec(), i.data().to_vec())
    });
    let fixture = Teacher::Fixture(FixtureTeacher::new(8, records).unwrap());
    let run = |t: Teacher| {
        let model = ClfaModel::new(tiny(FusionVariant::Concat), None, 5).unwrap();
        train(model, t, &data.samples, None, config(1)).unwrap().history
    };
    assert_eq!(run(synthetic), run(fixture.clone()));
    let stranger = Sample {
        id: 999,
        ..data.samples[0].clone()
    };
    assert_eq!(fixture.teacher_embed(&stranger), Err(Error::Lookup(999)));
}

#[test]
fn schedule_warms_up_then_decays() {
    let total = 100;
    let lrs: Vec<f64> = (0..total).map(|s| lr_schedule(s, total, 1e-3, 0.1)).collect();
    assert_eq!(lrs[0], 0.0);
    assert!((lrs[5] - 5e-4).abs() < 1e-15);
    assert!((lrs[10] - 1e-3).abs() < 1e-15);
    assert!(lrs[10..].windows(2).all(|w| w[1] < w[0]));
    assert!(lrs[99] > 0.0 && lrs[99] < 2e-5);
}
