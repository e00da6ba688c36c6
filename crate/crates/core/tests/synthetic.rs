use clfa_core::data::{dataset_stats, generate_synthetic, Dataset, Sample, Split, LATENT_DIM, VOCAB_SIZE};
use clfa_core::encoders::{SyntheticTeacher, Teacher};

fn bag_of_tokens(s: &Sample) -> Vec<f64> {
    let mut x = vec![0.0; VOCAB_SIZE + 1];
    for &t in &s.tokens {
        x[t as usize] += 1.0;
    }
    x[VOCAB_SIZE] = 1.0;
    x
}

fn pixels(s: &Sample) -> Vec<f64> {
    let mut x = s.image.pixels.clone();
    x.push(1.0);
    x
}

/// Logistic regression by full-batch gradient descent; returns held-out
/// accuracy on `test`.
fn linear_probe(train: &[(Vec<f64>, usize)], test: &[(Vec<f64>, usize)]) -> f64 {
    let d = train[0].0.len();
    let mut w = vec![0.0; d];
    for _ in 0..300 {
        let mut grad = vec![0.0; d];
        for (x, y) in train {
            let z: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum();
            let p = 1.0 / (1.0 + (-z).exp());
            for (g, xi) in grad.iter_mut().zip(x) {
                *g += (p - *y as f64) * xi;
            }
        }
        for (wi, g) in w.iter_mut().zip(&grad) {
            *wi -= 0.5 * g / train.len() as f64;
        }
    }
    let correct = test
        .iter()
        .filter(|(x, y)| {
            let z: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum();
            usize::from(z > 0.0) == *y
        })
        .count();
    correct as f64 / test.len() as f64
}

fn probe(data: &Dataset, features: fn(&Sample) -> Vec<f64>) -> f64 {
    let rows: Vec<(Vec<f64>, usize)> = data.samples.iter().map(|s| (features(s), s.label)).collect();
    let (train, test) = rows.split_at(rows.len() / 2);
    linear_probe(train, test)
}

#[test]
fn single_modality_probes_sit_at_chance() {
    let data = generate_synthetic(2000, 13, 2).unwrap();
    let text = probe(&data, bag_of_tokens);
    let image = probe(&data, pixels);
    assert!((text - 0.5).abs() <= 0.05, "text-only accuracy {text}");
    assert!((image - 0.5).abs() <= 0.05, "image-only accuracy {image}");
}

#[test]
fn probe_can_learn_a_single_modality_signal() {
    // Same probe on a label that text alone does determine.
    let data = generate_synthetic(2000, 13, 2).unwrap();
    let rows: Vec<(Vec<f64>, usize)> = data
        .samples
        .iter()
        .map(|s| (bag_of_tokens(s), usize::from(s.latents.as_ref().unwrap().text[0] >= 0.0)))
        .collect();
    let (train, test) = rows.split_at(1000);
    assert!(linear_probe(train, test) > 0.9);
}

#[test]
fn two_class_labels_are_balanced() {
    let data = generate_synthetic(2000, 21, 2).unwrap();
    let positive = data.samples.iter().filter(|s| s.label == 1).count() as f64 / 2000.0;
    assert!((0.45..=0.55).contains(&positive), "{positive}");
}

#[test]
fn labels_depend_only_on_latent_signs() {
    let data = generate_synthetic(500, 4, 2).unwrap();
    for s in &data.samples {
        let z = s.latents.as_ref().unwrap();
        assert_eq!(s.label, usize::from((z.text[0] >= 0.0) != (z.image[0] >= 0.0)));
    }
    let multi = generate_synthetic(3000, 4, 5).unwrap();
    let stats = dataset_stats(&multi);
    for &c in &stats.get("train").unwrap().per_class {
        assert!((480..=720).contains(&c), "{:?}", stats);
    }
}

#[test]
fn generation_is_deterministic() {
    assert_eq!(generate_synthetic(50, 9, 2).unwrap(), generate_synthetic(50, 9, 2).unwrap());
    assert_ne!(generate_synthetic(50, 9, 2).unwrap(), generate_synthetic(50, 10, 2).unwrap());
}

#[test]
fn token_ids_fit_the_vocabulary() {
    let data = generate_synthetic(300, 2, 2).unwrap();
    for s in &data.samples {
        assert!(s.tokens.iter().chain(s.aux_tokens.as_deref().unwrap()).all(|&t| (t as usize) < VOCAB_SIZE));
        assert_eq!((s.image.height, s.image.width, s.image.channels), (16, 16, 1));
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (n(a) * n(b))
}

#[test]
fn teacher_pairs_matched_samples() {
    let data = generate_synthetic(400, 8, 2).unwrap();
    let teacher = Teacher::Synthetic(SyntheticTeacher::new(32, LATENT_DIM, 8));
    let emb: Vec<_> = data.samples.iter().map(|s| teacher.teacher_embed(s).unwrap()).collect();
    let n = emb.len();
    let matched: f64 = emb.iter().map(|(t, i)| cosine(t.data(), i.data())).sum::<f64>() / n as f64;
    let mismatched: f64 =
        (0..n).map(|k| cosine(emb[k].0.data(), emb[(k + 1) % n].1.data())).sum::<f64>() / n as f64;
    assert!(matched > 0.7, "matched {matched}");
    assert!(mismatched.abs() < 0.1, "mismatched {mismatched}");
}

#[test]
fn splits_and_stats() {
    let mut data = generate_synthetic(100, 1, 3).unwrap();
    data.assign_splits(0.1, 0.1).unwrap();
    let stats = dataset_stats(&data);
    assert_eq!(stats.get("train").unwrap().samples(), 80);
    assert_eq!(stats.get("dev").unwrap().samples(), 10);
    assert_eq!(stats.get("test").unwrap().samples(), 10);
    assert_eq!(stats.total().samples(), 100);
    assert_eq!(data.subset(Split::Dev).len(), 10);
    let empty = Dataset { classes: 2, samples: vec![] };
    assert!(dataset_stats(&empty).splits.iter().all(|s| s.per_class == [0, 0]));
}
