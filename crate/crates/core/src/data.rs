//! Samples, the synthetic cross-modal incongruity generator, dataset
//! statistics and mini-batching.
//!
//! Synthetic world: each sample draws a shared latent `z` of
//! [`LATENT_DIM`] dimensions. The text latent `z_t` and image latent `z_i`
//! both equal `z` except in coordinate 0, which each modality draws
//! independently. For two classes the label is 1 (incongruent) exactly when
//! `z_t[0]` and `z_i[0]` have different signs, so neither modality alone
//! carries any information about it.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use alloc::format;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::rng;
use crate::{Error, Result};

pub const VOCAB_SIZE: usize = 64;
pub const SEQ_LEN: usize = 12;
pub const AUX_LEN: usize = 12;
pub const IMAGE_SIDE: usize = 16;
pub const LATENT_DIM: usize = 12;
/// Quantization levels per latent coordinate. Token ids run up to
/// `LATENT_DIM * BINS`; the rest of the vocabulary is unused.
pub const BINS: usize = 4;

const BIN_WIDTH: f64 = 1.0;
const TOKEN_NOISE: f64 = 0.1;
const PIXEL_AMPLITUDE: f64 = 0.5;
const PIXEL_NOISE: f64 = 0.2;
const GEN_STREAM: u64 = 0x6461_7461;

const _: () = assert!(LATENT_DIM * BINS <= VOCAB_SIZE);
const _: () = assert!(LATENT_DIM == 3 * 4 && SEQ_LEN >= LATENT_DIM);

/// A raw `height x width x channels` image, row-major with interleaved
/// channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub pixels: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidShape(format!(
                "image dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if pixels.len() != height * width * channels {
            return Err(Error::InvalidShape(format!(
                "{height}x{width}x{channels} image needs {} pixels, got {}",
                height * width * channels,
                pixels.len()
            )));
        }
        Ok(Image {
            height,
            width,
            channels,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Image {
            height,
            width,
            channels,
            pixels: vec![value; height * width * channels],
        }
    }

    pub fn at(&self, y: usize, x: usize, c: usize) -> f64 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        Split::ALL.into_iter().find(|sp| sp.name() == s)
    }
}

/// Generator latents; only the synthetic teacher may look at them.
#[derive(Clone, Debug, PartialEq)]
pub struct Latents {
    pub text: Vec<f64>,
    pub image: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: u64,
    /// Samples sharing a teacher id have identical teacher inputs and must
    /// not meet in one contrastive batch.
    pub teacher_id: u64,
    pub tokens: Vec<u32>,
    pub image: Image,
    /// Auxiliary text (OCR stand-in) for the knowledge-enhanced fusion.
    pub aux_tokens: Option<Vec<u32>>,
    pub label: usize,
    pub latents: Option<Latents>,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub classes: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Copies of the samples in `split`.
    pub fn subset(&self, split: Split) -> Vec<Sample> {
        self.samples.iter().filter(|s| s.split == split).cloned().collect()
    }

    /// Marks the trailing `dev_frac` and `test_frac` portions as dev and test.
    pub fn assign_splits(&mut self, dev_frac: f64, test_frac: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&dev_frac)
            || !(0.0..=1.0).contains(&test_frac)
            || dev_frac + test_frac > 1.0
        {
            return Err(Error::Parameter(format!(
                "split fractions {dev_frac} + {test_frac} must lie in [0, 1]"
            )));
        }
        let n = self.samples.len();
        let n_test = libm::round(n as f64 * test_frac) as usize;
        let n_dev = libm::round(n as f64 * dev_frac) as usize;
        let n_train = n.saturating_sub(n_test + n_dev);
        for (i, s) in self.samples.iter_mut().enumerate() {
            s.split = if i < n_train {
                Split::Train
            } else if i < n_train + n_dev {
                Split::Dev
            } else {
                Split::Test
            };
        }
        Ok(())
    }
}

fn quantize(v: f64) -> usize {
    let b = libm::floor((v + BIN_WIDTH * BINS as f64 / 2.0) / BIN_WIDTH);
    b.clamp(0.0, (BINS - 1) as f64) as usize
}

/// Token for latent coordinate `dim` holding value `v`.
pub fn token_for(dim: usize, v: f64) -> u32 {
    (dim * BINS + quantize(v)) as u32
}

/// Latent coordinate a token encodes, and whether its bin is non-negative.
pub fn token_meaning(token: u32) -> (usize, bool) {
    let t = token as usize;
    (t / BINS, t % BINS >= BINS / 2)
}

fn label_for(zt0: f64, zi0: f64, classes: usize) -> usize {
    if classes == 2 {
        usize::from((zt0 >= 0.0) != (zi0 >= 0.0))
    } else {
        // (zt0 + zi0) / sqrt(2) is standard normal; bucket its CDF evenly.
        let u = 0.5 * (1.0 + libm::erf((zt0 + zi0) / 2.0));
        ((u * classes as f64) as usize).min(classes - 1)
    }
}

fn render_image(z: &[f64], rng: &mut rng::Rng) -> Image {
    let side = IMAGE_SIDE;
    let half = side / 2;
    let quarter = half / 2;
    let mut pixels = vec![0.0; side * side];
    for y in 0..side {
        for x in 0..side {
            // 2x2 grid of 8x8 patches. Patch q carries latent dims 3q..3q+3 as
            // a horizontal split, a vertical split and their product.
            let q = (y / half) * 2 + x / half;
            let a = if y % half < quarter { 1.0 } else { -1.0 };
            let b = if x % half < quarter { 1.0 } else { -1.0 };
            let signal = a * z[3 * q] + b * z[3 * q + 1] + a * b * z[3 * q + 2];
            let noise: f64 = StandardNormal.sample(rng);
            pixels[y * side + x] = PIXEL_AMPLITUDE * signal + PIXEL_NOISE * noise;
        }
    }
    Image {
        height: side,
        width: side,
        channels: 1,
        pixels,
    }
}

fn generate_one(index: u64, seed: u64, classes: usize) -> Sample {
    let mut rng = rng::stream(seed, GEN_STREAM, index);
    let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
    let shared: Vec<f64> = (0..LATENT_DIM).map(|_| draw()).collect();
    let mut zt = shared.clone();
    let mut zi = shared;
    zt[0] = draw();
    zi[0] = draw();
    let label = label_for(zt[0], zi[0], classes);

    let tokens = (0..SEQ_LEN)
        .map(|j| {
            let dim = j % LATENT_DIM;
            let n: f64 = StandardNormal.sample(&mut rng);
            token_for(dim, zt[dim] + TOKEN_NOISE * n)
        })
        .collect();
    let aux = (0..AUX_LEN)
        .map(|dim| {
            let n: f64 = StandardNormal.sample(&mut rng);
            token_for(dim, zi[dim] + TOKEN_NOISE * n)
        })
        .collect();
    let image = render_image(&zi, &mut rng);

    Sample {
        id: index,
        teacher_id: index,
        tokens,
        image,
        aux_tokens: Some(aux),
        label,
        latents: Some(Latents { text: zt, image: zi }),
        split: Split::Train,
    }
}

/// Deterministic synthetic dataset of `n` samples, all in the train split.
pub fn generate_synthetic(n: usize, seed: u64, classes: usize) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Parameter("need at least one sample".into()));
    }
    if classes < 2 {
        return Err(Error::Parameter(format!("need at least 2 classes, got {classes}")));
    }
    let samples = (0..n as u64).map(|i| generate_one(i, seed, classes)).collect();
    Ok(Dataset { classes, samples })
}

/// Synthetic sentiment lexicon: tokens encoding coordinate 0 carry sentiment
/// +0.8 for non-negative bins and -0.8 otherwise; all others are neutral.
pub fn synthetic_lexicon_entries() -> Vec<(String, f64)> {
    (0..BINS as u32)
        .map(|b| {
            let (_, positive) = token_meaning(b);
            (format!("{b}"), if positive { 0.8 } else { -0.8 })
        })
        .collect()
}

/// Per-split, per-class sample counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetStats {
    pub classes: usize,
    pub splits: Vec<SplitCounts>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitCounts {
    pub split: String,
    pub per_class: Vec<u64>,
}

impl SplitCounts {
    pub fn samples(&self) -> u64 {
        self.per_class.iter().sum()
    }
}

impl DatasetStats {
    pub fn get(&self, split: &str) -> Option<&SplitCounts> {
        self.splits.iter().find(|s| s.split == split)
    }

    /// Column sums over all splits.
    pub fn total(&self) -> SplitCounts {
        let mut per_class = vec![0; self.classes];
        for s in &self.splits {
            for (t, c) in per_class.iter_mut().zip(&s.per_class) {
                *t += c;
            }
        }
        SplitCounts {
            split: "total".into(),
            per_class,
        }
    }
}

pub fn dataset_stats(dataset: &Dataset) -> DatasetStats {
    let splits = Split::ALL
        .iter()
        .map(|&sp| {
            let mut per_class = vec![0u64; dataset.classes];
            for s in dataset.samples.iter().filter(|s| s.split == sp) {
                if let Some(c) = per_class.get_mut(s.label) {
                    *c += 1;
                }
            }
            SplitCounts {
                split: sp.name().into(),
                per_class,
            }
        })
        .collect();
    DatasetStats {
        classes: dataset.classes,
        splits,
    }
}

/// Shuffled mini-batches of sample indices covering every sample exactly
/// once. With `drop_duplicates`, samples sharing a teacher id are deferred to
/// different batches, so some batches may come out short.
pub fn batch_iter(
    samples: &[Sample],
    batch_size: usize,
    seed: u64,
    drop_duplicates: bool,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Parameter("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut rng = rng::seeded(seed);
    order.shuffle(&mut rng);
    if !drop_duplicates {
        return Ok(order.chunks(batch_size).map(|c| c.to_vec()).collect());
    }
    let mut batches: Vec<Vec<usize>> = Vec::new();
    let mut keys: Vec<BTreeSet<u64>> = Vec::new();
    let mut open: Vec<usize> = Vec::new();
    for idx in order {
        let key = samples[idx].teacher_id;
        let slot = open.iter().position(|&b| !keys[b].contains(&key));
        let b = match slot {
            Some(p) => open[p],
            None => {
                batches.push(Vec::with_capacity(batch_size));
                keys.push(BTreeSet::new());
                open.push(batches.len() - 1);
                batches.len() - 1
            }
        };
        batches[b].push(idx);
        keys[b].insert(key);
        if batches[b].len() == batch_size {
            open.retain(|&o| o != b);
        }
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let a = generate_synthetic(50, 7, 2).unwrap();
        let b = generate_synthetic(50, 7, 2).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(50, 8, 2).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn shapes_follow_the_synthetic_world() {
        let d = generate_synthetic(5, 1, 2).unwrap();
        for s in &d.samples {
            assert_eq!(s.tokens.len(), SEQ_LEN);
            assert!(s.tokens.iter().all(|&t| (t as usize) < VOCAB_SIZE));
            assert_eq!(s.image.pixels.len(), IMAGE_SIDE * IMAGE_SIDE);
            assert_eq!(s.aux_tokens.as_ref().unwrap().len(), AUX_LEN);
            assert!(s.label < 2);
        }
    }

    #[test]
    fn label_is_sign_mismatch() {
        let d = generate_synthetic(200, 3, 2).unwrap();
        for s in &d.samples {
            let z = s.latents.as_ref().unwrap();
            let want = (z.text[0] >= 0.0) != (z.image[0] >= 0.0);
            assert_eq!(s.label == 1, want);
            assert_eq!(&z.text[1..], &z.image[1..]);
        }
    }

    #[test]
    fn three_class_labels_cover_all_classes() {
        let d = generate_synthetic(600, 3, 3).unwrap();
        let stats = dataset_stats(&d);
        let train = stats.get("train").unwrap();
        assert!(train.per_class.iter().all(|&c| c > 120), "{train:?}");
    }

    #[test]
    fn invalid_generator_arguments() {
        assert!(generate_synthetic(0, 1, 2).is_err());
        assert!(generate_synthetic(10, 1, 1).is_err());
    }

    #[test]
    fn stats_of_empty_dataset_are_zero() {
        let d = Dataset {
            classes: 2,
            samples: Vec::new(),
        };
        let st = dataset_stats(&d);
        assert!(st.splits.iter().all(|s| s.per_class == [0, 0]));
        assert_eq!(st.total().samples(), 0);
    }

    #[test]
    fn split_counts_sum_to_split_size() {
        let mut d = generate_synthetic(100, 2, 2).unwrap();
        d.assign_splits(0.1, 0.2).unwrap();
        let st = dataset_stats(&d);
        assert_eq!(st.get("train").unwrap().samples(), 70);
        assert_eq!(st.get("dev").unwrap().samples(), 10);
        assert_eq!(st.get("test").unwrap().samples(), 20);
        assert_eq!(st.total().samples(), 100);
    }

    #[test]
    fn batch_larger_than_dataset_gives_one_short_batch() {
        let d = generate_synthetic(5, 1, 2).unwrap();
        for dedup in [false, true] {
            let b = batch_iter(&d.samples, 8, 0, dedup).unwrap();
            assert_eq!(b.len(), 1);
            assert_eq!(b[0].len(), 5);
        }
    }

    #[test]
    fn duplicates_never_share_a_batch() {
        let mut d = generate_synthetic(40, 1, 2).unwrap();
        for (i, s) in d.samples.iter_mut().enumerate() {
            s.teacher_id = (i % 10) as u64;
        }
        let batches = batch_iter(&d.samples, 8, 3, true).unwrap();
        let mut seen = [0; 40];
        for b in &batches {
            let keys: BTreeSet<u64> = b.iter().map(|&i| d.samples[i].teacher_id).collect();
            assert_eq!(keys.len(), b.len());
            for &i in b {
                seen[i] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn zero_batch_size_is_rejected() {
        let d = generate_synthetic(5, 1, 2).unwrap();
        assert!(batch_iter(&d.samples, 0, 0, false).is_err());
    }
}
