//! Subcommand implementations. Each writes its outputs and returns what it
//! computed so callers and tests can inspect it.

use std::fs;
use std::path::{Path, PathBuf};

use clfa_core::analysis::heatmap;
use clfa_core::data::{dataset_stats, generate_synthetic, synthetic_lexicon_entries, Dataset, DatasetStats, Sample, Split, LATENT_DIM};
use clfa_core::encoders::{SyntheticTeacher, Teacher};
use clfa_core::fusion::SentimentLexicon;
use clfa_core::metrics::MetricsReport;
use clfa_core::model::ClfaModel;
use clfa_core::train::{evaluate, train, EpochRecord};
use clfa_core::Tensor;

use crate::checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
use crate::config::{DataSource, RunConfig, TeacherKind};
use crate::dataset::{read_dataset, write_dataset};
use crate::error::{CliError, Result};
use crate::lexicon::{read_lexicon, write_lexicon};
use crate::report::{write_heatmap, write_history, write_metrics, write_sweep, SweepRow};

pub const DEV_FRACTION: f64 = 0.1;
pub const TEST_FRACTION: f64 = 0.1;

/// Generated synthetic data with its 80/10/10 split assigned.
pub fn synthetic_dataset(n: usize, seed: u64, classes: usize) -> Result<Dataset> {
    let mut data = generate_synthetic(n, seed, classes)?;
    data.assign_splits(DEV_FRACTION, TEST_FRACTION)?;
    Ok(data)
}

#[derive(Clone, Debug)]
pub struct GenDataArgs {
    pub out: PathBuf,
    pub n: usize,
    pub seed: u64,
    pub classes: usize,
    pub teacher_width: usize,
}

/// Writes `data.clfa` with its sidecars and `lexicon.tsv` into `args.out`.
pub fn gen_data(args: &GenDataArgs) -> Result<DatasetStats> {
    if args.classes < 2 {
        return Err(CliError::Config(format!("--classes must be at least 2, got {}", args.classes)));
    }
    fs::create_dir_all(&args.out).map_err(|e| CliError::io(&args.out, e))?;
    let data = synthetic_dataset(args.n, args.seed, args.classes)?;
    let teacher = Teacher::Synthetic(SyntheticTeacher::new(args.teacher_width, LATENT_DIM, args.seed));
    write_dataset(&args.out.join("data.clfa"), &data, &teacher)?;
    write_lexicon(&args.out.join("lexicon.tsv"), &SentimentLexicon::new(synthetic_lexicon_entries())?)?;
    Ok(dataset_stats(&data))
}

/// Everything a training run needs, resolved from a config.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub dataset: Dataset,
    pub teacher: Teacher,
    pub lexicon: Option<SentimentLexicon>,
}

pub fn prepare(config: &RunConfig) -> Result<Prepared> {
    config.validate()?;
    let (dataset, teacher) = match &config.data {
        DataSource::Synthetic { n, seed } => {
            let data = synthetic_dataset(*n, *seed, config.model.classes)?;
            let teacher = SyntheticTeacher::new(config.model.teacher_width, LATENT_DIM, *seed);
            (data, Teacher::Synthetic(teacher))
        }
        DataSource::Fixture(path) => {
            let loaded = read_dataset(path)?;
            if loaded.dataset.classes != config.model.classes {
                return Err(CliError::Config(format!(
                    "config says {} classes but {} has {}",
                    config.model.classes,
                    path.display(),
                    loaded.dataset.classes
                )));
            }
            let teacher = match config.teacher {
                TeacherKind::Fixture => loaded.fixture.teacher()?,
                // Never queried: validation only allows this pairing without alignment.
                TeacherKind::Synthetic => {
                    Teacher::Synthetic(SyntheticTeacher::new(config.model.teacher_width, LATENT_DIM, 0))
                }
            };
            (loaded.dataset, teacher)
        }
    };
    let lexicon = config.lexicon.as_deref().map(read_lexicon).transpose()?;
    Ok(Prepared {
        dataset,
        teacher,
        lexicon,
    })
}

#[derive(Clone, Debug)]
pub struct TrainRun {
    pub model: ClfaModel,
    pub history: Vec<EpochRecord>,
    pub lexicon: Option<SentimentLexicon>,
    pub dataset: Dataset,
}

/// Trains on the train split. Per-epoch metrics are measured on the dev split
/// when it is non-empty.
pub fn run_training(config: &RunConfig) -> Result<TrainRun> {
    let prepared = prepare(config)?;
    let train_set = prepared.dataset.subset(Split::Train);
    let dev = prepared.dataset.subset(Split::Dev);
    let model = ClfaModel::new(config.model, prepared.lexicon.clone(), config.train.seed)?;
    let eval = (!dev.is_empty()).then_some(dev.as_slice());
    let out = train(model, prepared.teacher, &train_set, eval, config.train)?;
    Ok(TrainRun {
        model: out.model,
        history: out.history,
        lexicon: prepared.lexicon,
        dataset: prepared.dataset,
    })
}

pub const CHECKPOINT_FILE: &str = "checkpoint.clfc";
pub const HISTORY_FILE: &str = "history.csv";

/// Trains from a config file, writing the checkpoint and history CSV into the
/// configured output directory.
pub fn cmd_train(config_path: &Path) -> Result<TrainRun> {
    let config = RunConfig::load(config_path)?;
    train_to_dir(&config)
}

pub fn train_to_dir(config: &RunConfig) -> Result<TrainRun> {
    let run = run_training(config)?;
    let dir = &config.out_dir;
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let ck = Checkpoint::from_model(config, &run.model, run.lexicon.as_ref());
    write_checkpoint(&dir.join(CHECKPOINT_FILE), &ck)?;
    write_history(&dir.join(HISTORY_FILE), &run.history)?;
    Ok(run)
}

fn split_samples(data: &Path, split: Split) -> Result<Vec<Sample>> {
    let samples = read_dataset(data)?.dataset.subset(split);
    if samples.is_empty() {
        return Err(CliError::Config(format!(
            "{} has no {} samples",
            data.display(),
            split.name()
        )));
    }
    Ok(samples)
}

/// Metrics of a checkpoint on one split, optionally written as CSV.
pub fn cmd_eval(checkpoint: &Path, data: &Path, split: Split, out: Option<&Path>) -> Result<MetricsReport> {
    let (_, model) = read_checkpoint(checkpoint)?.restore()?;
    let samples = split_samples(data, split)?;
    let report = evaluate(&model, &samples)?;
    if let Some(out) = out {
        write_metrics(out, &report)?;
    }
    Ok(report)
}

/// Text-image cosine heatmap for the first `batch` samples of a split.
pub fn cmd_heatmap(checkpoint: &Path, data: &Path, split: Split, batch: usize, out: &Path) -> Result<Tensor> {
    if batch == 0 {
        return Err(CliError::Config("--batch must be at least 1".into()));
    }
    let (_, model) = read_checkpoint(checkpoint)?.restore()?;
    let samples = split_samples(data, split)?;
    let n = batch.min(samples.len());
    let h = heatmap(&model, &samples[..n])?;
    write_heatmap(out, &h)?;
    Ok(h)
}

/// Parses a comma-separated list of α values, keeping each spelling.
pub fn parse_alpha_values(list: &str) -> Result<Vec<(String, f64)>> {
    list.split(',')
        .map(|s| {
            let s = s.trim();
            match s.parse::<f64>() {
                Ok(v) if v.is_finite() && v >= 0.0 => Ok((s.to_string(), v)),
                _ => Err(CliError::Config(format!("invalid alpha value {s:?}"))),
            }
        })
        .collect()
}

pub fn parse_seeds(list: &str) -> Result<Vec<u64>> {
    list.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| CliError::Config(format!("invalid seed {:?}", s.trim())))
        })
        .collect()
}

/// Trains once per (α, seed) pair, sequentially, and reports dev-split
/// metrics.
pub fn cmd_sweep_alpha(base: &RunConfig, values: &[(String, f64)], seeds: &[u64], out: &Path) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(values.len() * seeds.len());
    for (spelling, alpha) in values {
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.train.alpha = *alpha;
            cfg.train.seed = seed;
            let run = run_training(&cfg)?;
            let dev = run.dataset.subset(Split::Dev);
            if dev.is_empty() {
                return Err(CliError::Config("the sweep needs a non-empty dev split".into()));
            }
            rows.push(SweepRow {
                alpha: spelling.clone(),
                seed,
                metrics: evaluate(&run.model, &dev)?,
            });
        }
    }
    write_sweep(out, &rows)?;
    Ok(rows)
}
