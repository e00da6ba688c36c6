//! Run configuration: UTF-8 `key = value` lines, `#` starts a comment.
//!
//! Relative paths are resolved against the directory of the config file.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clfa_core::fusion::FusionVariant;
use clfa_core::model::ModelConfig;
use clfa_core::train::TrainConfig;

use crate::error::{CliError, FormatError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TeacherKind {
    /// Linear maps of the generator latents; requires synthetic data.
    Synthetic,
    /// Embeddings stored in the fixture file.
    Fixture,
}

impl TeacherKind {
    pub fn name(self) -> &'static str {
        match self {
            TeacherKind::Synthetic => "synthetic",
            TeacherKind::Fixture => "fixture",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    /// Generated in memory and split 80/10/10.
    Synthetic { n: usize, seed: u64 },
    Fixture(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub teacher: TeacherKind,
    pub data: DataSource,
    pub lexicon: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            model: ModelConfig::default(),
            teacher: TeacherKind::Synthetic,
            data: DataSource::Synthetic { n: 2000, seed: 7 },
            lexicon: None,
            out_dir: PathBuf::from("."),
        }
    }
}

pub const KEYS: &[&str] = &[
    "alpha",
    "tau",
    "batch_size",
    "lr",
    "epochs",
    "warmup",
    "weight_decay",
    "dropout",
    "seed",
    "align",
    "drop_duplicates",
    "fusion",
    "fusion_layers",
    "classes",
    "vocab_size",
    "n_max",
    "width",
    "encoder_layers",
    "ffn_hidden",
    "positional",
    "patch",
    "channels",
    "max_patches",
    "proj_hidden",
    "teacher_width",
    "classifier_hidden",
    "teacher",
    "data",
    "synthetic_n",
    "synthetic_seed",
    "lexicon",
    "out_dir",
];

fn parse_value<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T, FormatError> {
    value
        .parse()
        .map_err(|_| FormatError::syntax(line, format!("invalid value {value:?} for {key}")))
}

fn path_value(base: Option<&Path>, value: &str) -> PathBuf {
    let p = PathBuf::from(value);
    match base {
        Some(dir) if p.is_relative() => dir.join(p),
        _ => p,
    }
}

impl RunConfig {
    /// Parses config text. Relative paths are joined onto `base` when given.
    pub fn parse(text: &str, base: Option<&Path>) -> Result<Self, FormatError> {
        let mut cfg = RunConfig::default();
        let mut synthetic_n = 2000;
        let mut synthetic_seed = 7;
        let mut data_path = None;
        let mut seen = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(FormatError::syntax(line, format!("expected `key = value`, got {content:?}")));
            };
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(FormatError::syntax(
                    line,
                    format!("unknown key {key:?}; valid keys: {}", KEYS.join(", ")),
                ));
            }
            if seen.contains(&key) {
                return Err(FormatError::syntax(line, format!("duplicate key {key:?}")));
            }
            seen.push(key);
            let t = &mut cfg.train;
            let m = &mut cfg.model;
            match key {
                "alpha" => t.alpha = parse_value(line, key, value)?,
                "tau" => t.tau = parse_value(line, key, value)?,
                "batch_size" => t.batch_size = parse_value(line, key, value)?,
                "lr" => t.lr = parse_value(line, key, value)?,
                "epochs" => t.epochs = parse_value(line, key, value)?,
                "warmup" => t.warmup = parse_value(line, key, value)?,
                "weight_decay" => t.weight_decay = parse_value(line, key, value)?,
                "dropout" => t.dropout = parse_value(line, key, value)?,
                "seed" => t.seed = parse_value(line, key, value)?,
                "align" => t.align = parse_value(line, key, value)?,
                "drop_duplicates" => t.drop_duplicates = parse_value(line, key, value)?,
                "fusion" => {
                    m.fusion = FusionVariant::parse(value).ok_or_else(|| {
                        FormatError::syntax(
                            line,
                            format!(
                                "unknown fusion {value:?}; expected concat, co_attention, cross_attention or knowledge_cross_attention"
                            ),
                        )
                    })?
                }
                "fusion_layers" => m.fusion_layers = parse_value(line, key, value)?,
                "classes" => m.classes = parse_value(line, key, value)?,
                "vocab_size" => m.vocab_size = parse_value(line, key, value)?,
                "n_max" => m.n_max = parse_value(line, key, value)?,
                "width" => m.encoder.width = parse_value(line, key, value)?,
                "encoder_layers" => m.encoder.layers = parse_value(line, key, value)?,
                "ffn_hidden" => m.encoder.ffn_hidden = parse_value(line, key, value)?,
                "positional" => m.encoder.positional = parse_value(line, key, value)?,
                "patch" => m.patch = parse_value(line, key, value)?,
                "channels" => m.channels = parse_value(line, key, value)?,
                "max_patches" => m.max_patches = parse_value(line, key, value)?,
                "proj_hidden" => m.proj_hidden = parse_value(line, key, value)?,
                "teacher_width" => m.teacher_width = parse_value(line, key, value)?,
                "classifier_hidden" => m.classifier_hidden = parse_value(line, key, value)?,
                "teacher" => {
                    cfg.teacher = match value {
                        "synthetic" => TeacherKind::Synthetic,
                        "fixture" => TeacherKind::Fixture,
                        _ => {
                            return Err(FormatError::syntax(
                                line,
                                format!("unknown teacher {value:?}; expected synthetic or fixture"),
                            ))
                        }
                    }
                }
                "data" => {
                    data_path = (value != "synthetic").then(|| path_value(base, value));
                }
                "synthetic_n" => synthetic_n = parse_value(line, key, value)?,
                "synthetic_seed" => synthetic_seed = parse_value(line, key, value)?,
                "lexicon" => cfg.lexicon = Some(path_value(base, value)),
                "out_dir" => cfg.out_dir = path_value(base, value),
                _ => unreachable!("key list and match arms agree"),
            }
        }
        cfg.data = match data_path {
            Some(p) => DataSource::Fixture(p),
            None => DataSource::Synthetic {
                n: synthetic_n,
                seed: synthetic_seed,
            },
        };
        if !seen.contains(&"out_dir") {
            if let Some(dir) = base {
                cfg.out_dir = dir.to_path_buf();
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let cfg = Self::parse(&text, Some(base)).map_err(|e| CliError::in_file(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Cross-field consistency on top of the core validators.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.model.validate()?;
        if self.model.fusion == FusionVariant::KnowledgeCrossAttention && self.lexicon.is_none() {
            return Err(CliError::Config(
                "the knowledge_cross_attention fusion requires a lexicon".into(),
            ));
        }
        match (&self.data, self.teacher) {
            (DataSource::Fixture(_), TeacherKind::Synthetic) if self.train.align => {
                Err(CliError::Config(
                    "the synthetic teacher needs generator latents; use teacher = fixture with fixture data".into(),
                ))
            }
            (DataSource::Synthetic { .. }, TeacherKind::Fixture) => Err(CliError::Config(
                "teacher = fixture requires data to name a fixture file".into(),
            )),
            (DataSource::Synthetic { n, .. }, _) if *n == 0 => {
                Err(CliError::Config("synthetic_n must be at least 1".into()))
            }
            _ => Ok(()),
        }
    }

    /// Canonical text form; `parse(to_text())` reproduces the config.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let m = &self.model;
        let mut s = String::new();
        let mut put = |k: &str, v: &dyn std::fmt::Display| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("alpha", &t.alpha);
        put("tau", &t.tau);
        put("batch_size", &t.batch_size);
        put("lr", &t.lr);
        put("epochs", &t.epochs);
        put("warmup", &t.warmup);
        put("weight_decay", &t.weight_decay);
        put("dropout", &t.dropout);
        put("seed", &t.seed);
        put("align", &t.align);
        put("drop_duplicates", &t.drop_duplicates);
        put("fusion", &m.fusion.name());
        put("fusion_layers", &m.fusion_layers);
        put("classes", &m.classes);
        put("vocab_size", &m.vocab_size);
        put("n_max", &m.n_max);
        put("width", &m.encoder.width);
        put("encoder_layers", &m.encoder.layers);
        put("ffn_hidden", &m.encoder.ffn_hidden);
        put("positional", &m.encoder.positional);
        put("patch", &m.patch);
        put("channels", &m.channels);
        put("max_patches", &m.max_patches);
        put("proj_hidden", &m.proj_hidden);
        put("teacher_width", &m.teacher_width);
        put("classifier_hidden", &m.classifier_hidden);
        put("teacher", &self.teacher.name());
        match &self.data {
            DataSource::Synthetic { n, seed } => {
                put("data", &"synthetic");
                put("synthetic_n", n);
                put("synthetic_seed", seed);
            }
            DataSource::Fixture(p) => put("data", &p.display()),
        }
        if let Some(p) = &self.lexicon {
            put("lexicon", &p.display());
        }
        put("out_dir", &self.out_dir.display());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_reference_hyperparameters() {
        let c = RunConfig::parse("", None).unwrap();
        assert_eq!(c.train.alpha, 1.0);
        assert_eq!(c.train.tau, 0.1);
        assert_eq!(c.train.batch_size, 8);
        assert_eq!(c.train.epochs, 15);
        assert_eq!(c.train.dropout, 0.1);
        assert_eq!(c.train.warmup, 0.1);
        assert_eq!(c.train.weight_decay, 0.01);
        assert_eq!(c.model.fusion, FusionVariant::CrossAttention);
        assert_eq!(c.model.fusion_layers, 3);
        assert_eq!(c.model, ModelConfig::default());
    }

    #[test]
    fn comments_blank_lines_and_paths() {
        let text = "# run\n\nalpha = 0   # off\ndata = data/d.clfa\nteacher = fixture\nlexicon = /abs/lex.tsv\n";
        let c = RunConfig::parse(text, Some(Path::new("/runs/a"))).unwrap();
        assert_eq!(c.train.alpha, 0.0);
        assert_eq!(c.data, DataSource::Fixture(PathBuf::from("/runs/a/data/d.clfa")));
        assert_eq!(c.lexicon, Some(PathBuf::from("/abs/lex.tsv")));
        assert_eq!(c.out_dir, PathBuf::from("/runs/a"));
    }

    #[test]
    fn unknown_key_lists_valid_keys() {
        let e = RunConfig::parse("alpah = 1", None).unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("alpah") && msg.contains("alpha") && msg.contains("out_dir"), "{msg}");
        assert!(matches!(e, FormatError::Syntax { line: 1, .. }));
    }

    #[test]
    fn malformed_lines() {
        for bad in ["alpha", "alpha = x", "fusion = mlp", "alpha = 1\nalpha = 2", "teacher = clip"] {
            assert!(RunConfig::parse(bad, None).is_err(), "{bad}");
        }
    }

    #[test]
    fn text_round_trip() {
        let text = "alpha = 0.5\nfusion = knowledge_cross_attention\nlexicon = /x/lex.tsv\nseed = 4\nsynthetic_n = 300\nout_dir = /tmp/o\n";
        let c = RunConfig::parse(text, None).unwrap();
        let back = RunConfig::parse(&c.to_text(), None).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_text(), c.to_text());
    }

    #[test]
    fn consistency_rules() {
        let c = RunConfig::parse("fusion = knowledge_cross_attention", None).unwrap();
        assert!(c.validate().is_err());
        let c = RunConfig::parse("data = d.clfa", None).unwrap();
        assert!(c.validate().is_err());
        let c = RunConfig::parse("teacher = fixture", None).unwrap();
        assert!(c.validate().is_err());
        let c = RunConfig::parse("data = d.clfa\nteacher = fixture", None).unwrap();
        assert!(c.validate().is_ok());
    }
}
