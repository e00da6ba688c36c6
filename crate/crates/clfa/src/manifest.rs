//! Sidecar manifest with per-split, per-class counts.
//!
//! ```text
//! classes = 2
//! train.samples = 19816
//! train.class0 = 11174
//! train.class1 = 8642
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use clfa_core::data::{DatasetStats, Split, SplitCounts};

use crate::error::{CliError, FormatError, Result};

pub fn manifest_text(stats: &DatasetStats) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "classes = {}", stats.classes);
    for split in &stats.splits {
        let _ = writeln!(s, "{}.samples = {}", split.split, split.samples());
        for (k, c) in split.per_class.iter().enumerate() {
            let _ = writeln!(s, "{}.class{k} = {c}", split.split);
        }
    }
    s
}

pub fn parse_manifest(text: &str) -> Result<DatasetStats, FormatError> {
    let mut entries = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| FormatError::syntax(i + 1, format!("expected `key = value`, got {line:?}")))?;
        let v: u64 = v
            .trim()
            .parse()
            .map_err(|_| FormatError::syntax(i + 1, format!("count {:?} is not a non-negative integer", v.trim())))?;
        if entries.insert(k.trim().to_string(), (i + 1, v)).is_some() {
            return Err(FormatError::syntax(i + 1, format!("duplicate key {:?}", k.trim())));
        }
    }
    let classes = entries
        .remove("classes")
        .ok_or_else(|| FormatError::Inconsistent("manifest lacks `classes`".into()))?
        .1 as usize;
    let mut splits = Vec::new();
    for split in Split::ALL {
        let name = split.name();
        let Some((_, samples)) = entries.remove(&format!("{name}.samples")) else {
            continue;
        };
        let mut per_class = Vec::with_capacity(classes);
        for k in 0..classes {
            let (_, c) = entries
                .remove(&format!("{name}.class{k}"))
                .ok_or_else(|| FormatError::Inconsistent(format!("manifest lacks {name}.class{k}")))?;
            per_class.push(c);
        }
        let counts = SplitCounts {
            split: name.to_string(),
            per_class,
        };
        if counts.samples() != samples {
            return Err(FormatError::Inconsistent(format!(
                "{name}.samples = {samples} but the class counts sum to {}",
                counts.samples()
            )));
        }
        splits.push(counts);
    }
    if let Some((key, (line, _))) = entries.into_iter().next() {
        return Err(FormatError::syntax(line, format!("unexpected key {key:?}")));
    }
    Ok(DatasetStats { classes, splits })
}

pub fn write_manifest(path: &Path, stats: &DatasetStats) -> Result<()> {
    fs::write(path, manifest_text(stats)).map_err(|e| CliError::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<DatasetStats> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_manifest(&text).map_err(|e| CliError::in_file(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let stats = DatasetStats {
            classes: 3,
            splits: vec![
                SplitCounts {
                    split: "train".into(),
                    per_class: vec![4, 0, 9],
                },
                SplitCounts {
                    split: "test".into(),
                    per_class: vec![1, 1, 1],
                },
            ],
        };
        let text = manifest_text(&stats);
        assert_eq!(parse_manifest(&text).unwrap(), stats);
    }

    #[test]
    fn rejects_bad_sums_and_keys() {
        assert!(parse_manifest("classes = 2\ntrain.samples = 3\ntrain.class0 = 1\ntrain.class1 = 1").is_err());
        assert!(parse_manifest("classes = 2\ntrain.samples = 2\ntrain.class0 = 1\ntrain.class1 = 1\nfoo = 1").is_err());
        assert!(parse_manifest("train.samples = 0").is_err());
        assert!(parse_manifest("classes = -1").is_err());
    }
}
