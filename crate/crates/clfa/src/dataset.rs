//! Datasets on disk: a fixture file plus `<stem>.labels.csv` and
//! `<stem>.manifest` sidecars.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use clfa_core::data::{dataset_stats, Dataset, Sample};
use clfa_core::encoders::Teacher;

use crate::error::{CliError, FormatError, Result};
use crate::fixture::{fixture_from_samples, read_fixture, write_fixture, FixtureFile};
use crate::labels::{read_labels, write_labels, LabelRow};
use crate::manifest::{read_manifest, write_manifest};

pub fn labels_path(fixture: &Path) -> PathBuf {
    fixture.with_extension("labels.csv")
}

pub fn manifest_path(fixture: &Path) -> PathBuf {
    fixture.with_extension("manifest")
}

/// Writes the fixture (teacher embeddings and raw inputs) and both sidecars.
pub fn write_dataset(fixture: &Path, dataset: &Dataset, teacher: &Teacher) -> Result<FixtureFile> {
    let file = fixture_from_samples(&dataset.samples, teacher)?;
    write_fixture(fixture, &file)?;
    let rows: Vec<LabelRow> = dataset
        .samples
        .iter()
        .map(|s| LabelRow {
            id: s.id,
            split: s.split,
            label: s.label,
            aux: s.aux_tokens.clone(),
        })
        .collect();
    write_labels(&labels_path(fixture), &rows)?;
    write_manifest(&manifest_path(fixture), &dataset_stats(dataset))?;
    Ok(file)
}

#[derive(Clone, Debug)]
pub struct LoadedData {
    pub dataset: Dataset,
    pub fixture: FixtureFile,
}

/// Reads a fixture with raw inputs and joins it with its sidecars. Samples
/// with bit-identical teacher embeddings share a teacher id.
pub fn read_dataset(path: &Path) -> Result<LoadedData> {
    let fixture = read_fixture(path)?;
    if !fixture.has_raw() {
        return Err(CliError::Config(format!(
            "{} carries no raw inputs, so there is nothing for the students to read",
            path.display()
        )));
    }
    let stats = read_manifest(&manifest_path(path))?;
    let lpath = labels_path(path);
    let mut labels: HashMap<u64, LabelRow> = HashMap::new();
    for row in read_labels(&lpath)? {
        let id = row.id;
        if labels.insert(id, row).is_some() {
            return Err(CliError::in_file(&lpath, FormatError::Inconsistent(format!("duplicate id {id}"))));
        }
    }
    if labels.len() != fixture.records.len() {
        return Err(CliError::in_file(
            &lpath,
            FormatError::Inconsistent(format!(
                "{} label rows for {} fixture records",
                labels.len(),
                fixture.records.len()
            )),
        ));
    }
    let mut first_seen: HashMap<Vec<u32>, u64> = HashMap::new();
    let mut samples = Vec::with_capacity(fixture.records.len());
    for (i, rec) in fixture.records.iter().enumerate() {
        let row = labels.remove(&rec.id).ok_or_else(|| {
            CliError::in_file(&lpath, FormatError::Inconsistent(format!("no label for id {}", rec.id)))
        })?;
        if row.label >= stats.classes {
            return Err(clfa_core::Error::LabelRange {
                label: row.label,
                classes: stats.classes,
            }
            .into());
        }
        let key: Vec<u32> = rec.text.iter().chain(&rec.image).map(|v| v.to_bits()).collect();
        let teacher_id = *first_seen.entry(key).or_insert(rec.id);
        let raw = rec.raw.as_ref().expect("raw flag checked");
        samples.push(Sample {
            id: rec.id,
            teacher_id,
            tokens: raw.tokens.clone(),
            image: fixture.image(i)?.expect("raw flag checked"),
            aux_tokens: row.aux,
            label: row.label,
            latents: None,
            split: row.split,
        });
    }
    let dataset = Dataset {
        classes: stats.classes,
        samples,
    };
    let actual = dataset_stats(&dataset);
    if actual != stats {
        return Err(CliError::in_file(
            &manifest_path(path),
            FormatError::Inconsistent("manifest counts disagree with the labels".into()),
        ));
    }
    Ok(LoadedData { dataset, fixture })
}
