//! `labels.csv` sidecar: `id,split,label,aux` with aux as space-separated
//! token ids (empty when absent).

use std::path::Path;

use clfa_core::data::Split;

use crate::error::{CliError, FormatError, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelRow {
    pub id: u64,
    pub split: Split,
    pub label: usize,
    pub aux: Option<Vec<u32>>,
}

pub fn write_labels(path: &Path, rows: &[LabelRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "split", "label", "aux"])?;
    for r in rows {
        let aux = r
            .aux
            .as_ref()
            .map(|a| a.iter().map(u32::to_string).collect::<Vec<_>>().join(" "))
            .unwrap_or_default();
        w.write_record([r.id.to_string(), r.split.name().to_string(), r.label.to_string(), aux])?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_labels(path: &Path) -> Result<Vec<LabelRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["id", "split", "label", "aux"] {
        return Err(CliError::in_file(
            path,
            FormatError::syntax(1, "expected header id,split,label,aux"),
        ));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let bad = |what: &str| CliError::in_file(path, FormatError::syntax(line, format!("invalid {what}")));
        let id = rec[0].parse().map_err(|_| bad("id"))?;
        let split = Split::parse(&rec[1]).ok_or_else(|| bad("split"))?;
        let label = rec[2].parse().map_err(|_| bad("label"))?;
        let aux = if rec[3].trim().is_empty() {
            None
        } else {
            Some(
                rec[3]
                    .split_whitespace()
                    .map(str::parse)
                    .collect::<Result<Vec<u32>, _>>()
                    .map_err(|_| bad("aux token"))?,
            )
        };
        rows.push(LabelRow { id, split, label, aux });
    }
    Ok(rows)
}
