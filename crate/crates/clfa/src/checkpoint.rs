//! Model checkpoints, framed like the fixture format.
//!
//! ```text
//! "CLFC" | u8 version = 1 | u32 len | config text | u32 len | lexicon text
//! u32 P | P x { u32 len | name | u32 rank | rank x u32 dim | numel x f64 }
//! ```

use std::fs;
use std::path::Path;

use clfa_core::model::ClfaModel;
use clfa_core::Tensor;

use crate::config::RunConfig;
use crate::error::{CliError, FormatError, Result};
use crate::lexicon::{lexicon_text, parse_lexicon};
use crate::wire::Reader;

pub const MAGIC: &[u8; 4] = b"CLFC";
pub const VERSION: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Run config in its canonical text form.
    pub config: String,
    /// Lexicon in file form; empty when the model has none.
    pub lexicon: String,
    pub params: Vec<(String, Tensor)>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<(), FormatError> {
    let v = u32::try_from(v).map_err(|_| FormatError::Inconsistent(format!("{v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<(), FormatError> {
    put_u32(out, s.len())?;
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

fn get_str(r: &mut Reader, what: &'static str) -> Result<String, FormatError> {
    let n = r.u32(what)? as usize;
    let bytes = r.bytes(n, what)?;
    String::from_utf8(bytes.to_vec()).map_err(|_| FormatError::Inconsistent(format!("{what} is not UTF-8")))
}

impl Checkpoint {
    pub fn from_model(config: &RunConfig, model: &ClfaModel, lexicon: Option<&clfa_core::fusion::SentimentLexicon>) -> Self {
        Checkpoint {
            config: config.to_text(),
            lexicon: lexicon.map(lexicon_text).unwrap_or_default(),
            params: model.params.iter().map(|(_, p)| (p.name.clone(), p.value.clone())).collect(),
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>, FormatError> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        put_str(&mut out, &self.config)?;
        put_str(&mut out, &self.lexicon)?;
        put_u32(&mut out, self.params.len())?;
        for (name, t) in &self.params {
            if !t.is_finite() {
                return Err(FormatError::Inconsistent(format!("parameter {name} is not finite")));
            }
            put_str(&mut out, name)?;
            put_u32(&mut out, t.shape().len())?;
            for &d in t.shape() {
                put_u32(&mut out, d)?;
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader::new(bytes);
        if r.bytes(4, "magic")? != MAGIC {
            return Err(FormatError::BadMagic);
        }
        let version = r.u8("version")?;
        if version != VERSION {
            return Err(FormatError::Version(version));
        }
        let config = get_str(&mut r, "config")?;
        let lexicon = get_str(&mut r, "lexicon")?;
        let n = r.u32("parameter count")?;
        let mut params = Vec::new();
        for _ in 0..n {
            let name = get_str(&mut r, "parameter name")?;
            let rank = r.u32("rank")? as usize;
            let shape: Vec<usize> = r.u32s(rank, "shape")?.into_iter().map(|d| d as usize).collect();
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or(FormatError::Truncated("parameter data"))?;
            let data = r.f64s(numel, "parameter data")?;
            if data.iter().any(|v| !v.is_finite()) {
                return Err(FormatError::Inconsistent(format!("parameter {name} is not finite")));
            }
            let t = Tensor::new(shape, data).map_err(|e| FormatError::Inconsistent(e.to_string()))?;
            params.push((name, t));
        }
        if r.remaining() != 0 {
            return Err(FormatError::TrailingBytes(r.remaining()));
        }
        Ok(Checkpoint {
            config,
            lexicon,
            params,
        })
    }

    /// Rebuilds the config and model this checkpoint was taken from.
    pub fn restore(&self) -> Result<(RunConfig, ClfaModel)> {
        let config = RunConfig::parse(&self.config, None)?;
        let lexicon = if self.lexicon.is_empty() {
            None
        } else {
            Some(parse_lexicon(&self.lexicon)?)
        };
        let mut model = ClfaModel::new(config.model, lexicon, config.train.seed)?;
        if self.params.len() != model.params.len() {
            return Err(FormatError::Inconsistent(format!(
                "checkpoint holds {} parameters, model expects {}",
                self.params.len(),
                model.params.len()
            ))
            .into());
        }
        for (name, value) in &self.params {
            let id = model
                .params
                .find(name)
                .ok_or_else(|| FormatError::Inconsistent(format!("unknown parameter {name}")))?;
            model.params.set(id, value.clone())?;
        }
        Ok((config, model))
    }
}

pub fn write_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let bytes = checkpoint.encode()?;
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Checkpoint::decode(&bytes).map_err(|e| CliError::in_file(path, e))
}
