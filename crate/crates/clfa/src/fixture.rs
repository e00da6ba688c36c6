//! Binary teacher-fixture format.
//!
//! Little-endian throughout:
//!
//! ```text
//! "CLFA" | u8 version = 1 | u32 N | u32 d_C | u8 flags (bit0: raw inputs)
//! N x { u64 id | d_C x f32 text | d_C x f32 image
//!       [ u32 T | T x u32 token | u32 H | u32 W | u32 C | H*W*C x f32 pixel ] }
//! ```
//!
//! Floats are stored as `f32` and widened to `f64` when handed to the model.

use std::fs;
use std::path::Path;

use clfa_core::data::{Image, Sample};
use clfa_core::encoders::{FixtureTeacher, Teacher};

use crate::error::{CliError, FormatError};
use crate::wire::Reader;

pub const MAGIC: &[u8; 4] = b"CLFA";
pub const VERSION: u8 = 1;
pub const FLAG_RAW: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct RawInput {
    pub tokens: Vec<u32>,
    pub height: u32,
    pub width: u32,
    pub channels: u32,
    pub pixels: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FixtureRecord {
    pub id: u64,
    pub text: Vec<f32>,
    pub image: Vec<f32>,
    pub raw: Option<RawInput>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FixtureFile {
    pub width: u32,
    pub records: Vec<FixtureRecord>,
}

impl FixtureFile {
    pub fn has_raw(&self) -> bool {
        self.records.first().is_some_and(|r| r.raw.is_some())
    }

    fn validate(&self) -> Result<(), FormatError> {
        let raw = self.has_raw();
        for r in &self.records {
            if r.text.len() != self.width as usize || r.image.len() != self.width as usize {
                return Err(FormatError::Inconsistent(format!(
                    "record {} has widths {}/{} but the file declares {}",
                    r.id,
                    r.text.len(),
                    r.image.len(),
                    self.width
                )));
            }
            if r.raw.is_some() != raw {
                return Err(FormatError::Inconsistent(
                    "raw inputs must be present for all records or none".into(),
                ));
            }
            if let Some(raw) = &r.raw {
                let n = raw.height as usize * raw.width as usize * raw.channels as usize;
                if raw.pixels.len() != n {
                    return Err(FormatError::Inconsistent(format!(
                        "record {} declares {n} pixels but holds {}",
                        r.id,
                        raw.pixels.len()
                    )));
                }
            }
            let finite = r.text.iter().chain(&r.image).all(|v| v.is_finite())
                && r.raw.as_ref().is_none_or(|raw| raw.pixels.iter().all(|v| v.is_finite()));
            if !finite {
                return Err(FormatError::NonFinite { id: r.id });
            }
        }
        Ok(())
    }

    pub fn encode(&self) -> Result<Vec<u8>, FormatError> {
        self.validate()?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.push(if self.has_raw() { FLAG_RAW } else { 0 });
        for r in &self.records {
            out.extend_from_slice(&r.id.to_le_bytes());
            for v in r.text.iter().chain(&r.image) {
                out.extend_from_slice(&v.to_le_bytes());
            }
            if let Some(raw) = &r.raw {
                out.extend_from_slice(&(raw.tokens.len() as u32).to_le_bytes());
                for t in &raw.tokens {
                    out.extend_from_slice(&t.to_le_bytes());
                }
                for d in [raw.height, raw.width, raw.channels] {
                    out.extend_from_slice(&d.to_le_bytes());
                }
                for p in &raw.pixels {
                    out.extend_from_slice(&p.to_le_bytes());
                }
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
        let n = r.u32("sample count")?;
        let width = r.u32("teacher width")?;
        let flags = r.u8("flags")?;
        if flags & !FLAG_RAW != 0 {
            return Err(FormatError::Inconsistent(format!("unknown flag bits {flags:#04x}")));
        }
        let raw = flags & FLAG_RAW != 0;
        let mut records = Vec::with_capacity((n as usize).min(r.remaining() / 8 + 1));
        for _ in 0..n {
            let id = r.u64("record id")?;
            let text = r.f32s(width as usize, "text embedding")?;
            let image = r.f32s(width as usize, "image embedding")?;
            if !text.iter().chain(&image).all(|v| v.is_finite()) {
                return Err(FormatError::NonFinite { id });
            }
            let raw = if raw {
                let t = r.u32("token count")?;
                let tokens = r.u32s(t as usize, "tokens")?;
                let height = r.u32("image height")?;
                let w = r.u32("image width")?;
                let channels = r.u32("image channels")?;
                let count = (height as u64) * (w as u64) * (channels as u64);
                let pixels = r.f32s(usize::try_from(count).map_err(|_| FormatError::Truncated("pixels"))?, "pixels")?;
                if !pixels.iter().all(|v| v.is_finite()) {
                    return Err(FormatError::NonFinite { id });
                }
                Some(RawInput {
                    tokens,
                    height,
                    width: w,
                    channels,
                    pixels,
                })
            } else {
                None
            };
            records.push(FixtureRecord {
                id,
                text,
                image,
                raw,
            });
        }
        if r.remaining() != 0 {
            return Err(FormatError::TrailingBytes(r.remaining()));
        }
        Ok(FixtureFile { width, records })
    }

    /// Teacher backed by this file's embeddings.
    pub fn teacher(&self) -> Result<Teacher, CliError> {
        let records = self.records.iter().map(|r| {
            (
                r.id,
                r.text.iter().map(|&v| f64::from(v)).collect(),
                r.image.iter().map(|&v| f64::from(v)).collect(),
            )
        });
        Ok(Teacher::Fixture(FixtureTeacher::new(self.width as usize, records)?))
    }

    /// Raw inputs of record `index` as a model image.
    pub fn image(&self, index: usize) -> Result<Option<Image>, CliError> {
        let Some(raw) = &self.records[index].raw else {
            return Ok(None);
        };
        let pixels = raw.pixels.iter().map(|&p| f64::from(p)).collect();
        Ok(Some(Image::new(
            raw.height as usize,
            raw.width as usize,
            raw.channels as usize,
            pixels,
        )?))
    }
}

/// Fixture for `samples`, embedding each with `teacher` and storing the raw
/// inputs.
pub fn fixture_from_samples(samples: &[Sample], teacher: &Teacher) -> Result<FixtureFile, CliError> {
    let mut records = Vec::with_capacity(samples.len());
    for s in samples {
        let (t, i) = teacher.teacher_embed(s)?;
        let narrow = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
        records.push(FixtureRecord {
            id: s.id,
            text: narrow(t.data()),
            image: narrow(i.data()),
            raw: Some(RawInput {
                tokens: s.tokens.clone(),
                height: s.image.height as u32,
                width: s.image.width as u32,
                channels: s.image.channels as u32,
                pixels: narrow(&s.image.pixels),
            }),
        });
    }
    Ok(FixtureFile {
        width: teacher.width() as u32,
        records,
    })
}

pub fn write_fixture(path: &Path, fixture: &FixtureFile) -> Result<(), CliError> {
    let bytes = fixture.encode()?;
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn read_fixture(path: &Path) -> Result<FixtureFile, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(FixtureFile::decode(&bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_file(raw: bool) -> FixtureFile {
        FixtureFile {
            width: 2,
            records: vec![
                FixtureRecord {
                    id: 9,
                    text: vec![1.0, -2.5],
                    image: vec![0.25, 3.0],
                    raw: raw.then(|| RawInput {
                        tokens: vec![1, 2, 3],
                        height: 1,
                        width: 2,
                        channels: 1,
                        pixels: vec![0.5, -0.5],
                    }),
                },
                FixtureRecord {
                    id: 10,
                    text: vec![f32::MIN_POSITIVE, 7.0],
                    image: vec![0.0, -0.0],
                    raw: raw.then(|| RawInput {
                        tokens: vec![],
                        height: 1,
                        width: 1,
                        channels: 1,
                        pixels: vec![1.0],
                    }),
                },
            ],
        }
    }

    #[test]
    fn header_layout() {
        let bytes = sample_file(false).encode().unwrap();
        assert_eq!(&bytes[..4], b"CLFA");
        assert_eq!(bytes[4], 1);
        assert_eq!(&bytes[5..9], &2u32.to_le_bytes());
        assert_eq!(&bytes[9..13], &2u32.to_le_bytes());
        assert_eq!(bytes[13], 0);
        assert_eq!(&bytes[14..22], &9u64.to_le_bytes());
        assert_eq!(bytes.len(), 14 + 2 * (8 + 16));
    }

    #[test]
    fn round_trip_with_and_without_raw() {
        for raw in [false, true] {
            let f = sample_file(raw);
            let bytes = f.encode().unwrap();
            let back = FixtureFile::decode(&bytes).unwrap();
            assert_eq!(back, f);
            assert_eq!(back.encode().unwrap(), bytes);
        }
    }

    #[test]
    fn typed_errors() {
        let bytes = sample_file(true).encode().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(FixtureFile::decode(&bad), Err(FormatError::BadMagic));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert_eq!(FixtureFile::decode(&bad), Err(FormatError::Version(2)));
        assert!(matches!(
            FixtureFile::decode(&bytes[..bytes.len() - 1]),
            Err(FormatError::Truncated(_))
        ));
        let mut long = bytes.clone();
        long.push(0);
        assert_eq!(FixtureFile::decode(&long), Err(FormatError::TrailingBytes(1)));
        let mut nan = bytes;
        nan[22..26].copy_from_slice(&f32::NAN.to_le_bytes());
        assert_eq!(FixtureFile::decode(&nan), Err(FormatError::NonFinite { id: 9 }));
    }

    #[test]
    fn writer_rejects_mixed_widths() {
        let mut f = sample_file(false);
        f.records[1].image.push(1.0);
        assert!(matches!(f.encode(), Err(FormatError::Inconsistent(_))));
        let mut f = sample_file(false);
        f.records[0].text[0] = f32::INFINITY;
        assert_eq!(f.encode(), Err(FormatError::NonFinite { id: 9 }));
    }
}
