//! `TSFC` checkpoint container.
//!
//! Layout (little endian): magic `TSFC`, `u16` format version, `u32` length of
//! the UTF-8 JSON descriptor followed by its bytes, then one blob per tensor in
//! descriptor order: `u16` name length, name bytes, `u8` rank, `u64` per
//! dimension, and the `f64` values.

use std::io::{Read, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::nn::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TSFC";
pub const CHECKPOINT_VERSION: u16 = 1;

/// How a model's parameters came to be.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    ZeroShot,
    FineTune,
    Scratch,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::ZeroShot => "zero_shot",
            Regime::FineTune => "fine_tune",
            Regime::Scratch => "scratch",
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamMeta {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointDescriptor {
    /// Model family tag, e.g. `chronos`.
    pub family: String,
    /// Family-specific architecture and preprocessing settings.
    pub architecture: serde_json::Value,
    pub regime: Regime,
    pub data_cutoff: Option<NaiveDate>,
    pub params: Vec<ParamMeta>,
}

/// Versioned parameter set plus descriptor.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelCheckpoint {
    pub descriptor: CheckpointDescriptor,
    pub params: ParamSet,
}

impl ModelCheckpoint {
    pub fn new(
        family: &str,
        architecture: serde_json::Value,
        regime: Regime,
        data_cutoff: Option<NaiveDate>,
        params: ParamSet,
    ) -> Self {
        let metas = params
            .entries()
            .iter()
            .map(|e| ParamMeta {
                name: e.name.clone(),
                shape: e.tensor.shape().to_vec(),
                trainable: e.trainable,
            })
            .collect();
        Self {
            descriptor: CheckpointDescriptor {
                family: family.to_string(),
                architecture,
                regime,
                data_cutoff,
                params: metas,
            },
            params,
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let desc = serde_json::to_vec(&self.descriptor)?;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(desc.len() as u32).to_le_bytes())?;
        w.write_all(&desc)?;
        for e in self.params.entries() {
            let name = e.name.as_bytes();
            w.write_all(&(name.len() as u16).to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&[e.tensor.shape().len() as u8])?;
            for &d in e.tensor.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in e.tensor.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory cannot fail");
        buf
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a TSFC checkpoint".into()));
        }
        let version = read_u16(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let len = read_u32(&mut r)? as usize;
        let mut desc = vec![0u8; len];
        r.read_exact(&mut desc)?;
        let descriptor: CheckpointDescriptor = serde_json::from_slice(&desc)?;
        let mut params = ParamSet::new();
        for meta in &descriptor.params {
            let nlen = read_u16(&mut r)? as usize;
            let mut name = vec![0u8; nlen];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|e| Error::Format(e.to_string()))?;
            if name != meta.name {
                return Err(Error::Format(format!("blob {name} out of descriptor order (expected {})", meta.name)));
            }
            let mut rank = [0u8; 1];
            r.read_exact(&mut rank)?;
            let mut shape = Vec::with_capacity(rank[0] as usize);
            for _ in 0..rank[0] {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            if shape != meta.shape {
                return Err(Error::Format(format!("shape mismatch for {name}")));
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            let mut b = [0u8; 8];
            for _ in 0..n {
                r.read_exact(&mut b)?;
                data.push(f64::from_le_bytes(b));
            }
            let t = Tensor::new(shape, data)?;
            if meta.trainable {
                params.add(name, t);
            } else {
                params.add_buffer(name, t);
            }
        }
        Ok(Self { descriptor, params })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(bytes)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

fn read_u16<R: Read>(r: &mut R) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_everything() {
        let mut ps = ParamSet::new();
        ps.add("a.w", Tensor::matrix(2, 2, vec![1.0, -2.5, 3.25, f64::MIN_POSITIVE]).unwrap());
        ps.add_buffer("a.running_mean", Tensor::row_vector(vec![0.1, 0.2]));
        let ck = ModelCheckpoint::new(
            "test",
            serde_json::json!({"bounds": [-1.5, 2.0]}),
            Regime::FineTune,
            NaiveDate::from_ymd_opt(2001, 12, 31),
            ps,
        );
        let bytes = ck.to_bytes();
        assert_eq!(&bytes[..4], b"TSFC");
        let back = ModelCheckpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn rejects_foreign_magic() {
        assert!(ModelCheckpoint::from_bytes(b"TSFB\x01\x00").is_err());
    }
}
