//! Binary checkpoints.
//!
//! All integers are little-endian.
//!
//! ```text
//! "MMHC"            4 bytes
//! version           u32
//! header_len        u32
//! header            JSON: {"spec": ModelSpec, "inputs": [modality names]}
//! step              u64
//! param_count       u32, then param_count blobs
//! state_count       u32, then state_count blobs (optimizer moments)
//!
//! blob: name_len u32, name UTF-8, dims 4 × u32, numel × f32
//! ```
//!
//! Trailing bytes after the last blob are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::ModelSpec;
use crate::params::ParamSet;
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"MMHC";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    /// Dataset modality names feeding each model input.
    pub inputs: Vec<String>,
    pub step: u64,
    pub params: ParamSet<f32>,
    pub optimizer: ParamSet<f32>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    inputs: Vec<String>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Config(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_blobs(out: &mut Vec<u8>, set: &ParamSet<f32>) -> Result<()> {
    put_u32(out, set.len())?;
    for (name, t) in set.iter() {
        put_u32(out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        for d in t.shape().dims() {
            put_u32(out, d)?;
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            spec: self.spec.clone(),
            inputs: self.inputs.clone(),
        })
        .map_err(|e| Error::Config(e.to_string()))?;
        let mut out = Vec::with_capacity(64 + header.len() + 4 * (self.params.numel() + self.optimizer.numel()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_u32(&mut out, header.len())?;
        out.extend_from_slice(&header);
        out.extend_from_slice(&self.step.to_le_bytes());
        put_blobs(&mut out, &self.params)?;
        put_blobs(&mut out, &self.optimizer)?;
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::CorruptCheckpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                expected: VERSION,
            });
        }
        let len = r.u32()? as usize;
        let header: Header =
            serde_json::from_slice(r.take(len)?).map_err(|e| Error::CorruptCheckpoint(format!("header: {e}")))?;
        let step = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let params = r.blobs()?;
        let optimizer = r.blobs()?;
        if r.pos != bytes.len() {
            return Err(Error::CorruptCheckpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        header.spec.validate()?;
        check_params(&header.spec, &params)?;
        Ok(Checkpoint {
            spec: header.spec,
            inputs: header.inputs,
            step,
            params,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// The stored tensors must be exactly the ones the model spec declares.
fn check_params(spec: &ModelSpec, params: &ParamSet<f32>) -> Result<()> {
    let decls = spec.decls()?;
    for d in &decls {
        let t = params
            .get(&d.name)
            .map_err(|_| Error::CorruptCheckpoint(format!("missing parameter `{}`", d.name)))?;
        if t.shape() != d.shape {
            return Err(Error::CorruptCheckpoint(format!(
                "`{}` is {}, spec declares {}",
                d.name,
                t.shape(),
                d.shape
            )));
        }
    }
    if params.len() != decls.len() {
        let extra = params.names().find(|n| !decls.iter().any(|d| d.name == *n)).unwrap_or_default();
        return Err(Error::CorruptCheckpoint(format!("unexpected parameter `{extra}`")));
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::CorruptCheckpoint(format!("truncated at byte {} (wanted {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn blobs(&mut self) -> Result<ParamSet<f32>> {
        let count = self.u32()?;
        let mut set = ParamSet::new();
        for _ in 0..count {
            let len = self.u32()? as usize;
            let name = std::str::from_utf8(self.take(len)?)
                .map_err(|_| Error::CorruptCheckpoint("parameter name is not UTF-8".into()))?
                .to_string();
            let mut dims = [0usize; 4];
            for d in &mut dims {
                *d = self.u32()? as usize;
            }
            let shape = Shape::from_dims(dims);
            let numel = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::CorruptCheckpoint(format!("`{name}` has absurd shape")))?;
            let raw = self.take(numel.saturating_mul(4))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            set.insert(name.clone(), Tensor::new(shape, data)?)
                .map_err(|_| Error::CorruptCheckpoint(format!("duplicate entry `{name}`")))?;
        }
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::init_params;

    fn sample() -> Checkpoint {
        let spec = ModelSpec::toy();
        let params = init_params::<f32>(&spec, 5).unwrap();
        let mut optimizer = ParamSet::new();
        optimizer
            .insert("adam.m.fusion.bias", Tensor::full(Shape::new(8, 1, 1, 1), -0.25f32))
            .unwrap();
        Checkpoint {
            spec,
            inputs: vec!["t1w".into(), "t2w".into()],
            step: 1234,
            params,
            optimizer,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut ck = sample();
        ck.params.get_mut("fusion.bias").unwrap().data_mut()[0] = f32::from_bits(0x3f80_0001);
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        for ((n1, a), (n2, b)) in ck.params.iter().zip(back.params.iter()) {
            assert_eq!(n1, n2);
            let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
        assert_eq!(back, ck);
    }

    #[test]
    fn truncation_is_corrupt() {
        let bytes = sample().to_bytes().unwrap();
        for cut in [0, 3, 8, 20, bytes.len() / 2, bytes.len() - 1] {
            let err = Checkpoint::from_bytes(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, Error::CorruptCheckpoint(_)), "cut {cut}: {err}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(Checkpoint::from_bytes(&extra), Err(Error::CorruptCheckpoint(_))));
    }

    #[test]
    fn bumped_version_is_unsupported() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[4..8].copy_from_slice(&(VERSION + 1).to_le_bytes());
        let err = Checkpoint::from_bytes(&bytes).unwrap_err();
        assert!(matches!(err, Error::UnsupportedVersion { found, expected } if found == VERSION + 1 && expected == VERSION));
    }

    #[test]
    fn bad_magic() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::CorruptCheckpoint(_))));
    }

    #[test]
    fn parameters_must_match_the_spec() {
        let mut missing = sample();
        missing.params = ParamSet::new();
        let mut wrong = sample();
        *wrong.params.get_mut("fusion.bias").unwrap() = Tensor::zeros(Shape::new(3, 1, 1, 1));
        let mut extra = sample();
        extra.params.insert("stray", Tensor::zeros(Shape::new(1, 1, 1, 1))).unwrap();
        for ck in [missing, wrong, extra] {
            let err = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap_err();
            assert_eq!(err.code(), "corrupt_checkpoint", "{err}");
        }
    }
}
