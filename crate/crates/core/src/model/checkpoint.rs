//! Binary checkpoint format.
//!
//! ```text
//! "ZMMTCKPT"                      8-byte magic
//! u32 LE  format version
//! u32 LE  header length, then that many bytes of JSON (CheckpointHeader)
//! u32 LE  tensor count
//! per tensor:
//!   u32 LE name length, UTF-8 name
//!   u8     frozen flag (1 = base, 0 = trainable)
//!   u32 LE rank, then rank × u32 LE extents
//!   f64 LE values, row-major
//! ```
//! Base tensors come first, then extras, each in store order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

use super::params::{ModelConfig, ModelParams, ParamStore};

const MAGIC: &[u8; 8] = b"ZMMTCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub code_version: String,
    pub model: ModelConfig,
    pub step: usize,
    pub selection_score: Option<f64>,
    /// Resolved run configuration the checkpoint was produced under.
    pub run_config: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub params: ModelParams<T>,
    pub step: usize,
    pub selection_score: Option<f64>,
    pub run_config: serde_json::Value,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(params: ModelParams<T>) -> Self {
        Self { params, step: 0, selection_score: None, run_config: serde_json::Value::Null }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = CheckpointHeader {
            format_version: CHECKPOINT_VERSION,
            code_version: crate::VERSION.to_string(),
            model: self.params.config.clone(),
            step: self.step,
            selection_score: self.selection_score,
            run_config: self.run_config.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        let all: Vec<_> = self.params.base.entries().iter().chain(self.params.extras.entries()).collect();
        out.extend_from_slice(&(all.len() as u32).to_le_bytes());
        for e in all {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(u8::from(e.frozen));
            out.extend_from_slice(&(e.tensor.shape().len() as u32).to_le_bytes());
            for &d in e.tensor.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in e.tensor.data() {
                out.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let hlen = r.u32()? as usize;
        let header: CheckpointHeader = serde_json::from_slice(r.take(hlen)?)?;
        header.model.validate()?;
        let count = r.u32()? as usize;
        let mut base = ParamStore::new();
        let mut extras = ParamStore::new();
        for _ in 0..count {
            let nlen = r.u32()? as usize;
            let name = String::from_utf8(r.take(nlen)?.to_vec())
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let frozen = match r.take(1)?[0] {
                0 => false,
                1 => true,
                f => return Err(Error::Checkpoint(format!("bad frozen flag {f} on {name}"))),
            };
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
                .collect();
            let t = Tensor::new(shape, data)?;
            if frozen {
                base.insert(name, t, true);
            } else {
                extras.insert(name, t, false);
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let expected = super::build_model::<T>(&header.model, 0)?;
        for (store, want) in [(&base, &expected.base), (&extras, &expected.extras)] {
            if store.len() != want.len()
                || store.entries().iter().zip(want.entries()).any(|(a, b)| {
                    a.name != b.name || a.tensor.shape() != b.tensor.shape()
                })
            {
                return Err(Error::Checkpoint("tensor layout does not match the model configuration".into()));
            }
        }
        Ok(Self {
            params: ModelParams { config: header.model, base, extras },
            step: header.step,
            selection_score: header.selection_score,
            run_config: header.run_config,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

/// Serialized bytes of the base tensors only; used for freezing checks.
pub fn base_bytes<T: Scalar>(params: &ModelParams<T>) -> Vec<u8> {
    let mut out = Vec::new();
    for e in params.base.entries() {
        out.extend_from_slice(e.name.as_bytes());
        for &v in e.tensor.data() {
            out.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
