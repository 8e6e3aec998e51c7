//! Binary checkpoint container: an 8-byte magic, a little-endian `u32`
//! format version, a `u64` header length, a JSON header and the raw
//! little-endian `f32` payload of every named array.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 8] = b"HZCKPT\0\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: [usize; 4],
    offset: u64,
    len: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    version: u32,
    step: u64,
    seed: u64,
    config: serde_json::Value,
    counters: BTreeMap<String, u64>,
    arrays: Vec<ArrayEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub seed: u64,
    /// Configuration snapshot the run was started with.
    pub config: serde_json::Value,
    /// Integer state such as optimizer step counts.
    pub counters: BTreeMap<String, u64>,
    pub arrays: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn new(step: u64, seed: u64, config: serde_json::Value) -> Self {
        Self {
            step,
            seed,
            config,
            counters: BTreeMap::new(),
            arrays: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor<f32>) {
        self.arrays.push((name.into(), t));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Arrays whose names start with `prefix`, with the prefix removed.
    pub fn group<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a Tensor<f32>)> + 'a {
        self.arrays
            .iter()
            .filter_map(move |(n, t)| n.strip_prefix(prefix).map(|rest| (rest, t)))
    }

    pub fn counter(&self, name: &str) -> Result<u64> {
        self.counters
            .get(name)
            .copied()
            .ok_or_else(|| Error::Checkpoint(format!("missing counter `{name}`")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut arrays = Vec::with_capacity(self.arrays.len());
        let mut offset = 0u64;
        for (name, t) in &self.arrays {
            let len = t.len() as u64;
            arrays.push(ArrayEntry {
                name: name.clone(),
                shape: t.shape().dims(),
                offset,
                len,
            });
            offset += len;
        }
        let header = Header {
            version: FORMAT_VERSION,
            step: self.step,
            seed: self.seed,
            config: self.config.clone(),
            counters: self.counters.clone(),
            arrays,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + json.len() + 4 * offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &self.arrays {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (this build reads version {FORMAT_VERSION})"
            )));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = &bytes[20..];
        if body.len() < hlen {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&body[..hlen])?;
        if header.version != version {
            return Err(bad("header version disagrees with the file version"));
        }
        let payload = &body[hlen..];
        let mut arrays = Vec::with_capacity(header.arrays.len());
        let mut expected = 0u64;
        for e in header.arrays {
            let [n, c, h, w] = e.shape;
            let shape = Shape::new(n, c, h, w);
            if e.offset != expected || e.len != shape.numel() as u64 {
                return Err(Error::Checkpoint(format!("inconsistent layout for array `{}`", e.name)));
            }
            let start = 4 * e.offset as usize;
            let end = start + 4 * e.len as usize;
            let raw = payload
                .get(start..end)
                .ok_or_else(|| Error::Checkpoint(format!("truncated data for array `{}`", e.name)))?;
            let data = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            arrays.push((e.name, Tensor::from_vec(shape, data)?));
            expected += e.len;
        }
        if payload.len() as u64 != 4 * expected {
            return Err(bad("trailing bytes after the last array"));
        }
        Ok(Self {
            step: header.step,
            seed: header.seed,
            config: header.config,
            counters: header.counters,
            arrays,
        })
    }

    /// Writes through a temporary file so a crash never leaves a torn checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
