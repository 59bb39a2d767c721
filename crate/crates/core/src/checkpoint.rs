//! Versioned binary container for model parameters.
//!
//! Layout: the 8-byte magic `SNRFCKPT`, a little-endian `u32` format
//! version, a little-endian `u64` header length, a UTF-8 JSON header, then
//! every tensor's values as little-endian `f64` in header order. The header
//! records the container `kind`, free-form `meta` JSON (model configs,
//! counters) and the name and length of each tensor.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SNRFCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    version: u32,
    kind: String,
    meta: serde_json::Value,
    tensors: Vec<(String, usize)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Vec<f64>)>,
}

impl Container {
    pub fn new(kind: impl Into<String>, meta: serde_json::Value) -> Self {
        Self {
            kind: kind.into(),
            meta,
            tensors: Vec::new(),
        }
    }

    pub fn with_tensor(mut self, name: impl Into<String>, values: Vec<f64>) -> Self {
        self.tensors.push((name.into(), values));
        self
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    pub fn take_tensor(&mut self, name: &str) -> Option<Vec<f64>> {
        let pos = self.tensors.iter().position(|(n, _)| n == name)?;
        Some(self.tensors.remove(pos).1)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            version: VERSION,
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            tensors: self.tensors.iter().map(|(n, v)| (n.clone(), v.len())).collect(),
        };
        let json = serde_json::to_vec(&header).expect("checkpoint header serializes");
        let payload: usize = self.tensors.iter().map(|(_, v)| v.len() * 8).sum();
        let mut out = Vec::with_capacity(20 + json.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, values) in &self.tensors {
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err("not a checkpoint (bad magic)".into());
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(format!("unsupported checkpoint version {version}"));
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = &bytes[20..];
        if body.len() < len {
            return Err("truncated header".into());
        }
        let header: Header = serde_json::from_slice(&body[..len]).map_err(|e| format!("corrupt header: {e}"))?;
        let mut rest = &body[len..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for (name, n) in header.tensors {
            if rest.len() < n * 8 {
                return Err(format!("truncated tensor `{name}`"));
            }
            let (chunk, tail) = rest.split_at(n * 8);
            tensors.push((
                name,
                chunk
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                    .collect(),
            ));
            rest = tail;
        }
        if !rest.is_empty() {
            return Err("trailing bytes after last tensor".into());
        }
        Ok(Self {
            kind: header.kind,
            meta: header.meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, expected_kind: &str) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let c = Self::from_bytes(&bytes).map_err(|e| Error::io(path, e))?;
        if c.kind != expected_kind {
            return Err(Error::io(path, format!("expected a `{expected_kind}` checkpoint, found `{}`", c.kind)));
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bit_exact_round_trip() {
        let c = Container::new("field", serde_json::json!({"width": 8}))
            .with_tensor("params", vec![0.1, -3.5e-300, f64::MIN_POSITIVE, 1.0 / 3.0])
            .with_tensor("empty", vec![]);
        let back = Container::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn detects_corruption() {
        let bytes = Container::new("x", serde_json::Value::Null)
            .with_tensor("p", vec![1.0; 4])
            .to_bytes();
        assert!(Container::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Container::from_bytes(&bad).is_err());
        let mut bad_version = bytes;
        bad_version[8] = 9;
        assert!(Container::from_bytes(&bad_version).unwrap_err().contains("version"));
    }
}
