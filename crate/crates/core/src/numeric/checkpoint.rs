//! Binary key → (shape, values) parameter files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! 8 bytes   magic "HOPCKPT\0"
//! u32       format version (1)
//! u64       header length N
//! N bytes   UTF-8 JSON: {"metadata": <any>, "tensors": [{"name", "rows", "cols"}, ...]}
//! f64 * Σ   tensor values, row-major, in header order
//! ```
//!
//! Values are stored bit-exact, so a reloaded model reproduces its losses
//! exactly.

use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Tensor;

const MAGIC: &[u8; 8] = b"HOPCKPT\0";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    metadata: serde_json::Value,
    tensors: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub metadata: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

fn invalid(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            metadata: self.metadata.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(name, t)| Entry {
                    name: name.clone(),
                    rows: t.rows(),
                    cols: t.cols(),
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let values: usize = self.tensors.iter().map(|(_, t)| t.len()).sum();
        let mut out = Vec::with_capacity(20 + header.len() + 8 * values);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> io::Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(invalid("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(invalid(format!("unsupported checkpoint version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(20..20 + header_len)
            .ok_or_else(|| invalid("truncated checkpoint header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| invalid(e.to_string()))?;
        let mut cursor = 20 + header_len;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in header.tensors {
            let n = entry.rows * entry.cols;
            let raw = bytes
                .get(cursor..cursor + 8 * n)
                .ok_or_else(|| invalid(format!("truncated values for `{}`", entry.name)))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(entry.rows, entry.cols, data).map_err(|e| invalid(e.to_string()))?;
            tensors.push((entry.name, t));
            cursor += 8 * n;
        }
        if cursor != bytes.len() {
            return Err(invalid("trailing bytes after checkpoint values"));
        }
        Ok(Self {
            metadata: header.metadata,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> io::Result<()> {
        std::fs::write(path, self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> io::Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = Checkpoint {
            metadata: serde_json::json!({"note": "x"}),
            tensors: vec![
                ("a".into(), Tensor::new(1, 3, vec![0.1, -0.0, 1e-300]).unwrap()),
                ("b".into(), Tensor::scalar(std::f64::consts::PI)),
            ],
        };
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.get("a").unwrap().data()[1].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn rejects_garbage_and_truncation() {
        assert!(Checkpoint::from_bytes(b"nope").is_err());
        let ck = Checkpoint {
            metadata: serde_json::Value::Null,
            tensors: vec![("a".into(), Tensor::scalar(1.0))],
        };
        let bytes = ck.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
