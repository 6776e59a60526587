//! Single-file checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      b"PFCK"
//! version    u32
//! kind       u32 length + UTF-8 ("model" or "classifier")
//! metadata   u32 length + UTF-8 (configuration as key = value lines)
//! step       u64
//! seed       u64
//! count      u32
//! count x { name: u32 length + UTF-8, rank: u32, dims: rank x u64, values: f32 x prod(dims) }
//! ```
//!
//! Tensors are written in lexicographic name order, so saving the same state
//! twice produces identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use tch::{Kind, Tensor};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PFCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorData {
    pub shape: Vec<i64>,
    pub values: Vec<f32>,
}

impl TensorData {
    pub fn from_tensor(t: &Tensor) -> Self {
        let shape = t.size();
        let flat = t.detach().to_kind(Kind::Float).contiguous().flatten(0, -1);
        let values = Vec::<f32>::try_from(&flat).expect("float tensor");
        Self { shape, values }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_slice(&self.values).reshape(self.shape.as_slice())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub format_version: u32,
    pub kind: String,
    pub metadata: String,
    pub step: u64,
    pub seed: u64,
    pub tensors: BTreeMap<String, TensorData>,
}

impl Checkpoint {
    pub fn new(kind: &str, metadata: String, step: u64, seed: u64) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            kind: kind.to_string(),
            metadata,
            step,
            seed,
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: String, t: &Tensor) {
        self.tensors.insert(name, TensorData::from_tensor(t));
    }

    /// Tensors under `prefix.`, with the prefix stripped.
    pub fn group(&self, prefix: &str) -> BTreeMap<String, Tensor> {
        let lead = format!("{prefix}.");
        self.tensors
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(&lead).map(|rest| (rest.to_string(), v.to_tensor())))
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.format_version.to_le_bytes());
        put_str(&mut out, &self.kind);
        put_str(&mut out, &self.metadata);
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_str(&mut out, name);
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &t.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err("not a checkpoint (bad magic)".into());
        }
        let format_version = r.u32()?;
        if format_version != FORMAT_VERSION {
            return Err(format!("unsupported format version {format_version}"));
        }
        let kind = r.string()?;
        let metadata = r.string()?;
        let step = r.u64()?;
        let seed = r.u64()?;
        let count = r.u32()?;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape: Vec<i64> = (0..rank).map(|_| r.u64().map(|d| d as i64)).collect::<std::result::Result<_, _>>()?;
            let n: usize = shape.iter().map(|&d| d as usize).product();
            let raw = r.take(n.checked_mul(4).ok_or("tensor too large")?)?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.insert(name, TensorData { shape, values });
        }
        if r.pos != bytes.len() {
            return Err("trailing bytes after the last tensor".into());
        }
        Ok(Self {
            format_version,
            kind,
            metadata,
            step,
            seed,
            tensors,
        })
    }

    /// Write via a temporary sibling and rename, so a failed save leaves no partial file.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|reason| Error::Checkpoint {
            path: path.to_path_buf(),
            reason,
        })
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(format!("truncated at byte {}", self.pos)),
        }
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> std::result::Result<String, String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| "invalid UTF-8".to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::new("model", "mode = supervised\n".into(), 7, 3);
        c.insert("b.w".into(), &Tensor::from_slice(&[1.5f32, -0.0, f32::MIN_POSITIVE]).reshape([3, 1]));
        c.insert("a.scalar".into(), &Tensor::from_slice(&[2.0f32]));
        c
    }

    #[test]
    fn bytes_round_trip() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
        // -0.0 keeps its sign bit
        assert_eq!(back.tensors["b.w"].values[1].to_bits(), (-0.0f32).to_bits());
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }

    #[test]
    fn groups_strip_prefixes() {
        let g = sample().group("b");
        assert_eq!(g.keys().collect::<Vec<_>>(), vec!["w"]);
    }
}
