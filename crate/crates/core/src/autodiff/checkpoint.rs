//! Parameter checkpoint container.
//!
//! Byte layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes  b"PKWSCKPT"
//! version      u32      currently 1
//! config_len   u32      length of the UTF-8 JSON model configuration
//! config       config_len bytes
//! n_entries    u32
//! entry*       name_len u32, name bytes (UTF-8),
//!              ndim u32, ndim x u64 extents,
//!              product(extents) x f64 values (row-major)
//! ```

use std::fs;
use std::path::Path;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PKWSCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// JSON description of whatever built the parameters.
    pub config: String,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.config.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config.as_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (_, name, value) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(value.rank() as u32).to_le_bytes());
            for &d in value.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            kind: "checkpoint",
            path: path.to_path_buf(),
            reason,
        };
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8).map_err(&bad)? != CHECKPOINT_MAGIC {
            return Err(bad("bad magic".into()));
        }
        let version = r.u32().map_err(&bad)?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let clen = r.u32().map_err(&bad)? as usize;
        let config =
            String::from_utf8(r.take(clen).map_err(&bad)?.to_vec()).map_err(|_| bad("config is not UTF-8".into()))?;
        let n = r.u32().map_err(&bad)?;
        let mut params = ParamStore::new();
        for _ in 0..n {
            let nlen = r.u32().map_err(&bad)? as usize;
            let name = String::from_utf8(r.take(nlen).map_err(&bad)?.to_vec())
                .map_err(|_| bad("parameter name is not UTF-8".into()))?;
            let ndim = r.u32().map_err(&bad)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64().map_err(&bad)? as usize);
            }
            let count: usize = shape.iter().product();
            let raw = r.take(count * 8).map_err(&bad)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| bad(e.to_string()))?;
            params.insert(&name, t).map_err(|e| bad(e.to_string()))?;
        }
        if r.pos != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { config, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes, path)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        if self.pos + n > self.bytes.len() {
            return Err(format!("truncated at byte {}", self.pos));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
