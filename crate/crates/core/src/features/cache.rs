//! Per-utterance feature cache.
//!
//! Layout, little-endian:
//!
//! ```text
//! magic          8 bytes  b"PKWSFEAT"
//! version        u32      1
//! frames (T)     u32
//! dim (D)        u32
//! kind           u8       0 = log-mel, 1 = mfcc
//! window         u32      samples
//! shift          u32      samples
//! data           T*D x f64, row-major
//! ```
//!
//! The frame shift in seconds is recovered assuming 16 kHz audio.

use std::fs;
use std::path::Path;

use super::frontend::{FeatureKind, FeatureMatrix};
use super::wav::DEFAULT_SAMPLE_RATE;
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 8] = b"PKWSFEAT";
pub const FEATURE_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 4 + 4 + 1 + 4 + 4;

pub fn write_feature_cache(path: &Path, m: &FeatureMatrix, window_samples: usize) -> Result<()> {
    let shift = (m.shift_secs * DEFAULT_SAMPLE_RATE as f64).round() as u32;
    let mut out = Vec::with_capacity(HEADER_LEN + m.data.len() * 8);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.frames as u32).to_le_bytes());
    out.extend_from_slice(&(m.dim as u32).to_le_bytes());
    out.push(m.kind.code());
    out.extend_from_slice(&(window_samples as u32).to_le_bytes());
    out.extend_from_slice(&shift.to_le_bytes());
    for v in &m.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Returns the matrix and the window length in samples.
pub fn read_feature_cache(path: &Path) -> Result<(FeatureMatrix, usize)> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let bad = |reason: String| Error::Format {
        kind: "feature cache",
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < HEADER_LEN || &bytes[..8] != FEATURE_MAGIC {
        return Err(bad("missing header".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let version = u32_at(8);
    if version != FEATURE_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let frames = u32_at(12) as usize;
    let dim = u32_at(16) as usize;
    let kind = FeatureKind::from_code(bytes[20]).ok_or_else(|| bad(format!("unknown kind {}", bytes[20])))?;
    let window = u32_at(21) as usize;
    let shift = u32_at(25);
    let body = &bytes[HEADER_LEN..];
    if body.len() != frames * dim * 8 {
        return Err(bad(format!(
            "expected {} data bytes, found {}",
            frames * dim * 8,
            body.len()
        )));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((
        FeatureMatrix {
            frames,
            dim,
            data,
            shift_secs: shift as f64 / DEFAULT_SAMPLE_RATE as f64,
            kind,
        },
        window,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_fields_and_round_trip() {
        let m = FeatureMatrix {
            frames: 2,
            dim: 3,
            data: vec![1.0, 2.0, 3.0, -4.0, 5.5, 6.0],
            shift_secs: 0.01,
            kind: FeatureKind::Mfcc,
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("u.feat");
        write_feature_cache(&p, &m, 480).unwrap();
        let raw = std::fs::read(&p).unwrap();
        assert_eq!(raw.len(), HEADER_LEN + 48);
        assert_eq!(raw[20], 1);
        assert_eq!(u32::from_le_bytes(raw[25..29].try_into().unwrap()), 160);
        let (back, win) = read_feature_cache(&p).unwrap();
        assert_eq!(back, m);
        assert_eq!(win, 480);

        std::fs::write(&p, &raw[..raw.len() - 8]).unwrap();
        assert!(read_feature_cache(&p).is_err());
    }
}
