//! `MMRF` binary matrix files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! offset 0   magic     b"MMRF"
//! offset 4   u32       version (= 1)
//! offset 8   u32       num_rows
//! offset 12  u32       feat_dim
//! offset 16  f32 × num_rows·feat_dim, row-major
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MMRF";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// A row-major `f32` matrix as stored in an `MMRF` file.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub num_rows: usize,
    pub feat_dim: usize,
    pub data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(num_rows: usize, feat_dim: usize, data: Vec<f32>) -> Result<Self> {
        if num_rows * feat_dim != data.len() {
            return Err(Error::ElementCount {
                shape: vec![num_rows, feat_dim],
                expected: num_rows * feat_dim,
                found: data.len(),
            });
        }
        Ok(FeatureMatrix {
            num_rows,
            feat_dim,
            data,
        })
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.feat_dim..(i + 1) * self.feat_dim]
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if let Some(index) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        let rows =
            u32::try_from(self.num_rows).map_err(|_| Error::Data(format!("{} rows exceed u32", self.num_rows)))?;
        let dim = u32::try_from(self.feat_dim)
            .map_err(|_| Error::Data(format!("feature dim {} exceeds u32", self.feat_dim)))?;
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&rows.to_le_bytes());
        out.extend_from_slice(&dim.to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::format(bytes.len() as u64, "truncated header"));
        }
        if &bytes[0..4] != MAGIC {
            return Err(Error::format(0, "bad magic"));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let version = word(4);
        if version != VERSION {
            return Err(Error::format(
                4,
                format!("version mismatch: expected {VERSION}, found {version}"),
            ));
        }
        let num_rows = word(8) as usize;
        let feat_dim = word(12) as usize;
        let body_len = num_rows
            .checked_mul(feat_dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::format(8, "header dimensions overflow"))?;
        let body = &bytes[HEADER_LEN..];
        if body.len() < body_len {
            return Err(Error::format(bytes.len() as u64, "truncated body"));
        }
        if body.len() > body_len {
            return Err(Error::format((HEADER_LEN + body_len) as u64, "trailing bytes"));
        }
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(FeatureMatrix {
            num_rows,
            feat_dim,
            data,
        })
    }
}

pub fn write_roi_features(path: impl AsRef<Path>, rows: &FeatureMatrix) -> Result<()> {
    fs::write(path, rows.to_bytes()?)?;
    Ok(())
}

pub fn read_roi_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    FeatureMatrix::from_bytes(&fs::read(path)?)
}
