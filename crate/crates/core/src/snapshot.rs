//! Binary field snapshots.
//!
//! Layout: the 8-byte magic `QTFIELD\0`, a little-endian `u32` header length, a JSON
//! header, then every component as `n²` little-endian `f64` values in row-major order
//! (`x` fastest).

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::qtensor::Params;
use crate::spectral::{Field, Grid, Kind};

pub const MAGIC: &[u8; 8] = b"QTFIELD\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum SnapshotError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("size mismatch: expected {expected} bytes, found {found}")]
    SizeMismatch { expected: usize, found: usize },
    #[error("unsupported snapshot: {0}")]
    Version(String),
    #[error("malformed header: {0}")]
    Header(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub format_version: u32,
    pub n: usize,
    pub kind: String,
    pub components: usize,
    pub time: f64,
    #[serde(default)]
    pub params: Option<Params>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub field: Field,
    pub time: f64,
    pub params: Option<Params>,
}

pub fn write_snapshot<W: Write>(
    mut w: W,
    field: &Field,
    time: f64,
    params: Option<&Params>,
) -> Result<()> {
    if !time.is_finite() {
        return Err(Error::Validation(format!(
            "snapshot time must be finite, got {time}"
        )));
    }
    let header = SnapshotHeader {
        format_version: FORMAT_VERSION,
        n: field.grid.n(),
        kind: field.kind.name().to_string(),
        components: field.data.len(),
        time,
        params: params.copied(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(12 + json.len() + 8 * field.data.len() * field.grid.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for comp in &field.data {
        for v in comp {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_snapshot<R: Read>(mut r: R) -> Result<Snapshot> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode(&bytes)
}

fn decode(bytes: &[u8]) -> Result<Snapshot> {
    if bytes.len() < 12 {
        return Err(SnapshotError::SizeMismatch {
            expected: 12,
            found: bytes.len(),
        }
        .into());
    }
    if &bytes[..8] != MAGIC {
        return Err(SnapshotError::BadMagic.into());
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    if bytes.len() < 12 + hlen {
        return Err(SnapshotError::SizeMismatch {
            expected: 12 + hlen,
            found: bytes.len(),
        }
        .into());
    }
    let header: SnapshotHeader = serde_json::from_slice(&bytes[12..12 + hlen])
        .map_err(|e| SnapshotError::Header(e.to_string()))?;
    if header.format_version != FORMAT_VERSION {
        return Err(SnapshotError::Version(format!(
            "format version {} (this build reads {FORMAT_VERSION})",
            header.format_version
        ))
        .into());
    }
    let kind = Kind::from_name(&header.kind)
        .ok_or_else(|| SnapshotError::Version(format!("unknown payload kind '{}'", header.kind)))?;
    if header.components != kind.components() {
        return Err(SnapshotError::Header(format!(
            "{} components declared for kind {}",
            header.components, header.kind
        ))
        .into());
    }
    let grid = Grid::new(header.n)?;
    let expected = 12 + hlen + 8 * header.components * grid.len();
    if bytes.len() != expected {
        return Err(SnapshotError::SizeMismatch {
            expected,
            found: bytes.len(),
        }
        .into());
    }
    let payload = &bytes[12 + hlen..];
    let data = (0..header.components)
        .map(|c| {
            payload[c * 8 * grid.len()..(c + 1) * 8 * grid.len()]
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect()
        })
        .collect();
    Ok(Snapshot {
        field: Field::from_components(&grid, kind, data)?,
        time: header.time,
        params: header.params,
    })
}

pub fn save(path: &Path, field: &Field, time: f64, params: Option<&Params>) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_snapshot(std::io::BufWriter::new(f), field, time, params)
}

pub fn load(path: &Path) -> Result<Snapshot> {
    decode(&std::fs::read(path)?)
}
