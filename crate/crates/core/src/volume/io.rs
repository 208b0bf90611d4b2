//! MIVOL on-disk format.
//!
//! ```text
//! bytes 0..7   magic "MIVOL1\n"
//! bytes 7..15  u64 little-endian header length L
//! next L bytes UTF-8 JSON: {"dims":[D,H,W],"spacing":[sz,sy,sx],
//!              "dtype":"f32le"|"u8","units":"HU"|"NORM","modality":"SOURCE"|"TARGET"}
//! remainder    D·H·W voxels, x-fastest (f32 little-endian, or one byte each)
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{voxel_count, Dims, Mask, Modality, Units, Volume};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 7] = b"MIVOL1\n";

const DTYPE_F32: &str = "f32le";
const DTYPE_U8: &str = "u8";

#[derive(Serialize, Deserialize)]
struct Header {
    dims: [usize; 3],
    spacing: [f64; 3],
    dtype: String,
    units: Units,
    modality: Modality,
}

fn encode(header: &Header, payload: &[u8]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = Vec::with_capacity(MAGIC.len() + 8 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(payload);
    Ok(out)
}

fn decode(bytes: &[u8]) -> Result<(Header, &[u8])> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Format("missing MIVOL1 magic".into()));
    }
    let rest = &bytes[MAGIC.len()..];
    if rest.len() < 8 {
        return Err(Error::Corruption("truncated header length".into()));
    }
    let len = u64::from_le_bytes(rest[..8].try_into().expect("8 bytes")) as usize;
    let rest = &rest[8..];
    if rest.len() < len {
        return Err(Error::Corruption(format!(
            "header declares {len} bytes, only {} present",
            rest.len()
        )));
    }
    let header: Header = serde_json::from_slice(&rest[..len])
        .map_err(|e| Error::Format(format!("bad MIVOL header: {e}")))?;
    Ok((header, &rest[len..]))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn check_payload(dims: Dims, elem: usize, payload: &[u8]) -> Result<()> {
    let want = voxel_count(dims) * elem;
    if payload.len() != want {
        return Err(Error::Corruption(format!(
            "header declares {} voxels ({want} bytes), payload has {} bytes",
            voxel_count(dims),
            payload.len()
        )));
    }
    Ok(())
}

pub fn volume_to_bytes(v: &Volume) -> Result<Vec<u8>> {
    v.validate()?;
    let header = Header {
        dims: v.dims(),
        spacing: v.spacing(),
        dtype: DTYPE_F32.into(),
        units: v.units(),
        modality: v.modality(),
    };
    let payload: Vec<u8> = v.voxels().iter().flat_map(|x| x.to_le_bytes()).collect();
    encode(&header, &payload)
}

pub fn volume_from_bytes(bytes: &[u8]) -> Result<Volume> {
    let (h, payload) = decode(bytes)?;
    if h.dtype != DTYPE_F32 {
        return Err(Error::Format(format!("expected dtype {DTYPE_F32}, found {}", h.dtype)));
    }
    check_payload(h.dims, 4, payload)?;
    let voxels = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Volume::new(h.dims, h.spacing, voxels, h.units, h.modality)
}

pub fn save_volume(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &volume_to_bytes(v)?)
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume> {
    volume_from_bytes(&read(path.as_ref())?)
}

/// Masks share the volume header; units and modality are written as
/// `NORM`/`TARGET` and ignored on load.
pub fn save_mask(m: &Mask, spacing: [f64; 3], path: impl AsRef<Path>) -> Result<()> {
    let header = Header {
        dims: m.dims(),
        spacing,
        dtype: DTYPE_U8.into(),
        units: Units::Normalized,
        modality: Modality::Target,
    };
    write(path.as_ref(), &encode(&header, m.voxels())?)
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let bytes = read(path.as_ref())?;
    let (h, payload) = decode(&bytes)?;
    if h.dtype != DTYPE_U8 {
        return Err(Error::Format(format!("expected dtype {DTYPE_U8}, found {}", h.dtype)));
    }
    check_payload(h.dims, 1, payload)?;
    Mask::new(h.dims, payload.to_vec())
}
