//! Flat binary tensor files: a 32-byte header followed by a row-major little-endian payload.
//!
//! Header layout (all little-endian `u32` after the magic): `"RMTD"`, version, dtype code,
//! rank, then four dimension slots (unused slots are zero).

use std::fs;
use std::path::Path;

use crate::error::{io_err, RemicError, Result};

pub const MAGIC: &[u8; 4] = b"RMTD";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub enum RmtData {
    F32(Vec<f32>),
    I32(Vec<i32>),
}

impl RmtData {
    fn code(&self) -> u32 {
        match self {
            RmtData::F32(_) => 1,
            RmtData::I32(_) => 2,
        }
    }

    fn len(&self) -> usize {
        match self {
            RmtData::F32(v) => v.len(),
            RmtData::I32(v) => v.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RmtTensor {
    pub dims: Vec<usize>,
    pub data: RmtData,
}

pub fn encode(t: &RmtTensor) -> Vec<u8> {
    assert!((1..=4).contains(&t.dims.len()), "rank must be 1..=4");
    assert_eq!(t.dims.iter().product::<usize>(), t.data.len(), "dims do not match payload");
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * t.data.len());
    out.extend_from_slice(MAGIC);
    for v in [VERSION, t.data.code(), t.dims.len() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for i in 0..4 {
        let d = t.dims.get(i).copied().unwrap_or(0) as u32;
        out.extend_from_slice(&d.to_le_bytes());
    }
    match &t.data {
        RmtData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        RmtData::I32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<RmtTensor> {
    let corrupt = |reason: String| RemicError::Corrupt { path: path.to_path_buf(), reason };
    if bytes.len() < HEADER_LEN {
        return Err(corrupt(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(corrupt("bad magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    let version = word(1);
    if version != VERSION {
        return Err(RemicError::Version { found: version, expected: VERSION });
    }
    let (dtype, rank) = (word(2), word(3) as usize);
    if !(1..=4).contains(&rank) {
        return Err(corrupt(format!("rank {rank} outside 1..=4")));
    }
    let dims: Vec<usize> = (0..rank).map(|i| word(4 + i) as usize).collect();
    if dims.contains(&0) {
        return Err(corrupt(format!("zero dimension in {dims:?}")));
    }
    let count: usize = dims.iter().product();
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != 4 * count {
        return Err(corrupt(format!(
            "dims {dims:?} need {} payload bytes, found {}",
            4 * count,
            payload.len()
        )));
    }
    let words = payload.chunks_exact(4).map(|c| <[u8; 4]>::try_from(c).unwrap());
    let data = match dtype {
        1 => RmtData::F32(words.map(f32::from_le_bytes).collect()),
        2 => RmtData::I32(words.map(i32::from_le_bytes).collect()),
        other => return Err(corrupt(format!("unknown dtype code {other}"))),
    };
    Ok(RmtTensor { dims, data })
}

pub fn write(path: &Path, t: &RmtTensor) -> Result<()> {
    fs::write(path, encode(t)).map_err(io_err(path))
}

pub fn read(path: &Path) -> Result<RmtTensor> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode(&bytes, path)
}
