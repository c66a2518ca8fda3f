//! Feature cache records: magic `AMF1`, three little-endian `u32` dims, then
//! row-major little-endian `f64` data. A feature cache file holds the
//! `T × N × d` filterbank record followed by the `T × P × F` phase record.

use crate::features::{FeatureTensor, PhaseDiffTensor};
use std::io::{self, Read, Write};
use std::path::Path;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"AMF1";

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic {0:?}, expected \"AMF1\"")]
    Magic([u8; 4]),
    #[error("record truncated: expected {expected} values for dims {dims:?}")]
    Truncated { dims: [u32; 3], expected: usize },
}

pub fn write_record<W: Write>(w: &mut W, dims: [usize; 3], data: &[f64]) -> io::Result<()> {
    assert_eq!(data.len(), dims.iter().product::<usize>());
    w.write_all(MAGIC)?;
    for d in dims {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_record<R: Read>(r: &mut R) -> Result<([usize; 3], Vec<f64>), CacheError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CacheError::Magic(magic));
    }
    let mut dims = [0u32; 3];
    for d in dims.iter_mut() {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        *d = u32::from_le_bytes(b);
    }
    let expected = dims.iter().map(|&d| d as usize).product::<usize>();
    let mut data = Vec::with_capacity(expected);
    let mut b = [0u8; 8];
    for _ in 0..expected {
        r.read_exact(&mut b)
            .map_err(|_| CacheError::Truncated { dims, expected })?;
        data.push(f64::from_le_bytes(b));
    }
    Ok((dims.map(|d| d as usize), data))
}

pub fn encode_features(features: &FeatureTensor, phase: &PhaseDiffTensor) -> Vec<u8> {
    let mut buf = Vec::new();
    write_record(&mut buf, features.dims(), features.values()).expect("vec write");
    write_record(&mut buf, phase.dims(), phase.values()).expect("vec write");
    buf
}

pub fn decode_features(mut bytes: &[u8]) -> Result<(FeatureTensor, PhaseDiffTensor), CacheError> {
    let ([t, n, d], fv) = read_record(&mut bytes)?;
    let ([tp, p, f], pv) = read_record(&mut bytes)?;
    Ok((
        FeatureTensor::new(t, n, d, fv),
        PhaseDiffTensor::new(tp, p, f, pv),
    ))
}

/// Writes via a temporary file and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

pub fn save_features(path: &Path, features: &FeatureTensor, phase: &PhaseDiffTensor) -> io::Result<()> {
    write_atomic(path, &encode_features(features, phase))
}

pub fn load_features(path: &Path) -> Result<(FeatureTensor, PhaseDiffTensor), CacheError> {
    decode_features(&std::fs::read(path)?)
}
