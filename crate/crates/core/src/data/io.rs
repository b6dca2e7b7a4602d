//! Binary feature (`MMAF1`) and waveform (`MMWV1`) files.
//!
//! Features: magic, `u32` frame count, `u32` dim, then `frames × dim`
//! little-endian `f64` row-major. Waveforms: magic, `u32` sample count, then
//! little-endian `f64` samples in `[-1, 1]`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const FEATURE_MAGIC: &[u8; 5] = b"MMAF1";
pub const WAVEFORM_MAGIC: &[u8; 5] = b"MMWV1";

fn read_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::corrupt(path, "truncated header"))
}

fn read_f64s(bytes: &[u8], count: usize, path: &Path) -> Result<Vec<f64>> {
    if bytes.len() != count * 8 {
        return Err(Error::corrupt(
            path,
            format!("expected {} payload bytes, found {}", count * 8, bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect())
}

pub fn write_features(path: &Path, features: &Matrix) -> Result<()> {
    if !features.is_finite() {
        return Err(Error::Config(format!("refusing to write non-finite features to {}", path.display())));
    }
    let mut buf = Vec::with_capacity(13 + 8 * features.as_slice().len());
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&(features.rows() as u32).to_le_bytes());
    buf.extend_from_slice(&(features.cols() as u32).to_le_bytes());
    for v in features.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<Matrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 5 || &bytes[..5] != FEATURE_MAGIC {
        return Err(Error::corrupt(path, "bad magic, expected MMAF1"));
    }
    let frames = read_u32(&bytes, 5, path)? as usize;
    let dim = read_u32(&bytes, 9, path)? as usize;
    if frames == 0 || dim == 0 {
        return Err(Error::corrupt(path, format!("empty feature matrix {frames}x{dim}")));
    }
    let values = read_f64s(&bytes[13..], frames * dim, path)?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::corrupt(path, "non-finite feature value"));
    }
    Matrix::from_vec(frames, dim, values)
}

pub fn write_waveform(path: &Path, samples: &[f64]) -> Result<()> {
    if let Some(bad) = samples.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
        return Err(Error::Config(format!("waveform sample {bad} outside [-1, 1] for {}", path.display())));
    }
    let mut buf = Vec::with_capacity(9 + 8 * samples.len());
    buf.extend_from_slice(WAVEFORM_MAGIC);
    buf.extend_from_slice(&(samples.len() as u32).to_le_bytes());
    for v in samples {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_waveform(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 5 || &bytes[..5] != WAVEFORM_MAGIC {
        return Err(Error::corrupt(path, "bad magic, expected MMWV1"));
    }
    let count = read_u32(&bytes, 5, path)? as usize;
    let samples = read_f64s(&bytes[9..], count, path)?;
    if samples.iter().any(|v| !(-1.0..=1.0).contains(v)) {
        return Err(Error::corrupt(path, "sample outside [-1, 1]"));
    }
    Ok(samples)
}
