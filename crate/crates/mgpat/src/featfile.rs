//! Binary feature files.
//!
//! Layout (little-endian): magic `MGPF`, u32 version, 32-byte config hash,
//! u64 seed, u32 dim, u32 frame count, f64 frame shift, f64 frame length,
//! u32 id length + UTF-8 id, then `frames * dim` f32 values, frame-major.

use std::path::Path;

use mgpat_core::FeatureSequence;

use crate::binio::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::stamp::Stamp;

const MAGIC: &[u8; 4] = b"MGPF";

pub fn encode_features(fs: &FeatureSequence, stamp: &Stamp) -> Vec<u8> {
    let mut w = Writer::with_header(MAGIC, stamp);
    w.usize(fs.dim());
    w.usize(fs.len());
    w.f64(fs.frame_shift);
    w.f64(fs.frame_length);
    w.str(&fs.utterance_id);
    for &v in fs.as_slice() {
        w.f32(v as f32);
    }
    w.buf
}

pub fn decode_features(bytes: &[u8], path: &Path) -> Result<(FeatureSequence, Stamp)> {
    let (mut r, stamp) = Reader::with_header(bytes, MAGIC, path)?;
    let dim = r.usize()?;
    let frames = r.usize()?;
    let shift = r.f64()?;
    let length = r.f64()?;
    let id = r.str()?;
    if dim == 0 || frames == 0 {
        return Err(r.err("empty feature sequence"));
    }
    let data = (0..dim * frames).map(|_| r.f32().map(f64::from)).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    let fs = FeatureSequence::new(id, dim, data, shift, length).map_err(|e| Error::file(path, e))?;
    Ok((fs, stamp))
}

pub fn write_features(path: &Path, fs: &FeatureSequence, stamp: &Stamp) -> Result<()> {
    write_file(path, &encode_features(fs, stamp))
}

pub fn read_features(path: &Path) -> Result<(FeatureSequence, Stamp)> {
    decode_features(&read_file(path)?, path)
}

/// Rounds values through f32 so in-memory sequences match what a write/read
/// cycle produces.
pub fn quantize(fs: &FeatureSequence) -> FeatureSequence {
    let data = fs.as_slice().iter().map(|&v| v as f32 as f64).collect();
    FeatureSequence::new(fs.utterance_id.clone(), fs.dim(), data, fs.frame_shift, fs.frame_length)
        .expect("same shape")
}
