//! Similarity matrix files.
//!
//! Layout (little-endian): magic `MGPS`, u32 version, 32-byte config hash,
//! u64 seed, u32 m, n, l, u8 mode (0 hard, 1 soft), f64 beta, then `n * n`
//! f32 values, row-major.

use std::path::Path;

use mgpat_core::{Granularity, SimilarityMatrix, SimilarityMode};

use crate::binio::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::stamp::Stamp;

const MAGIC: &[u8; 4] = b"MGPS";

pub fn encode_similarity(s: &SimilarityMatrix, stamp: &Stamp) -> Vec<u8> {
    let mut w = Writer::with_header(MAGIC, stamp);
    for v in [s.psi.m, s.psi.n, s.psi.l] {
        w.usize(v);
    }
    w.u8(match s.mode {
        SimilarityMode::Hard => 0,
        SimilarityMode::Soft => 1,
    });
    w.f64(s.beta);
    for &v in s.values() {
        w.f32(v as f32);
    }
    w.buf
}

pub fn decode_similarity(bytes: &[u8], path: &Path) -> Result<(SimilarityMatrix, Stamp)> {
    let (mut r, stamp) = Reader::with_header(bytes, MAGIC, path)?;
    let (m, n, l) = (r.usize()?, r.usize()?, r.usize()?);
    let psi = Granularity::new(m, n, l).map_err(|e| Error::file(path, e))?;
    let mode = match r.u8()? {
        0 => SimilarityMode::Hard,
        1 => SimilarityMode::Soft,
        other => return Err(r.err(format!("unknown similarity mode {other}"))),
    };
    let beta = r.f64()?;
    let values = (0..n * n).map(|_| r.f32().map(f64::from)).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    let s = SimilarityMatrix::from_values(psi, mode, beta, values).map_err(|e| Error::file(path, e))?;
    Ok((s, stamp))
}

pub fn write_similarity(path: &Path, s: &SimilarityMatrix, stamp: &Stamp) -> Result<()> {
    write_file(path, &encode_similarity(s, stamp))
}

pub fn read_similarity(path: &Path) -> Result<(SimilarityMatrix, Stamp)> {
    decode_similarity(&read_file(path)?, path)
}

/// The matrix as it reads back from disk.
pub fn quantize(s: &SimilarityMatrix) -> SimilarityMatrix {
    let values = s.values().iter().map(|&v| v as f32 as f64).collect();
    SimilarityMatrix::from_values(s.psi, s.mode, s.beta, values).expect("f32 rounding keeps [0, 1]")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let psi = Granularity::new(3, 2, 1).unwrap();
        let s = SimilarityMatrix::from_values(psi, SimilarityMode::Soft, 300.0, vec![1.0, 0.3, 0.3, 1.0]).unwrap();
        let stamp = Stamp::of("s", &[], 0);
        let (back, st) = decode_similarity(&encode_similarity(&s, &stamp), Path::new("s")).unwrap();
        assert_eq!(back, quantize(&s));
        assert_eq!(st, stamp);
    }
}
