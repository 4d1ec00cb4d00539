//! Pattern-set bundles.
//!
//! Binary layout (little-endian): magic `MGPB`, u32 version, 32-byte config
//! hash, u64 seed, u32 m, n, l, dim, `dim` f64 variance floor, then for each
//! pattern and state: f64 self-loop, `l` f64 weights, `l * dim` f64 means,
//! `l * dim` f64 variances. A u32 count of training-log records follows,
//! each u32 iteration, f64 log-likelihood, f64 label-change fraction.

use std::fmt::Write as _;
use std::path::Path;

use mgpat_core::discovery::Provenance;
use mgpat_core::hmm::{IterationLog, MixtureState};
use mgpat_core::{Granularity, PatternHmm, PatternSet};

use crate::binio::{read_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::stamp::Stamp;

const MAGIC: &[u8; 4] = b"MGPB";

pub fn encode_bundle(set: &PatternSet, stamp: &Stamp) -> Vec<u8> {
    let psi = set.config;
    let mut w = Writer::with_header(MAGIC, stamp);
    for v in [psi.m, psi.n, psi.l, set.dim] {
        w.usize(v);
    }
    w.f64s(&set.variance_floor);
    for hmm in &set.hmms {
        for s in &hmm.states {
            w.f64(s.self_loop);
            w.f64s(&s.weights);
            w.f64s(&s.means);
            w.f64s(&s.variances);
        }
    }
    w.usize(set.training_log.len());
    for log in &set.training_log {
        w.usize(log.iteration);
        w.f64(log.log_likelihood);
        w.f64(log.label_change);
    }
    w.buf
}

pub fn decode_bundle(bytes: &[u8], path: &Path) -> Result<(PatternSet, Stamp)> {
    let (mut r, stamp) = Reader::with_header(bytes, MAGIC, path)?;
    let (m, n, l, dim) = (r.usize()?, r.usize()?, r.usize()?, r.usize()?);
    let config = Granularity::new(m, n, l).map_err(|e| Error::file(path, e))?;
    let variance_floor = r.f64s(dim)?;
    let mut hmms = Vec::with_capacity(n);
    for index in 0..n {
        let mut states = Vec::with_capacity(m);
        for _ in 0..m {
            let self_loop = r.f64()?;
            states.push(MixtureState {
                weights: r.f64s(l)?,
                means: r.f64s(l * dim)?,
                variances: r.f64s(l * dim)?,
                self_loop,
            });
        }
        hmms.push(PatternHmm { index, states });
    }
    let logs = r.usize()?;
    let mut training_log = Vec::with_capacity(logs);
    for _ in 0..logs {
        training_log.push(IterationLog {
            iteration: r.usize()?,
            log_likelihood: r.f64()?,
            label_change: r.f64()?,
        });
    }
    r.finish()?;
    let set = PatternSet {
        config,
        dim,
        hmms,
        variance_floor,
        training_log,
    };
    set.validate().map_err(|e| Error::file(path, e))?;
    Ok((set, stamp))
}

pub fn read_bundle(path: &Path) -> Result<(PatternSet, Stamp)> {
    decode_bundle(&read_file(path)?, path)
}

/// Human-readable companion of a bundle.
pub fn summary(set: &PatternSet, provenance: Option<&Provenance>, stamp: &Stamp) -> String {
    let mut s = crate::stamp::text_header("pattern-summary", stamp);
    let psi = set.config;
    let _ = writeln!(s, "psi {psi}");
    let _ = writeln!(s, "states_per_pattern {}\npatterns {}\ngaussians_per_state {}\ndim {}", psi.m, psi.n, psi.l, set.dim);
    if let Some(p) = provenance {
        match p.derived_from {
            Some(from) => {
                let _ = writeln!(s, "derived_from {from}");
            }
            None => s.push_str("derived_from -\n"),
        }
        let _ = writeln!(s, "iterations {}", p.iterations);
    }
    s.push_str("iteration log_likelihood label_change\n");
    for log in &set.training_log {
        let _ = writeln!(s, "{} {:.6} {:.6}", log.iteration, log.log_likelihood, log.label_change);
    }
    s.push_str("pattern mean_self_loop\n");
    for hmm in &set.hmms {
        let mean_loop = hmm.states.iter().map(|st| st.self_loop).sum::<f64>() / hmm.states.len() as f64;
        let _ = writeln!(s, "{} {:.4}", hmm.index, mean_loop);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundle_round_trip_is_exact() {
        let states = vec![
            MixtureState {
                weights: vec![0.25, 0.75],
                means: vec![0.1, 0.2, -0.3, 0.4],
                variances: vec![1.0, 2.0, 0.5, 0.25],
                self_loop: 0.6,
            };
            2
        ];
        let set = PatternSet {
            config: Granularity::new(2, 2, 2).unwrap(),
            dim: 2,
            hmms: (0..2).map(|index| PatternHmm { index, states: states.clone() }).collect(),
            variance_floor: vec![1e-3, 1e-3],
            training_log: vec![IterationLog {
                iteration: 1,
                log_likelihood: -12.5,
                label_change: 0.25,
            }],
        };
        let stamp = Stamp::of("b", &[], 1);
        let bytes = encode_bundle(&set, &stamp);
        let (back, s) = decode_bundle(&bytes, Path::new("b")).unwrap();
        assert_eq!(back, set);
        assert_eq!(s, stamp);
        assert!(summary(&set, None, &stamp).contains("psi m2n2l2"));
    }
}
