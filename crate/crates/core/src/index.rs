//! Offline archive indexing: 1-best and N-best pattern transcriptions plus
//! duration posteriorgrams, one vector per 1-best token position.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::exec::{Executor, Sequential};
use crate::features::FeatureSequence;
use crate::hmm::{nbest_decode_with, Granularity, NBestList, PatternSet, Transcription};

/// Sparse probability vector over patterns: `(pattern, mass)` sorted by pattern.
pub type SparseVector = Vec<(usize, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct Posteriorgram {
    pub utterance_id: String,
    pub psi: Granularity,
    pub positions: Vec<SparseVector>,
}

impl Posteriorgram {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Dense copy of position `i`.
    pub fn dense(&self, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.psi.n];
        for &(p, w) in &self.positions[i] {
            v[p] = w;
        }
        v
    }
}

/// For every 1-best token span and every N-best entry, counts the frames in
/// the span carrying each pattern label; the counts are divided by
/// `span length x number of entries`.
pub fn build_posteriorgram(nbest: &NBestList, best: &Transcription, psi: Granularity) -> Result<Posteriorgram> {
    if nbest.entries.is_empty() {
        return Err(Error::InvalidParameter(alloc::format!(
            "empty N-best list for {}",
            nbest.utterance_id
        )));
    }
    let num_frames = best.num_frames();
    let labels: Vec<Vec<usize>> = nbest.entries.iter().map(|e| e.frame_labels()).collect();
    for (e, l) in nbest.entries.iter().zip(&labels) {
        if l.len() != num_frames {
            return Err(Error::InvalidParameter(alloc::format!(
                "N-best entry of {} covers {} frames, 1-best covers {num_frames}",
                e.utterance_id,
                l.len()
            )));
        }
    }
    let mut positions = Vec::with_capacity(best.tokens.len());
    for tok in &best.tokens {
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for l in &labels {
            for &p in &l[tok.start..=tok.end] {
                if p >= psi.n {
                    return Err(Error::InvalidParameter(alloc::format!("pattern {p} outside n={}", psi.n)));
                }
                *counts.entry(p).or_default() += 1;
            }
        }
        let total = (tok.len() * labels.len()) as f64;
        positions.push(counts.into_iter().map(|(p, c)| (p, c as f64 / total)).collect());
    }
    Ok(Posteriorgram {
        utterance_id: best.utterance_id.clone(),
        psi,
        positions,
    })
}

/// Decoded form of one utterance under one pattern set.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub transcription: Transcription,
    pub nbest: NBestList,
    pub posteriorgram: Posteriorgram,
}

impl IndexEntry {
    pub fn psi(&self) -> Granularity {
        self.posteriorgram.psi
    }

    pub fn patterns(&self) -> Vec<usize> {
        self.transcription.patterns()
    }
}

/// Decodes one utterance (document or query) into an index entry.
pub fn index_utterance(set: &PatternSet, feats: &FeatureSequence, n_best: usize) -> Result<IndexEntry> {
    let (best, nbest) = nbest_decode_with(set, feats, n_best)?;
    let posteriorgram = build_posteriorgram(&nbest, &best, set.config)?;
    Ok(IndexEntry {
        transcription: best,
        nbest,
        posteriorgram,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchiveIndex {
    pub psi: Granularity,
    pub n_best: usize,
    pub entries: BTreeMap<String, IndexEntry>,
    /// Utterances that could not be decoded.
    pub failures: BTreeMap<String, Error>,
}

impl ArchiveIndex {
    pub fn get(&self, utterance_id: &str) -> Result<&IndexEntry> {
        self.entries
            .get(utterance_id)
            .ok_or_else(|| Error::UnknownUtterance(utterance_id.into()))
    }
}

pub fn build_index(set: &PatternSet, corpus: &[FeatureSequence], n_best: usize) -> Result<ArchiveIndex> {
    build_index_with(set, corpus, n_best, &Sequential)
}

pub fn build_index_with<E: Executor>(
    set: &PatternSet,
    corpus: &[FeatureSequence],
    n_best: usize,
    exec: &E,
) -> Result<ArchiveIndex> {
    if n_best == 0 {
        return Err(Error::InvalidParameter("N must be at least 1".into()));
    }
    let results = exec.map(corpus, |fs| index_utterance(set, fs, n_best));
    let mut index = ArchiveIndex {
        psi: set.config,
        n_best,
        entries: BTreeMap::new(),
        failures: BTreeMap::new(),
    };
    for (fs, r) in corpus.iter().zip(results) {
        match r {
            Ok(e) => {
                index.entries.insert(fs.utterance_id.clone(), e);
            }
            Err(e) => {
                index.failures.insert(fs.utterance_id.clone(), e);
            }
        }
    }
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmm::testutil::ladder_set;
    use crate::hmm::{viterbi_free_decode, Token};

    fn tr(tokens: &[(usize, usize, usize)], score: f64) -> Transcription {
        Transcription {
            utterance_id: "u".into(),
            tokens: tokens
                .iter()
                .map(|&(pattern, start, end)| Token { pattern, start, end })
                .collect(),
            log_likelihood: score,
        }
    }

    #[test]
    fn hand_accumulated_masses() {
        // span of 4 frames: (A,A,A,A) in entry 1, (A,A,B,B) in entry 2
        let best = tr(&[(0, 0, 3)], -1.0);
        let second = tr(&[(0, 0, 1), (1, 2, 3)], -2.0);
        let list = NBestList {
            utterance_id: "u".into(),
            entries: vec![best.clone(), second],
        };
        let pg = build_posteriorgram(&list, &best, Granularity::new(1, 2, 1).unwrap()).unwrap();
        assert_eq!(pg.positions, vec![vec![(0, 6.0 / 8.0), (1, 2.0 / 8.0)]]);
    }

    #[test]
    fn single_or_repeated_entry_is_one_hot() {
        let best = tr(&[(2, 0, 2), (0, 3, 5)], -1.0);
        let psi = Granularity::new(1, 3, 1).unwrap();
        let one = NBestList {
            utterance_id: "u".into(),
            entries: vec![best.clone()],
        };
        let three = NBestList {
            utterance_id: "u".into(),
            entries: vec![best.clone(), best.clone(), best.clone()],
        };
        let a = build_posteriorgram(&one, &best, psi).unwrap();
        let b = build_posteriorgram(&three, &best, psi).unwrap();
        assert_eq!(a.positions, vec![vec![(2, 1.0)], vec![(0, 1.0)]]);
        assert_eq!(a, b);
    }

    #[test]
    fn majority_label_is_argmax() {
        let best = tr(&[(1, 0, 5)], -1.0);
        let alt = tr(&[(0, 0, 2), (1, 3, 5)], -1.5);
        let alt2 = tr(&[(2, 0, 3), (1, 4, 5)], -1.7);
        let list = NBestList {
            utterance_id: "u".into(),
            entries: vec![best.clone(), alt, alt2],
        };
        let pg = build_posteriorgram(&list, &best, Granularity::new(2, 3, 1).unwrap()).unwrap();
        let v = pg.dense(0);
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(v[1] > v[0] && v[1] > v[2]);
    }

    #[test]
    fn index_with_n1_is_one_hot_at_best() {
        let set = ladder_set(2, 3, 1, 3.0, 0.8, 0.6);
        let corpus: Vec<FeatureSequence> = (0..3)
            .map(|u| {
                let frames: Vec<Vec<f64>> = (0..9).map(|t| vec![((t + u) % 7) as f64]).collect();
                FeatureSequence::from_frames(alloc::format!("u{u}"), &frames).unwrap()
            })
            .collect();
        let index = build_index(&set, &corpus, 1).unwrap();
        assert_eq!(index.entries.len(), 3);
        for fs in &corpus {
            let e = index.get(&fs.utterance_id).unwrap();
            let best = viterbi_free_decode(&set, fs).unwrap();
            assert_eq!(e.transcription, best);
            for (pos, tok) in e.posteriorgram.positions.iter().zip(&best.tokens) {
                assert_eq!(pos, &vec![(tok.pattern, 1.0)]);
            }
        }
        assert_eq!(index, build_index(&set, &corpus, 1).unwrap());
    }

    #[test]
    fn short_utterance_recorded_as_failure() {
        let set = ladder_set(3, 2, 1, 3.0, 0.8, 0.6);
        let ok = FeatureSequence::from_frames("ok", &vec![vec![0.0]; 6]).unwrap();
        let short = FeatureSequence::from_frames("short", &[vec![0.0]]).unwrap();
        let index = build_index(&set, &[ok, short], 2).unwrap();
        assert!(index.entries.contains_key("ok"));
        assert!(index.failures.contains_key("short"));
    }
}
