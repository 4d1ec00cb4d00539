//! Synthetic spoken-term corpora with planted acoustic units.
//!
//! A hidden inventory of left-to-right HMMs ("units") generates frames. Terms
//! are unit sequences; documents are sequences of terms; queries are fresh
//! renditions of one term. Each speaker applies an affine map to the frames.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::eval::Judgments;
use crate::features::FeatureSequence;
use crate::hmm::{Granularity, MixtureState, PatternHmm, PatternSet};
use crate::math::{mix_seed, sqrt};

#[derive(Debug, Clone, PartialEq)]
pub enum Lexicon {
    /// Terms given as unit index sequences.
    Explicit(Vec<Vec<usize>>),
    /// `terms` random terms of `min_units..=max_units` units with no unit
    /// repeated back to back.
    Generated {
        terms: usize,
        min_units: usize,
        max_units: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub dim: usize,
    pub units: usize,
    pub states_per_unit: usize,
    pub self_loop: f64,
    /// Standard deviation of the state means around the origin.
    pub mean_spread: f64,
    pub emission_std: f64,
    pub lexicon: Lexicon,
    pub speakers: usize,
    /// Scale of the per-speaker affine perturbation; 0 disables it.
    pub perturbation: f64,
    pub documents: usize,
    pub queries: usize,
    pub min_words: usize,
    pub max_words: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            dim: 8,
            units: 10,
            states_per_unit: 3,
            self_loop: 0.75,
            mean_spread: 2.0,
            emission_std: 1.0,
            lexicon: Lexicon::Generated {
                terms: 30,
                min_units: 3,
                max_units: 5,
            },
            speakers: 2,
            perturbation: 0.1,
            documents: 200,
            queries: 20,
            min_words: 3,
            max_words: 6,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(msg.into()));
        if self.documents == 0 {
            return bad("synthetic corpus needs at least one document");
        }
        match &self.lexicon {
            Lexicon::Explicit(terms) => {
                if terms.is_empty() {
                    return bad("empty lexicon");
                }
                if terms.iter().any(|t| t.is_empty() || t.iter().any(|&u| u >= self.units)) {
                    return bad("lexicon term empty or referencing an unknown unit");
                }
            }
            Lexicon::Generated {
                terms,
                min_units,
                max_units,
            } => {
                if *terms == 0 {
                    return bad("empty lexicon");
                }
                if *min_units == 0 || min_units > max_units {
                    return bad("term length range must satisfy 1 <= min <= max");
                }
                if *max_units > 1 && self.units < 2 {
                    return bad("multi-unit terms need at least two units");
                }
            }
        }
        if self.dim == 0 || self.units == 0 || self.states_per_unit == 0 || self.speakers == 0 {
            return bad("dim, units, states_per_unit and speakers must be positive");
        }
        if !(self.self_loop >= 0.0 && self.self_loop < 1.0) {
            return bad("self_loop must lie in [0, 1)");
        }
        if !(self.emission_std > 0.0) || !(self.mean_spread >= 0.0) || !(self.perturbation >= 0.0) {
            return bad("emission_std must be positive, spreads nonnegative");
        }
        if self.min_words == 0 || self.min_words > self.max_words {
            return bad("word count range must satisfy 1 <= min <= max");
        }
        Ok(())
    }
}

/// Per-speaker affine map `x -> A x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerTransform {
    /// Row-major `dim x dim`.
    pub matrix: Vec<f64>,
    pub offset: Vec<f64>,
}

impl SpeakerTransform {
    pub fn identity(dim: usize) -> Self {
        let mut matrix = vec![0.0; dim * dim];
        for i in 0..dim {
            matrix[i * dim + i] = 1.0;
        }
        Self {
            matrix,
            offset: vec![0.0; dim],
        }
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        let d = x.len();
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.offset[i] + (0..d).map(|j| self.matrix[i * d + j] * x[j]).sum::<f64>();
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticUtterance {
    pub features: FeatureSequence,
    pub speaker: usize,
    /// Term indices in spoken order.
    pub words: Vec<usize>,
    /// Unit sequence in spoken order.
    pub units: Vec<usize>,
    /// Generating unit of each frame.
    pub frame_units: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    /// The generator HMMs (before speaker maps), as an `(m, n, 1)` set.
    pub units: PatternSet,
    pub lexicon: Vec<Vec<usize>>,
    pub speakers: Vec<SpeakerTransform>,
    pub documents: Vec<SyntheticUtterance>,
    pub queries: Vec<SyntheticUtterance>,
    /// Term of each query.
    pub query_terms: Vec<usize>,
    /// Documents containing each query's term.
    pub judgments: Judgments,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn generator_units(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> PatternSet {
    let var = spec.emission_std * spec.emission_std;
    let hmms = (0..spec.units)
        .map(|p| PatternHmm {
            index: p,
            states: (0..spec.states_per_unit)
                .map(|_| {
                    let mean = (0..spec.dim).map(|_| spec.mean_spread * normal(rng)).collect();
                    MixtureState::single(mean, vec![var; spec.dim], spec.self_loop)
                })
                .collect(),
        })
        .collect();
    PatternSet {
        config: Granularity {
            m: spec.states_per_unit,
            n: spec.units,
            l: 1,
        },
        dim: spec.dim,
        hmms,
        variance_floor: vec![var * 1e-3; spec.dim],
        training_log: Vec::new(),
    }
}

fn generate_lexicon(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    match &spec.lexicon {
        Lexicon::Explicit(t) => t.clone(),
        Lexicon::Generated {
            terms,
            min_units,
            max_units,
        } => (0..*terms)
            .map(|_| {
                let len = rng.random_range(*min_units..=*max_units);
                let mut term: Vec<usize> = Vec::with_capacity(len);
                while term.len() < len {
                    let u = rng.random_range(0..spec.units);
                    if term.last() != Some(&u) {
                        term.push(u);
                    }
                }
                term
            })
            .collect(),
    }
}

fn speaker_transform(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> SpeakerTransform {
    let d = spec.dim;
    let mut t = SpeakerTransform::identity(d);
    if spec.perturbation == 0.0 {
        return t;
    }
    let s = spec.perturbation / sqrt(d as f64);
    for v in t.matrix.iter_mut() {
        *v += s * normal(rng);
    }
    for v in t.offset.iter_mut() {
        *v = spec.perturbation * spec.mean_spread * normal(rng);
    }
    t
}

struct Renderer<'a> {
    spec: &'a SyntheticSpec,
    units: &'a PatternSet,
}

impl Renderer<'_> {
    /// Frames for `units`: every state emits at least once, then stays with
    /// probability `self_loop`.
    fn render(&self, id: String, units: &[usize], speaker: &SpeakerTransform, rng: &mut ChaCha8Rng) -> (FeatureSequence, Vec<usize>) {
        let d = self.spec.dim;
        let mut data = Vec::new();
        let mut frame_units = Vec::new();
        let mut raw = vec![0.0; d];
        let mut out = vec![0.0; d];
        for &u in units {
            for state in &self.units.hmms[u].states {
                loop {
                    for (k, r) in raw.iter_mut().enumerate() {
                        *r = state.means[k] + self.spec.emission_std * normal(rng);
                    }
                    speaker.apply(&raw, &mut out);
                    data.extend_from_slice(&out);
                    frame_units.push(u);
                    if rng.random::<f64>() >= self.spec.self_loop {
                        break;
                    }
                }
            }
        }
        (FeatureSequence::new(id, d, data, 0.010, 0.025).expect("whole frames"), frame_units)
    }

    fn utterance(
        &self,
        id: String,
        words: Vec<usize>,
        lexicon: &[Vec<usize>],
        speaker: usize,
        transforms: &[SpeakerTransform],
        rng: &mut ChaCha8Rng,
    ) -> SyntheticUtterance {
        let units: Vec<usize> = words.iter().flat_map(|&w| lexicon[w].iter().copied()).collect();
        let (features, frame_units) = self.render(id, &units, &transforms[speaker], rng);
        SyntheticUtterance {
            features,
            speaker,
            words,
            units,
            frame_units,
        }
    }
}

/// Generates a corpus; identical spec and seed give identical output.
pub fn synthesize_corpus(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticCorpus> {
    spec.validate()?;
    // separate streams so that, e.g., adding queries leaves documents intact
    let mut model_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 1));
    let mut doc_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 2));
    let mut query_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 3));

    let units = generator_units(spec, &mut model_rng);
    let lexicon = generate_lexicon(spec, &mut model_rng);
    let speakers: Vec<SpeakerTransform> = (0..spec.speakers).map(|_| speaker_transform(spec, &mut model_rng)).collect();
    let r = Renderer { spec, units: &units };

    let mut documents = Vec::with_capacity(spec.documents);
    for i in 0..spec.documents {
        let count = doc_rng.random_range(spec.min_words..=spec.max_words);
        let words: Vec<usize> = (0..count).map(|_| doc_rng.random_range(0..lexicon.len())).collect();
        let speaker = i % spec.speakers;
        documents.push(r.utterance(format!("doc{i:05}"), words, &lexicon, speaker, &speakers, &mut doc_rng));
    }

    let mut containing: BTreeMap<usize, BTreeSet<String>> = BTreeMap::new();
    for d in &documents {
        for &w in &d.words {
            containing.entry(w).or_default().insert(d.features.utterance_id.clone());
        }
    }
    // only terms that occur somewhere can be queried; cycle through them in
    // a shuffled order so terms repeat only after all have been used
    let mut spoken: Vec<usize> = containing.keys().copied().collect();
    let mut queries = Vec::with_capacity(spec.queries);
    let mut query_terms = Vec::with_capacity(spec.queries);
    let mut judgments = Judgments::new();
    let mut order: Vec<usize> = Vec::new();
    for q in 0..spec.queries {
        if order.is_empty() {
            rand::seq::SliceRandom::shuffle(spoken.as_mut_slice(), &mut query_rng);
            order = spoken.iter().rev().copied().collect();
        }
        let term = order.pop().expect("non-empty");
        let speaker = query_rng.random_range(0..spec.speakers);
        let id = format!("query{q:04}");
        judgments.insert(id.clone(), containing[&term].clone());
        queries.push(r.utterance(id, vec![term], &lexicon, speaker, &speakers, &mut query_rng));
        query_terms.push(term);
    }

    Ok(SyntheticCorpus {
        units,
        lexicon,
        speakers,
        documents,
        queries,
        query_terms,
        judgments,
    })
}

/// `1 - edit_distance(reference, hypothesis) / |reference|`.
pub fn unit_accuracy(reference: &[usize], hypothesis: &[usize]) -> f64 {
    if reference.is_empty() {
        return if hypothesis.is_empty() { 1.0 } else { 0.0 };
    }
    let mut prev: Vec<usize> = (0..=hypothesis.len()).collect();
    let mut cur = vec![0; hypothesis.len() + 1];
    for (i, r) in reference.iter().enumerate() {
        cur[0] = i + 1;
        for (j, h) in hypothesis.iter().enumerate() {
            let sub = prev[j] + usize::from(r != h);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    1.0 - prev[hypothesis.len()] as f64 / reference.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmm::viterbi_free_decode;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            documents: 12,
            queries: 4,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let a = synthesize_corpus(&small(), 5).unwrap();
        let b = synthesize_corpus(&small(), 5).unwrap();
        assert_eq!(a, b);
        let c = synthesize_corpus(&small(), 6).unwrap();
        assert_ne!(a.documents[0].features, c.documents[0].features);
    }

    #[test]
    fn single_term_judges_every_document() {
        let spec = SyntheticSpec {
            lexicon: Lexicon::Explicit(vec![vec![0, 1, 2]]),
            documents: 3,
            queries: 1,
            min_words: 1,
            max_words: 2,
            ..SyntheticSpec::default()
        };
        let c = synthesize_corpus(&spec, 1).unwrap();
        let all: BTreeSet<String> = c.documents.iter().map(|d| d.features.utterance_id.clone()).collect();
        assert_eq!(c.judgments["query0000"], all);
    }

    #[test]
    fn judgments_are_exactly_containing_documents() {
        let c = synthesize_corpus(&small(), 9).unwrap();
        for (q, &term) in c.queries.iter().zip(&c.query_terms) {
            let expect: BTreeSet<String> = c
                .documents
                .iter()
                .filter(|d| d.words.contains(&term))
                .map(|d| d.features.utterance_id.clone())
                .collect();
            assert!(!expect.is_empty());
            assert_eq!(c.judgments[&q.features.utterance_id], expect);
        }
    }

    #[test]
    fn rejects_degenerate_specs() {
        let empty = SyntheticSpec {
            lexicon: Lexicon::Explicit(Vec::new()),
            ..small()
        };
        assert!(synthesize_corpus(&empty, 0).is_err());
        let no_docs = SyntheticSpec { documents: 0, ..small() };
        assert!(synthesize_corpus(&no_docs, 0).is_err());
    }

    #[test]
    fn zero_perturbation_speakers_share_statistics() {
        let spec = SyntheticSpec {
            perturbation: 0.0,
            ..small()
        };
        let c = synthesize_corpus(&spec, 2).unwrap();
        assert_eq!(c.speakers[0], c.speakers[1]);
        assert_eq!(c.speakers[0], SpeakerTransform::identity(spec.dim));
    }

    #[test]
    fn planted_units_recovered_by_true_models() {
        let spec = SyntheticSpec {
            perturbation: 0.0,
            documents: 40,
            ..SyntheticSpec::default()
        };
        let c = synthesize_corpus(&spec, 11).unwrap();
        let (mut errors, mut total) = (0.0, 0usize);
        for d in &c.documents {
            let t = viterbi_free_decode(&c.units, &d.features).unwrap();
            errors += (1.0 - unit_accuracy(&d.units, &t.patterns())) * d.units.len() as f64;
            total += d.units.len();
        }
        let acc = 1.0 - errors / total as f64;
        assert!(acc >= 0.95, "unit accuracy {acc}");
    }

    #[test]
    fn edit_distance_accuracy() {
        assert_eq!(unit_accuracy(&[1, 2, 3, 4], &[1, 2, 3, 4]), 1.0);
        assert_eq!(unit_accuracy(&[1, 2, 3, 4], &[1, 3, 4]), 0.75);
        assert_eq!(unit_accuracy(&[1, 2], &[5, 1, 2, 6]), 0.0);
    }
}
