//! Free-pattern decoding over a loop of all pattern HMMs.
//!
//! N-best decoding passes tokens: every (pattern, state) cell keeps the N best
//! partial hypotheses that differ in (token history, start frame of the
//! current token). Hypotheses that share both are the same token sequence and
//! are merged by keeping the better alignment, so the surviving lists are the
//! exact N best distinct token sequences. N = 1 is ordinary Viterbi.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use super::{check_dim, CompiledSet, NBestList, PatternSet, Token, Transcription};
use crate::error::{Error, Result};
use crate::features::FeatureSequence;
use crate::math;

const ROOT: u32 = u32::MAX;

#[derive(Debug, Clone, Copy)]
struct Hyp {
    score: f64,
    history: u32,
    start: u32,
}

impl Hyp {
    #[inline]
    fn key(&self) -> (u32, u32) {
        (self.history, self.start)
    }

    /// Strict ranking: score, then key.
    #[inline]
    fn outranks(&self, other: &Hyp) -> bool {
        self.score > other.score || (self.score == other.score && self.key() < other.key())
    }
}

#[derive(Debug, Clone, Copy)]
struct Node {
    parent: u32,
    token: Token,
}

/// Fixed-capacity top-N cell storage: `cap` slots per cell.
struct Cells {
    cap: usize,
    hyps: Vec<Hyp>,
    len: Vec<usize>,
}

impl Cells {
    fn new(num_cells: usize, cap: usize) -> Self {
        Self {
            cap,
            hyps: vec![
                Hyp {
                    score: f64::NEG_INFINITY,
                    history: ROOT,
                    start: 0
                };
                num_cells * cap
            ],
            len: vec![0; num_cells],
        }
    }

    fn clear(&mut self) {
        self.len.iter_mut().for_each(|l| *l = 0);
    }

    #[inline]
    fn get(&self, cell: usize) -> &[Hyp] {
        &self.hyps[cell * self.cap..cell * self.cap + self.len[cell]]
    }

    /// Inserts keeping the list sorted, deduplicated by key, and at most `cap` long.
    fn push(&mut self, cell: usize, h: Hyp) {
        if h.score == f64::NEG_INFINITY {
            return;
        }
        let base = cell * self.cap;
        let len = self.len[cell];
        let slots = &mut self.hyps[base..base + self.cap];
        if let Some(pos) = slots[..len].iter().position(|x| x.key() == h.key()) {
            if !(h.score > slots[pos].score) {
                return;
            }
            slots[pos] = h;
            let mut i = pos;
            while i > 0 && slots[i].outranks(&slots[i - 1]) {
                slots.swap(i, i - 1);
                i -= 1;
            }
            return;
        }
        let mut i = if len < self.cap {
            self.len[cell] += 1;
            len
        } else if h.outranks(&slots[len - 1]) {
            len - 1
        } else {
            return;
        };
        slots[i] = h;
        while i > 0 && slots[i].outranks(&slots[i - 1]) {
            slots.swap(i, i - 1);
            i -= 1;
        }
    }

    fn add_to_cell(&mut self, cell: usize, delta: f64) {
        let base = cell * self.cap;
        for h in &mut self.hyps[base..base + self.len[cell]] {
            h.score += delta;
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Exit {
    score: f64,
    parent: u32,
    token: Token,
}

/// Collects pattern exits at frame `t` and keeps the best `cap`.
fn best_exits(c: &CompiledSet, cells: &Cells, t: usize, cap: usize) -> Vec<Exit> {
    let m = c.m;
    let mut exits: Vec<Exit> = Vec::with_capacity(c.n * cells.cap);
    for p in 0..c.n {
        let last = p * m + m - 1;
        for h in cells.get(last) {
            exits.push(Exit {
                score: h.score + c.log_adv[last],
                parent: h.history,
                token: Token {
                    pattern: p,
                    start: h.start as usize,
                    end: t,
                },
            });
        }
    }
    exits.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.token.pattern.cmp(&b.token.pattern))
            .then_with(|| a.parent.cmp(&b.parent))
            .then_with(|| a.token.start.cmp(&b.token.start))
    });
    exits.retain(|e| e.score > f64::NEG_INFINITY);
    exits.truncate(cap);
    exits
}

/// Core lattice search over a precomputed `T x (n*m)` emission table.
/// Returns `(score, tokens)` for up to `cap` distinct token sequences.
pub(crate) fn decode_emissions(c: &CompiledSet, em: &[f64], num_frames: usize, cap: usize) -> Vec<(f64, Vec<Token>)> {
    let (n, m) = (c.n, c.m);
    let nm = n * m;
    let log_prior = -math::ln(n as f64);
    let mut cur = Cells::new(nm, cap);
    let mut next = Cells::new(nm, cap);
    let mut nodes: Vec<Node> = Vec::new();

    for p in 0..n {
        cur.push(
            p * m,
            Hyp {
                score: log_prior + em[p * m],
                history: ROOT,
                start: 0,
            },
        );
    }

    for t in 1..num_frames {
        let exits = best_exits(c, &cur, t - 1, cap);
        let entries: Vec<(f64, u32)> = exits
            .iter()
            .map(|e| {
                nodes.push(Node {
                    parent: e.parent,
                    token: e.token,
                });
                (e.score + log_prior, (nodes.len() - 1) as u32)
            })
            .collect();

        next.clear();
        let row = &em[t * nm..(t + 1) * nm];
        for p in 0..n {
            for s in 0..m {
                let ps = p * m + s;
                let stay = c.log_self[ps];
                for i in 0..cur.len[ps] {
                    let h = cur.hyps[ps * cur.cap + i];
                    next.push(ps, Hyp { score: h.score + stay, ..h });
                }
                if s > 0 {
                    let adv = c.log_adv[ps - 1];
                    for i in 0..cur.len[ps - 1] {
                        let h = cur.hyps[(ps - 1) * cur.cap + i];
                        next.push(ps, Hyp { score: h.score + adv, ..h });
                    }
                } else {
                    for &(score, node) in &entries {
                        next.push(
                            ps,
                            Hyp {
                                score,
                                history: node,
                                start: t as u32,
                            },
                        );
                    }
                }
                next.add_to_cell(ps, row[ps]);
            }
        }
        core::mem::swap(&mut cur, &mut next);
    }

    best_exits(c, &cur, num_frames - 1, cap)
        .into_iter()
        .map(|e| {
            let mut tokens = vec![e.token];
            let mut at = e.parent;
            while at != ROOT {
                let node = nodes[at as usize];
                tokens.push(node.token);
                at = node.parent;
            }
            tokens.reverse();
            (e.score, tokens)
        })
        .collect()
}

fn check_decodable(set: &PatternSet, feats: &FeatureSequence) -> Result<()> {
    check_dim(set, feats)?;
    if feats.len() < set.config.m {
        return Err(Error::UtteranceTooShort {
            utterance: feats.utterance_id.clone(),
            frames: feats.len(),
            required: set.config.m,
        });
    }
    Ok(())
}

fn into_list(utterance_id: &str, mut hyps: Vec<(f64, Vec<Token>)>) -> NBestList {
    hyps.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then_with(|| a.1.cmp(&b.1)));
    NBestList {
        utterance_id: String::from(utterance_id),
        entries: hyps
            .into_iter()
            .map(|(score, tokens)| Transcription {
                utterance_id: String::from(utterance_id),
                tokens,
                log_likelihood: score,
            })
            .collect(),
    }
}

/// Maximum-likelihood tiling of the utterance by pattern HMMs under a uniform
/// `1/n` pattern-transition prior.
pub fn viterbi_free_decode(set: &PatternSet, feats: &FeatureSequence) -> Result<Transcription> {
    let list = nbest_decode(set, feats, 1)?;
    list.entries
        .into_iter()
        .next()
        .ok_or_else(|| Error::Numerical(alloc::format!("no finite path through {}", feats.utterance_id)))
}

/// The `n_best` highest-scoring distinct token sequences.
pub fn nbest_decode(set: &PatternSet, feats: &FeatureSequence, n_best: usize) -> Result<NBestList> {
    if n_best == 0 {
        return Err(Error::InvalidParameter("N must be at least 1".into()));
    }
    check_decodable(set, feats)?;
    let c = CompiledSet::new(set);
    let em = c.emissions(feats);
    Ok(into_list(&feats.utterance_id, decode_emissions(&c, &em, feats.len(), n_best)))
}

/// Decodes once with capacity `n_best` and returns both the list and its head;
/// used by indexing so the 1-best and N-best come from the same lattice.
pub fn nbest_decode_with(set: &PatternSet, feats: &FeatureSequence, n_best: usize) -> Result<(Transcription, NBestList)> {
    let list = nbest_decode(set, feats, n_best)?;
    let best = list
        .best()
        .cloned()
        .ok_or_else(|| Error::Numerical(alloc::format!("no finite path through {}", feats.utterance_id)))?;
    Ok((best, list))
}

#[cfg(test)]
mod tests {
    use super::super::testutil::ladder_set;
    use super::super::{Granularity, MixtureState, PatternHmm};
    use super::*;
    use crate::math::log_sum_exp;
    use proptest::prelude::*;

    /// All ways to split `len` frames into ordered parts of at least `min` frames.
    fn compositions(len: usize, min: usize) -> Vec<Vec<usize>> {
        if len == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for first in min..=len {
            for mut rest in compositions(len - first, min) {
                rest.insert(0, first);
                out.push(rest);
            }
        }
        out
    }

    /// Best in-segment state alignment score of one pattern, by enumerating
    /// every split of the segment into m consecutive non-empty state runs.
    fn oracle_segment(h: &PatternHmm, frames: &[Vec<f64>]) -> f64 {
        let m = h.states.len();
        let mut best = f64::NEG_INFINITY;
        for runs in compositions(frames.len(), 1).into_iter().filter(|r| r.len() == m) {
            let mut score = 0.0;
            let mut t = 0;
            for (s, &run) in runs.iter().enumerate() {
                let st = &h.states[s];
                for i in 0..run {
                    score += st.log_likelihood(&frames[t]).unwrap();
                    score += if i + 1 < run { st.self_loop.ln() } else { (1.0 - st.self_loop).ln() };
                    t += 1;
                }
            }
            best = best.max(score);
        }
        best
    }

    /// Every (segmentation, labelling) with its score, sorted like the decoder.
    fn oracle_enumerate(set: &PatternSet, frames: &[Vec<f64>]) -> Vec<(f64, Vec<Token>)> {
        let m = set.config.m;
        let n = set.hmms.len();
        let prior = -(n as f64).ln();
        let mut all = Vec::new();
        for seg in compositions(frames.len(), m) {
            let k = seg.len();
            for code in 0..n.pow(k as u32) {
                let mut c = code;
                let mut tokens = Vec::new();
                let mut score = 0.0;
                let mut start = 0;
                for &len in &seg {
                    let p = c % n;
                    c /= n;
                    score += prior + oracle_segment(&set.hmms[p], &frames[start..start + len]);
                    tokens.push(Token { pattern: p, start, end: start + len - 1 });
                    start += len;
                }
                all.push((score, tokens));
            }
        }
        all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then_with(|| a.1.cmp(&b.1)));
        all
    }

    fn random_set(m: usize, n: usize, dim: usize, params: &[f64]) -> PatternSet {
        let mut it = params.iter().cycle();
        let hmms = (0..n)
            .map(|p| PatternHmm {
                index: p,
                states: (0..m)
                    .map(|_| {
                        let mean: Vec<f64> = (0..dim).map(|_| it.next().unwrap() * 3.0).collect();
                        let var: Vec<f64> = (0..dim).map(|_| 0.3 + it.next().unwrap().abs()).collect();
                        let sl = 0.1 + 0.8 * it.next().unwrap().abs();
                        MixtureState::single(mean, var, sl)
                    })
                    .collect(),
            })
            .collect();
        PatternSet {
            config: Granularity::new(m, n, 1).unwrap(),
            dim,
            hmms,
            variance_floor: vec![1e-6; dim],
            training_log: Vec::new(),
        }
    }

    #[test]
    fn single_pattern_labels_everything_zero() {
        let set = ladder_set(2, 1, 2, 1.0, 1.0, 0.5);
        let frames: Vec<Vec<f64>> = (0..7).map(|t| vec![t as f64 * 0.1; 2]).collect();
        let fs = FeatureSequence::from_frames("u", &frames).unwrap();
        let tr = viterbi_free_decode(&set, &fs).unwrap();
        assert!(tr.tokens.iter().all(|t| t.pattern == 0));
        tr.validate(7, 2, 1).unwrap();
    }

    #[test]
    fn separable_sample_is_one_token() {
        let set = ladder_set(3, 5, 2, 20.0, 0.5, 0.6);
        // frames sitting on pattern 3's state means, two per state
        let frames: Vec<Vec<f64>> = (0..3)
            .flat_map(|s| {
                let mu = set.hmms[3].states[s].mean(0).to_vec();
                [mu.clone(), mu]
            })
            .collect();
        let fs = FeatureSequence::from_frames("u", &frames).unwrap();
        let tr = viterbi_free_decode(&set, &fs).unwrap();
        assert_eq!(tr.tokens, vec![Token { pattern: 3, start: 0, end: 5 }]);
    }

    #[test]
    fn too_short_utterance_errors() {
        let set = ladder_set(3, 2, 1, 1.0, 1.0, 0.5);
        let fs = FeatureSequence::from_frames("u", &[vec![0.0], vec![0.0]]).unwrap();
        assert!(matches!(
            viterbi_free_decode(&set, &fs),
            Err(Error::UtteranceTooShort { frames: 2, required: 3, .. })
        ));
        assert!(nbest_decode(&set, &fs, 0).is_err());
    }

    #[test]
    fn toy_instance_matches_enumeration() {
        let params = [0.3, -0.7, 0.9, 0.1, -0.2, 0.55, -0.45, 0.8, 0.05, -0.95, 0.66, 0.21];
        let set = random_set(2, 2, 1, &params);
        let frames: Vec<Vec<f64>> = [0.1, 1.5, -0.3, 2.0, 0.7, -1.1].iter().map(|v| vec![*v]).collect();
        let fs = FeatureSequence::from_frames("toy", &frames).unwrap();
        let oracle = oracle_enumerate(&set, &frames);
        let best = viterbi_free_decode(&set, &fs).unwrap();
        assert_eq!(best.tokens, oracle[0].1);
        assert!((best.log_likelihood - oracle[0].0).abs() < 1e-9);
        let list = nbest_decode(&set, &fs, 4).unwrap();
        assert_eq!(list.entries.len(), 4);
        for (e, o) in list.entries.iter().zip(&oracle) {
            assert_eq!(e.tokens, o.1);
            assert!((e.log_likelihood - o.0).abs() < 1e-9);
        }
    }

    #[test]
    fn exhausted_nbest_is_shorter_without_duplicates() {
        let set = ladder_set(2, 2, 1, 1.0, 1.0, 0.5);
        let frames: Vec<Vec<f64>> = (0..4).map(|t| vec![t as f64 * 0.3]).collect();
        let fs = FeatureSequence::from_frames("u", &frames).unwrap();
        // 4 frames, m=2: segmentations [4] and [2,2] -> 2 + 4 labellings
        let list = nbest_decode(&set, &fs, 50).unwrap();
        assert_eq!(list.entries.len(), 6);
        let mut seqs: Vec<_> = list.entries.iter().map(|e| e.tokens.clone()).collect();
        seqs.sort();
        seqs.dedup();
        assert_eq!(seqs.len(), 6);
        // the full sum over the lattice equals the enumeration total
        let oracle = oracle_enumerate(&set, &frames);
        let a = log_sum_exp(&list.entries.iter().map(|e| e.log_likelihood).collect::<Vec<_>>());
        let b = log_sum_exp(&oracle.iter().map(|e| e.0).collect::<Vec<_>>());
        assert!((a - b).abs() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn nbest_head_is_viterbi_and_scores_descend(
            params in proptest::collection::vec(-1.0f64..1.0, 12..40),
            xs in proptest::collection::vec(-2.0f64..2.0, 4..9),
            n in 1usize..4,
            m in 1usize..3,
            nb in 1usize..6,
        ) {
            let set = random_set(m, n, 1, &params);
            let frames: Vec<Vec<f64>> = xs.iter().map(|v| vec![*v]).collect();
            let fs = FeatureSequence::from_frames("p", &frames).unwrap();
            let best = viterbi_free_decode(&set, &fs).unwrap();
            let list = nbest_decode(&set, &fs, nb).unwrap();
            prop_assert_eq!(&list.entries[0], &best);
            prop_assert!(list.entries.windows(2).all(|w| w[0].log_likelihood >= w[1].log_likelihood));
            for e in &list.entries {
                e.validate(frames.len(), m, n).unwrap();
            }
            let oracle = oracle_enumerate(&set, &frames);
            prop_assert_eq!(list.entries.len(), nb.min(oracle.len()));
            for (e, o) in list.entries.iter().zip(&oracle) {
                prop_assert!((e.log_likelihood - o.0).abs() < 1e-9);
            }
        }
    }
}
