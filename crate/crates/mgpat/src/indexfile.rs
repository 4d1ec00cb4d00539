//! Text index files, one per granularity and role.
//!
//! ```text
//! # mgpat index v1
//! # config_hash <hex>
//! # seed <u64>
//! psi m3n5l1
//! n_best 5
//! utt <id> <frames>
//! best <log-likelihood> <pattern>:<start>:<end> ...
//! nbest <log-likelihood> <pattern>:<start>:<end> ...     (one per entry)
//! post <pattern>:<mass> ...                              (one per position)
//! end
//! fail <id> <reason>
//! ```
//!
//! Token ends are inclusive. Floats use the shortest representation that
//! reads back to the same value.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use mgpat_core::hmm::NBestList;
use mgpat_core::{ArchiveIndex, Granularity, IndexEntry, Posteriorgram, Token, Transcription};

use crate::error::{Error, Result};
use crate::stamp::{parse_text_header, text_header, Stamp};

fn tokens(out: &mut String, t: &Transcription) {
    let _ = write!(out, "{:?}", t.log_likelihood);
    for tok in &t.tokens {
        let _ = write!(out, " {}:{}:{}", tok.pattern, tok.start, tok.end);
    }
    out.push('\n');
}

pub fn encode_index(index: &ArchiveIndex, stamp: &Stamp) -> String {
    let mut s = text_header("index", stamp);
    let _ = writeln!(s, "psi {}\nn_best {}", index.psi, index.n_best);
    for (id, e) in &index.entries {
        let _ = writeln!(s, "utt {id} {}", e.transcription.num_frames());
        s.push_str("best ");
        tokens(&mut s, &e.transcription);
        for n in &e.nbest.entries {
            s.push_str("nbest ");
            tokens(&mut s, n);
        }
        for pos in &e.posteriorgram.positions {
            s.push_str("post");
            for (p, mass) in pos {
                let _ = write!(s, " {p}:{mass:?}");
            }
            s.push('\n');
        }
        s.push_str("end\n");
    }
    for (id, err) in &index.failures {
        let reason = err.to_string().replace('\n', " ");
        let _ = writeln!(s, "fail {id} {reason}");
    }
    s
}

struct Parser<'a> {
    path: &'a Path,
    line: usize,
}

impl Parser<'_> {
    fn err(&self, msg: impl std::fmt::Display) -> Error {
        Error::file(self.path, format!("line {}: {msg}", self.line))
    }

    fn num<T: std::str::FromStr>(&self, s: &str) -> Result<T> {
        s.parse().map_err(|_| self.err(format!("bad number {s:?}")))
    }

    fn transcription(&self, id: &str, rest: &str) -> Result<Transcription> {
        let mut it = rest.split_whitespace();
        let ll = self.num(it.next().ok_or_else(|| self.err("missing log-likelihood"))?)?;
        let tokens = it
            .map(|tok| {
                let f: Vec<&str> = tok.split(':').collect();
                if f.len() != 3 {
                    return Err(self.err(format!("bad token {tok:?}")));
                }
                Ok(Token {
                    pattern: self.num(f[0])?,
                    start: self.num(f[1])?,
                    end: self.num(f[2])?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Transcription {
            utterance_id: id.to_string(),
            tokens,
            log_likelihood: ll,
        })
    }
}

pub fn decode_index(text: &str, path: &Path) -> Result<(ArchiveIndex, Stamp)> {
    let stamp = parse_text_header(text).ok_or_else(|| Error::file(path, "missing config hash header"))?;
    let mut p = Parser { path, line: 0 };
    let mut psi: Option<Granularity> = None;
    let mut n_best = 0;
    let mut entries = BTreeMap::new();
    let mut failures = BTreeMap::new();
    let mut current: Option<(String, usize, Option<Transcription>, Vec<Transcription>, Vec<Vec<(usize, f64)>>)> = None;
    for (i, line) in text.lines().enumerate() {
        p.line = i + 1;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let (tag, rest) = line.split_once(' ').unwrap_or((line, ""));
        match (tag, current.as_mut()) {
            ("psi", None) => psi = Some(rest.trim().parse().map_err(|e| p.err(e))?),
            ("n_best", None) => n_best = p.num(rest.trim())?,
            ("utt", None) => {
                let mut it = rest.split_whitespace();
                let id = it.next().ok_or_else(|| p.err("missing id"))?.to_string();
                let frames = p.num(it.next().ok_or_else(|| p.err("missing frame count"))?)?;
                current = Some((id, frames, None, Vec::new(), Vec::new()));
            }
            ("fail", None) => {
                let (id, reason) = rest.split_once(' ').unwrap_or((rest, ""));
                // stored reasons are already rendered; keep re-encoding stable
                let reason = reason.strip_prefix("numerical failure: ").unwrap_or(reason);
                failures.insert(id.to_string(), mgpat_core::Error::Numerical(reason.to_string()));
            }
            ("best", Some(c)) => c.2 = Some(p.transcription(&c.0, rest)?),
            ("nbest", Some(c)) => {
                let t = p.transcription(&c.0, rest)?;
                c.3.push(t);
            }
            ("post", Some(c)) => {
                let pos = rest
                    .split_whitespace()
                    .map(|pm| {
                        let (a, b) = pm.split_once(':').ok_or_else(|| p.err(format!("bad mass {pm:?}")))?;
                        Ok((p.num(a)?, p.num(b)?))
                    })
                    .collect::<Result<Vec<_>>>()?;
                c.4.push(pos);
            }
            ("end", Some(_)) => {
                let (id, frames, best, nbest, positions) = current.take().expect("matched Some");
                let best = best.ok_or_else(|| p.err("entry without best line"))?;
                if best.num_frames() != frames {
                    return Err(p.err(format!("{id}: tokens cover {} of {frames} frames", best.num_frames())));
                }
                let psi = psi.ok_or_else(|| p.err("psi line missing"))?;
                let entry = IndexEntry {
                    nbest: NBestList {
                        utterance_id: id.clone(),
                        entries: nbest,
                    },
                    posteriorgram: Posteriorgram {
                        utterance_id: id.clone(),
                        psi,
                        positions,
                    },
                    transcription: best,
                };
                entries.insert(id, entry);
            }
            (t, _) => return Err(p.err(format!("unexpected {t:?}"))),
        }
    }
    if current.is_some() {
        return Err(Error::file(path, "truncated index (missing end)"));
    }
    let psi = psi.ok_or_else(|| Error::file(path, "psi line missing"))?;
    Ok((
        ArchiveIndex {
            psi,
            n_best,
            entries,
            failures,
        },
        stamp,
    ))
}

pub fn read_index(path: &Path) -> Result<(ArchiveIndex, Stamp)> {
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    decode_index(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use mgpat_core::build_posteriorgram;

    #[test]
    fn index_round_trip_is_exact() {
        let psi = Granularity::new(2, 3, 1).unwrap();
        let t = |toks: &[(usize, usize, usize)], ll: f64| Transcription {
            utterance_id: "d1".into(),
            tokens: toks.iter().map(|&(pattern, start, end)| Token { pattern, start, end }).collect(),
            log_likelihood: ll,
        };
        let best = t(&[(0, 0, 2), (2, 3, 5)], -10.123456789);
        let nbest = NBestList {
            utterance_id: "d1".into(),
            entries: vec![best.clone(), t(&[(1, 0, 1), (2, 2, 5)], -11.0 / 3.0)],
        };
        let posteriorgram = build_posteriorgram(&nbest, &best, psi).unwrap();
        let mut index = ArchiveIndex {
            psi,
            n_best: 2,
            entries: BTreeMap::new(),
            failures: BTreeMap::new(),
        };
        index.entries.insert(
            "d1".into(),
            IndexEntry {
                transcription: best,
                nbest,
                posteriorgram,
            },
        );
        index
            .failures
            .insert("d2".into(), mgpat_core::Error::Numerical("too short".into()));
        let stamp = Stamp::of("i", &[], 2);
        let text = encode_index(&index, &stamp);
        let (back, s) = decode_index(&text, Path::new("i")).unwrap();
        assert_eq!(s, stamp);
        assert_eq!(back.entries, index.entries);
        assert_eq!(back.failures.keys().collect::<Vec<_>>(), vec!["d2"]);
        assert_eq!(encode_index(&back, &stamp), text);
    }
}
