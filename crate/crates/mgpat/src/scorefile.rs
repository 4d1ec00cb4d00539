//! Score tables, fused rankings and fusion-weight (lambda) files.
//!
//! Score table records: `query_id doc_id psi gamma score`.
//! Ranking records: `query_id doc:score doc:score ...` in rank order.
//! Lambda records: `psi/gamma weight` with weight 0 or 1; keys not listed
//! are disabled.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use mgpat_core::eval::rank_documents;
use mgpat_core::{RelevanceTable, RunKey};

use crate::error::{Error, Result};
use crate::stamp::{parse_text_header, text_header, Stamp};

pub fn parse_run_key(s: &str) -> Option<RunKey> {
    let (psi, gamma) = s.split_once('/')?;
    Some(RunKey {
        psi: psi.parse().ok()?,
        method: gamma.parse().ok()?,
    })
}

pub fn encode_scores(table: &RelevanceTable, stamp: &Stamp) -> String {
    let mut s = text_header("scores", stamp);
    let _ = writeln!(s, "# query_id doc_id psi gamma score");
    for key in table.keys() {
        let block = table.block(key).expect("listed key");
        for (qi, q) in table.queries.iter().enumerate() {
            for (di, d) in table.documents.iter().enumerate() {
                let _ = writeln!(s, "{q} {d} {} {} {:?}", key.psi, key.method, block[qi * table.documents.len() + di]);
            }
        }
    }
    s
}

pub fn decode_scores(text: &str, path: &Path) -> Result<(RelevanceTable, Stamp)> {
    let stamp = parse_text_header(text).ok_or_else(|| Error::file(path, "missing config hash header"))?;
    let mut records: BTreeMap<RunKey, Vec<(String, String, f64)>> = BTreeMap::new();
    let mut queries = BTreeSet::new();
    let mut docs = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let bad = || Error::file(path, format!("line {}: malformed score record", i + 1));
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 5 {
            return Err(bad());
        }
        let key = parse_run_key(&format!("{}/{}", f[2], f[3])).ok_or_else(bad)?;
        let score: f64 = f[4].parse().map_err(|_| bad())?;
        queries.insert(f[0].to_string());
        docs.insert(f[1].to_string());
        records.entry(key).or_default().push((f[0].to_string(), f[1].to_string(), score));
    }
    let queries: Vec<String> = queries.into_iter().collect();
    let docs: Vec<String> = docs.into_iter().collect();
    let qi: BTreeMap<&str, usize> = queries.iter().enumerate().map(|(i, q)| (q.as_str(), i)).collect();
    let di: BTreeMap<&str, usize> = docs.iter().enumerate().map(|(i, d)| (d.as_str(), i)).collect();
    let mut table = RelevanceTable::new(queries.clone(), docs.clone());
    for (key, recs) in records {
        if recs.len() != queries.len() * docs.len() {
            return Err(Error::file(path, format!("{key}: incomplete score block")));
        }
        let mut block = vec![0.0; recs.len()];
        for (q, d, v) in recs {
            block[qi[q.as_str()] * docs.len() + di[d.as_str()]] = v;
        }
        table.insert(key, block)?;
    }
    Ok((table, stamp))
}

pub fn read_scores(path: &Path) -> Result<(RelevanceTable, Stamp)> {
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    decode_scores(&text, path)
}

/// Rankings of every query under the fused scores; no enabled keys gives
/// empty rankings.
pub fn encode_rankings(table: &RelevanceTable, fused: Option<&[f64]>, stamp: &Stamp) -> String {
    let mut s = text_header("rankings", stamp);
    let d = table.documents.len();
    for (qi, q) in table.queries.iter().enumerate() {
        s.push_str(q);
        if let Some(fused) = fused {
            let row = &fused[qi * d..(qi + 1) * d];
            for i in rank_documents(row, &table.documents) {
                let _ = write!(s, " {}:{:?}", table.documents[i], row[i]);
            }
        }
        s.push('\n');
    }
    s
}

pub fn encode_lambda(keys: &[RunKey]) -> String {
    let mut s = String::from("# psi/gamma weight\n");
    for k in keys {
        let _ = writeln!(s, "{k} 1");
    }
    s
}

pub fn decode_lambda(text: &str, path: &Path) -> Result<Vec<RunKey>> {
    let mut keys = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |what: &str| Error::file(path, format!("line {}: {what}", i + 1));
        let mut it = line.split_whitespace();
        let key = it.next().and_then(parse_run_key).ok_or_else(|| bad("expected psi/gamma, e.g. m3n5l1/100"))?;
        match it.next().unwrap_or("1") {
            "1" => keys.push(key),
            "0" => {}
            _ => return Err(bad("weights must be 0 or 1")),
        }
    }
    Ok(keys)
}

pub fn read_lambda(path: &Path) -> Result<Vec<RunKey>> {
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    decode_lambda(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scores_round_trip() {
        let mut t = RelevanceTable::new(vec!["q1".into(), "q2".into()], vec!["a".into(), "b".into()]);
        let k = parse_run_key("m3n5l1/101").unwrap();
        t.insert(k, vec![0.1, 0.2, 1.0 / 3.0, 0.0]).unwrap();
        let stamp = Stamp::of("s", &[], 0);
        let (back, _) = decode_scores(&encode_scores(&t, &stamp), Path::new("s")).unwrap();
        assert_eq!(back.block(&k), t.block(&k));
    }

    #[test]
    fn lambda_parsing() {
        let keys = decode_lambda("m3n5l1/100 1\nm5n5l2/011 0 # off\n\nm3n5l2/000\n", Path::new("l")).unwrap();
        assert_eq!(keys.len(), 2);
        assert!(decode_lambda("m3n5l1/100 2\n", Path::new("l")).is_err());
        assert!(decode_lambda("m3n5/100 1\n", Path::new("l")).is_err());
    }
}
