//! Retrieval metrics, greedy selection of fusion weights, and marginal
//! analyses over the granularity grid.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};
use crate::hmm::Granularity;
use crate::retrieval::{RelevanceTable, RunKey, SearchMethod};

/// Relevant document ids per query id.
pub type Judgments = BTreeMap<String, BTreeSet<String>>;

/// Document indices by descending score; equal scores are ordered by id.
pub fn rank_documents(scores: &[f64], doc_ids: &[String]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then_with(|| doc_ids[a].cmp(&doc_ids[b]))
    });
    order
}

/// Mean over the relevant documents of the precision at each one's rank.
/// Relevant documents absent from the ranking contribute zero.
pub fn average_precision<S: AsRef<str>>(ranking: &[S], relevant: &BTreeSet<String>) -> Result<f64> {
    if relevant.is_empty() {
        return Err(Error::InvalidParameter("empty relevant set".into()));
    }
    let mut hits = 0usize;
    let mut acc = 0.0;
    for (rank, doc) in ranking.iter().enumerate() {
        if relevant.contains(doc.as_ref()) {
            hits += 1;
            acc += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(acc / relevant.len() as f64)
}

/// Fraction of the top `k` that is relevant (the denominator is always `k`).
pub fn precision_at<S: AsRef<str>>(ranking: &[S], relevant: &BTreeSet<String>, k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    ranking.iter().take(k).filter(|d| relevant.contains(d.as_ref())).count() as f64 / k as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryMetrics {
    pub query: String,
    pub average_precision: f64,
    pub precision_at_5: f64,
    pub precision_at_10: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub per_query: Vec<QueryMetrics>,
    pub map: f64,
    pub precision_at_5: f64,
    pub precision_at_10: f64,
}

/// Metrics for `queries` given a query-major `Q x D` score block laid out
/// like `table`.
pub fn evaluate(table: &RelevanceTable, fused: &[f64], queries: &[String], judgments: &Judgments) -> Result<EvaluationReport> {
    let d = table.documents.len();
    if fused.len() != table.queries.len() * d {
        return Err(Error::DimensionMismatch {
            expected: table.queries.len() * d,
            actual: fused.len(),
        });
    }
    if queries.is_empty() {
        return Err(Error::InvalidParameter("no queries to evaluate".into()));
    }
    let mut per_query = Vec::with_capacity(queries.len());
    for q in queries {
        let qi = table.query_index(q).ok_or_else(|| Error::UnknownUtterance(q.clone()))?;
        let relevant = judgments
            .get(q)
            .ok_or_else(|| Error::InvalidParameter(alloc::format!("no judgments for query {q}")))?;
        let order = rank_documents(&fused[qi * d..(qi + 1) * d], &table.documents);
        let ranking: Vec<&str> = order.iter().map(|&i| table.documents[i].as_str()).collect();
        per_query.push(QueryMetrics {
            query: q.clone(),
            average_precision: average_precision(&ranking, relevant)?,
            precision_at_5: precision_at(&ranking, relevant, 5),
            precision_at_10: precision_at(&ranking, relevant, 10),
        });
    }
    let mean = |f: fn(&QueryMetrics) -> f64| per_query.iter().map(f).sum::<f64>() / per_query.len() as f64;
    Ok(EvaluationReport {
        map: mean(|m| m.average_precision),
        precision_at_5: mean(|m| m.precision_at_5),
        precision_at_10: mean(|m| m.precision_at_10),
        per_query,
    })
}

/// MAP of the fusion of `keys`.
pub fn map_of(table: &RelevanceTable, keys: &[RunKey], queries: &[String], judgments: &Judgments) -> Result<f64> {
    Ok(evaluate(table, &table.fuse_keys(keys)?, queries, judgments)?.map)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionStep {
    pub step: usize,
    pub key: RunKey,
    /// MAP on the selection queries after adding `key`.
    pub dev_map: f64,
    /// MAP on the held-out queries, when given.
    pub eval_map: Option<f64>,
}

/// Forward selection of 0/1 fusion weights: starting from nothing, repeatedly
/// enable the configuration whose addition gives the best MAP on
/// `dev_queries` (earliest key wins ties) until `budget` are enabled.
pub fn greedy_select(
    table: &RelevanceTable,
    dev_queries: &[String],
    eval_queries: Option<&[String]>,
    judgments: &Judgments,
    budget: usize,
) -> Result<Vec<SelectionStep>> {
    let mut pool: Vec<RunKey> = table.keys().copied().collect();
    if budget == 0 || budget > pool.len() {
        return Err(Error::InvalidParameter(alloc::format!(
            "budget {budget} outside 1..={} available configurations",
            pool.len()
        )));
    }
    let d = table.documents.len();
    let rows: Vec<usize> = dev_queries
        .iter()
        .map(|q| table.query_index(q).ok_or_else(|| Error::UnknownUtterance(q.clone())))
        .collect::<Result<_>>()?;
    // fused scores restricted to the dev rows, so each trial costs |dev| x D
    let mut dev_table = RelevanceTable::new(dev_queries.to_vec(), table.documents.clone());
    for key in &pool {
        let block = table.block(key).expect("key from table");
        let sub: Vec<f64> = rows.iter().flat_map(|&r| block[r * d..(r + 1) * d].iter().copied()).collect();
        dev_table.insert(*key, sub)?;
    }
    let mut fused = alloc::vec![0.0; rows.len() * d];
    let mut chosen: Vec<RunKey> = Vec::new();
    let mut trace = Vec::with_capacity(budget);
    for step in 1..=budget {
        let mut best: Option<(usize, f64)> = None;
        for (ci, key) in pool.iter().enumerate() {
            let block = dev_table.block(key).expect("present");
            let trial: Vec<f64> = fused.iter().zip(block).map(|(f, r)| f + r).collect();
            let map = evaluate(&dev_table, &trial, dev_queries, judgments)?.map;
            if best.is_none_or(|(_, b)| map > b) {
                best = Some((ci, map));
            }
        }
        let (ci, dev_map) = best.expect("non-empty pool");
        let key = pool.remove(ci);
        let block = dev_table.block(&key).expect("present");
        fused.iter_mut().zip(block).for_each(|(f, r)| *f += r);
        chosen.push(key);
        let eval_map = match eval_queries {
            Some(eq) => Some(map_of(table, &chosen, eq, judgments)?),
            None => None,
        };
        trace.push(SelectionStep {
            step,
            key,
            dev_map,
            eval_map,
        });
    }
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginalReport {
    pub method: SearchMethod,
    /// MAP of the sum over all granularities, per search method.
    pub by_method: Vec<(SearchMethod, f64)>,
    /// MAP of the sum over (m, n) for each l, and so on.
    pub by_l: Vec<(usize, f64)>,
    pub by_n: Vec<(usize, f64)>,
    pub by_m: Vec<(usize, f64)>,
    /// The `l` of the (m, n) plane.
    pub plane_l: usize,
    pub m_values: Vec<usize>,
    pub n_values: Vec<usize>,
    /// Row per m value, column per n value; `None` where no scores exist.
    pub plane: Vec<Vec<Option<f64>>>,
    pub warnings: Vec<String>,
}

/// Sums scores over two granularity dimensions and reports MAP along the
/// third, plus the per-granularity MAP over the (m, n) plane at `plane_l`.
pub fn marginal_analysis(
    table: &RelevanceTable,
    method: SearchMethod,
    plane_l: usize,
    queries: &[String],
    judgments: &Judgments,
) -> Result<MarginalReport> {
    let keys: Vec<RunKey> = table.keys().copied().collect();
    let mut by_method = Vec::new();
    for m in SearchMethod::all() {
        let ks: Vec<RunKey> = keys.iter().copied().filter(|k| k.method == m).collect();
        if !ks.is_empty() {
            by_method.push((m, map_of(table, &ks, queries, judgments)?));
        }
    }
    let psis: Vec<Granularity> = keys.iter().filter(|k| k.method == method).map(|k| k.psi).collect();
    if psis.is_empty() {
        return Err(Error::MissingScores(alloc::format!("method {method}")));
    }
    let values = |f: fn(&Granularity) -> usize| -> Vec<usize> {
        psis.iter().map(f).collect::<BTreeSet<_>>().into_iter().collect()
    };
    let (ms, ns, ls) = (values(|g| g.m), values(|g| g.n), values(|g| g.l));
    let mut warnings = Vec::new();
    let have: BTreeSet<Granularity> = psis.iter().copied().collect();
    for &m in &ms {
        for &n in &ns {
            for &l in &ls {
                let g = Granularity { m, n, l };
                if !have.contains(&g) {
                    warnings.push(alloc::format!("no scores for {g}/{method}; marginals use the available cells"));
                }
            }
        }
    }
    let marginal = |vals: &[usize], pick: fn(&Granularity) -> usize| -> Result<Vec<(usize, f64)>> {
        vals.iter()
            .map(|&v| {
                let ks: Vec<RunKey> = psis
                    .iter()
                    .filter(|g| pick(g) == v)
                    .map(|g| RunKey { psi: *g, method })
                    .collect();
                Ok((v, map_of(table, &ks, queries, judgments)?))
            })
            .collect()
    };
    let by_l = marginal(&ls, |g| g.l)?;
    let by_n = marginal(&ns, |g| g.n)?;
    let by_m = marginal(&ms, |g| g.m)?;
    let mut plane = Vec::with_capacity(ms.len());
    for &m in &ms {
        let mut row = Vec::with_capacity(ns.len());
        for &n in &ns {
            let g = Granularity { m, n, l: plane_l };
            row.push(if have.contains(&g) {
                Some(map_of(table, &[RunKey { psi: g, method }], queries, judgments)?)
            } else {
                None
            });
        }
        plane.push(row);
    }
    Ok(MarginalReport {
        method,
        by_method,
        by_l,
        by_n,
        by_m,
        plane_l,
        m_values: ms,
        n_values: ns,
        plane,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn set(ids: &[&str]) -> BTreeSet<String> {
        ids.iter().map(|s| String::from(*s)).collect()
    }

    #[test]
    fn hand_computed_average_precision() {
        let ranking = ["a", "b", "c", "d", "e"];
        let ap = average_precision(&ranking, &set(&["a", "c"])).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert_eq!(average_precision(&ranking, &set(&["a", "b"])).unwrap(), 1.0);
        let ten: Vec<String> = (0..10).map(|i| alloc::format!("d{i}")).collect();
        assert_eq!(average_precision(&ten, &set(&["d9"])).unwrap(), 0.1);
        assert!(average_precision(&ranking, &BTreeSet::new()).is_err());
    }

    #[test]
    fn trailing_irrelevant_order_is_irrelevant() {
        let a = ["r1", "x", "r2", "y", "z", "w"];
        let b = ["r1", "x", "r2", "w", "z", "y"];
        let rel = set(&["r1", "r2"]);
        assert_eq!(average_precision(&a, &rel).unwrap(), average_precision(&b, &rel).unwrap());
    }

    #[test]
    fn ties_ranked_by_document_id() {
        let ids: Vec<String> = ["c", "a", "b"].iter().map(|s| String::from(*s)).collect();
        assert_eq!(rank_documents(&[0.5, 0.5, 0.9], &ids), vec![2, 1, 0]);
    }

    /// E[AP] of a uniformly random ranking of N documents with R relevant:
    /// (1/N) sum_k [1/k + (k-1)(R-1) / ((N-1) k)].
    fn expected_random_ap(n: usize, r: usize) -> f64 {
        (1..=n)
            .map(|k| {
                let k = k as f64;
                1.0 / k + (k - 1.0) * (r as f64 - 1.0) / ((n as f64 - 1.0) * k)
            })
            .sum::<f64>()
            / n as f64
    }

    #[test]
    fn random_ranking_matches_analytic_expectation() {
        let (n, r) = (30, 4);
        let mut docs: Vec<String> = (0..n).map(|i| alloc::format!("d{i:02}")).collect();
        let rel: BTreeSet<String> = docs[..r].iter().cloned().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let trials = 10_000;
        let mut total = 0.0;
        for _ in 0..trials {
            docs.shuffle(&mut rng);
            total += average_precision(&docs, &rel).unwrap();
        }
        let mc = total / trials as f64;
        assert!((mc - expected_random_ap(n, r)).abs() < 0.01, "{mc} vs {}", expected_random_ap(n, r));
    }

    fn key(m: usize, n: usize, l: usize, code: &str) -> RunKey {
        RunKey {
            psi: Granularity::new(m, n, l).unwrap(),
            method: code.parse().unwrap(),
        }
    }

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| String::from(*s)).collect()
    }

    #[test]
    fn greedy_picks_complementary_pair() {
        // docs a,b,c,d; q1 relevant {a}, q2 relevant {b}
        let mut t = RelevanceTable::new(strings(&["q1", "q2"]), strings(&["a", "b", "c", "d"]));
        let k1 = key(3, 5, 1, "100");
        let k2 = key(5, 5, 1, "100");
        let k0 = key(3, 5, 1, "000");
        // k1 gets q1 right (a first) but ranks b last for q2; k2 the other way
        t.insert(k1, vec![1.0, 0.0, 0.6, 0.5, 0.45, 0.4, 0.5, 0.5]).unwrap();
        t.insert(k2, vec![0.4, 0.45, 0.5, 0.5, 0.0, 1.0, 0.6, 0.5]).unwrap();
        t.insert(k0, vec![0.0, 0.0, 0.01, 0.01, 0.0, 0.0, 0.01, 0.01]).unwrap();
        let j: Judgments = [("q1".into(), set(&["a"])), ("q2".into(), set(&["b"]))].into_iter().collect();
        let qs = strings(&["q1", "q2"]);
        // singletons: k1 -> (1 + 1/4)/2 = 0.625, k2 -> (1/4 + 1)/2 = 0.625, fusion -> 1
        assert!((map_of(&t, &[k1], &qs, &j).unwrap() - 0.625).abs() < 1e-12);
        assert!((map_of(&t, &[k2], &qs, &j).unwrap() - 0.625).abs() < 1e-12);
        assert_eq!(map_of(&t, &[k1, k2], &qs, &j).unwrap(), 1.0);
        let trace = greedy_select(&t, &qs, Some(&qs), &j, 3).unwrap();
        assert_eq!(trace.iter().map(|s| s.key).collect::<Vec<_>>(), vec![k1, k2, k0]);
        assert!(trace[1].dev_map > trace[0].dev_map);
        assert_eq!(trace[2].dev_map, trace[1].dev_map);
        assert_eq!(trace[2].eval_map, Some(1.0));
        assert!(greedy_select(&t, &qs, None, &j, 4).is_err());
        let single = {
            let mut s = RelevanceTable::new(qs.clone(), strings(&["a", "b", "c", "d"]));
            s.insert(k2, t.block(&k2).unwrap().to_vec()).unwrap();
            s
        };
        assert_eq!(greedy_select(&single, &qs, None, &j, 1).unwrap()[0].key, k2);
    }

    #[test]
    fn marginals_preserve_dominance_and_grid_shape() {
        let qs = strings(&["q"]);
        let docs = strings(&["a", "b", "c"]);
        let j: Judgments = [("q".into(), set(&["c"]))].into_iter().collect();
        let mut t = RelevanceTable::new(qs.clone(), docs);
        for m in [3, 5] {
            for n in [10, 20, 30] {
                // l = 2 ranks c first, l = 1 ranks it last
                t.insert(key(m, n, 1, "100"), vec![0.9, 0.5, 0.1]).unwrap();
                t.insert(key(m, n, 2, "100"), vec![0.1, 0.2, 0.9]).unwrap();
            }
        }
        let rep = marginal_analysis(&t, "100".parse().unwrap(), 2, &qs, &j).unwrap();
        assert_eq!(rep.by_l, vec![(1, 1.0 / 3.0), (2, 1.0)]);
        assert_eq!(rep.plane.len(), 2);
        assert!(rep.plane.iter().all(|r| r.len() == 3));
        assert!(rep.warnings.is_empty());

        let mut one = RelevanceTable::new(qs.clone(), strings(&["a", "b", "c"]));
        one.insert(key(3, 10, 1, "100"), vec![0.2, 0.9, 0.5]).unwrap();
        let rep = marginal_analysis(&one, "100".parse().unwrap(), 1, &qs, &j).unwrap();
        assert_eq!(rep.by_m, vec![(3, 0.5)]);
        assert_eq!(rep.plane, vec![vec![Some(0.5)]]);
    }

    #[test]
    fn incomplete_grid_warns() {
        let qs = strings(&["q"]);
        let j: Judgments = [("q".into(), set(&["a"]))].into_iter().collect();
        let mut t = RelevanceTable::new(qs.clone(), strings(&["a", "b"]));
        t.insert(key(3, 10, 1, "100"), vec![0.9, 0.1]).unwrap();
        t.insert(key(5, 20, 1, "100"), vec![0.9, 0.1]).unwrap();
        let rep = marginal_analysis(&t, "100".parse().unwrap(), 1, &qs, &j).unwrap();
        assert_eq!(rep.warnings.len(), 2);
        assert_eq!(rep.plane, vec![vec![Some(1.0), None], vec![None, Some(1.0)]]);
    }
}
