use mgpat_core::eval::evaluate;
use mgpat_core::synth::{synthesize_corpus, Lexicon, SyntheticSpec};
use mgpat_core::{
    build_index, build_similarity, discover, relevance, DiscoveryConfig, FeatureSequence, Granularity, RelevanceTable,
    RunKey, ScoreOptions, SearchMethod, SimilarityMode,
};

#[test]
fn discovered_patterns_find_planted_terms() {
    let spec = SyntheticSpec {
        documents: 40,
        queries: 8,
        lexicon: Lexicon::Generated { terms: 10, min_units: 3, max_units: 5 },
        ..SyntheticSpec::default()
    };
    let corpus = synthesize_corpus(&spec, 11).unwrap();
    let docs: Vec<FeatureSequence> = corpus.documents.iter().map(|u| u.features.clone()).collect();
    let queries: Vec<FeatureSequence> = corpus.queries.iter().map(|u| u.features.clone()).collect();

    let psi = Granularity { m: 3, n: 10, l: 1 };
    let config = DiscoveryConfig { grid: vec![psi], seed: 11, ..DiscoveryConfig::default() };
    let found = discover(&docs, psi, &config).unwrap();
    let di = build_index(&found.set, &docs, 5).unwrap();
    let qi = build_index(&found.set, &queries, 5).unwrap();
    let soft = build_similarity(&found.set, SimilarityMode::Soft, None).unwrap();

    let doc_ids: Vec<String> = docs.iter().map(|d| d.utterance_id.clone()).collect();
    let query_ids: Vec<String> = queries.iter().map(|q| q.utterance_id.clone()).collect();
    let mut table = RelevanceTable::new(query_ids.clone(), doc_ids.clone());
    let method: SearchMethod = "100".parse().unwrap();
    let mut block = Vec::new();
    for q in &query_ids {
        for d in &doc_ids {
            block.push(relevance(&di.entries[d], &qi.entries[q], &soft, method, ScoreOptions::default()).unwrap());
        }
    }
    table.insert(RunKey { psi, method }, block.clone()).unwrap();
    let report = evaluate(&table, &block, &query_ids, &corpus.judgments).unwrap();
    // random ranking of 40 documents with a handful relevant averages well under 0.3
    assert!(report.map > 0.5, "MAP {}", report.map);
    assert!(report.per_query.iter().all(|m| (0.0..=1.0).contains(&m.average_precision)));
}
