use std::path::Path;

use mgpat::manifest::Role;
use mgpat::scorefile::read_scores;
use mgpat::simfile::read_similarity;
use mgpat::{Pipeline, PipelineConfig, Stage};
use mgpat_core::hmm::MixtureState;

const TINY: &str = r#"
seed = 3

[synth]
documents = 24
queries = 6
terms = 8

[discovery]
m = [3]
n = [6]
l = [1, 2]

[evaluate]
budget = 4
"#;

fn tiny(root: &Path) -> PipelineConfig {
    let mut c = PipelineConfig::parse(TINY).unwrap();
    c.paths.corpus = root.join("corpus/manifest.txt");
    c.paths.artifacts = root.join("artifacts");
    c
}

fn upto_index(p: &Pipeline) {
    p.cmd_synth().unwrap();
    p.cmd_features().unwrap();
    p.cmd_discover().unwrap();
    p.cmd_similarity().unwrap();
    p.cmd_index().unwrap();
}

#[test]
fn full_run_writes_every_report() {
    let tmp = tempfile::tempdir().unwrap();
    let p = Pipeline::new(tiny(tmp.path()), false).unwrap();
    p.cmd_synth().unwrap();
    let warnings = p.run_all().unwrap();
    assert!(warnings.iter().all(|w| !w.contains("forced")), "{warnings:?}");

    let (table, _) = read_scores(&p.dir(Stage::Search).join("scores.txt")).unwrap();
    assert_eq!(table.queries.len(), 6);
    assert_eq!(table.documents.len(), 24);
    assert_eq!(table.keys().count(), 2 * 8);
    for name in ["summary.txt", "per_config.csv", "selection.csv", "oracle.csv", "plane.csv", "run.txt"] {
        assert!(p.dir(Stage::Evaluate).join(name).is_file(), "{name} missing");
    }
    let rankings = std::fs::read_to_string(p.dir(Stage::Search).join("rankings.txt")).unwrap();
    assert!(rankings.lines().any(|l| l.starts_with("query0000")));
}

#[test]
fn empty_lambda_gives_empty_rankings_and_a_warning() {
    let tmp = tempfile::tempdir().unwrap();
    let lambda = tmp.path().join("none.txt");
    std::fs::write(&lambda, "# nothing enabled\nm3n6l1/100 0\n").unwrap();
    let mut c = tiny(tmp.path());
    c.search.lambda = lambda.display().to_string();
    let p = Pipeline::new(c, false).unwrap();
    upto_index(&p);
    let out = p.cmd_search().unwrap();
    assert!(out.warnings.iter().any(|w| w.contains("rankings are empty")), "{:?}", out.warnings);
    let rankings = std::fs::read_to_string(p.dir(Stage::Search).join("rankings.txt")).unwrap();
    let rows: Vec<&str> = rankings.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|l| l.split_whitespace().count() == 1), "{rankings}");
}

#[test]
fn stale_upstream_is_refused_unless_forced() {
    let tmp = tempfile::tempdir().unwrap();
    let p = Pipeline::new(tiny(tmp.path()), false).unwrap();
    p.cmd_synth().unwrap();
    p.cmd_features().unwrap();
    p.cmd_discover().unwrap();

    let mut changed = tiny(tmp.path());
    changed.discovery.max_iterations += 1;
    let stale = Pipeline::new(changed.clone(), false).unwrap();
    let err = stale.cmd_similarity().unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("--force"), "{err}");

    let forced = Pipeline::new(changed, true).unwrap();
    let out = forced.cmd_similarity().unwrap();
    assert!(out.warnings.iter().any(|w| w.contains("forced")), "{:?}", out.warnings);
}

#[test]
fn missing_upstream_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let p = Pipeline::new(tiny(tmp.path()), false).unwrap();
    p.cmd_synth().unwrap();
    let err = p.cmd_discover().unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");
}

fn gauss_kl(mf: &[f64], vf: &[f64], mg: &[f64], vg: &[f64]) -> f64 {
    (0..mf.len())
        .map(|d| 0.5 * ((vg[d] / vf[d]).ln() + (vf[d] + (mf[d] - mg[d]).powi(2)) / vg[d] - 1.0))
        .sum()
}

fn comp(s: &MixtureState, k: usize) -> (&[f64], &[f64]) {
    let d = s.means.len() / s.weights.len();
    (&s.means[k * d..(k + 1) * d], &s.variances[k * d..(k + 1) * d])
}

fn variational_kl(f: &MixtureState, g: &MixtureState) -> f64 {
    let mut total = 0.0;
    for a in 0..f.weights.len() {
        let (ma, va) = comp(f, a);
        let num: f64 = (0..f.weights.len())
            .map(|b| {
                let (mb, vb) = comp(f, b);
                f.weights[b] * (-gauss_kl(ma, va, mb, vb)).exp()
            })
            .sum();
        let den: f64 = (0..g.weights.len())
            .map(|b| {
                let (mb, vb) = comp(g, b);
                g.weights[b] * (-gauss_kl(ma, va, mb, vb)).exp()
            })
            .sum();
        total += f.weights[a] * (num / den).ln();
    }
    total.max(0.0)
}

#[test]
fn stored_soft_matrices_match_divergences_of_stored_bundles() {
    let tmp = tempfile::tempdir().unwrap();
    let p = Pipeline::new(tiny(tmp.path()), false).unwrap();
    p.cmd_synth().unwrap();
    p.cmd_features().unwrap();
    p.cmd_discover().unwrap();
    p.cmd_similarity().unwrap();
    let (sets, _) = p.load_patterns().unwrap();
    assert_eq!(sets.len(), 2);
    for (psi, set) in &sets {
        let (soft, _) = read_similarity(&p.dir(Stage::Similarity).join(format!("{psi}.soft.sim"))).unwrap();
        let beta = 100.0 * psi.m as f64;
        assert_eq!(soft.beta, beta);
        let kl = |i: usize, j: usize| -> f64 {
            set.hmms[i].states.iter().zip(&set.hmms[j].states).map(|(a, b)| variational_kl(a, b)).sum()
        };
        for i in 0..psi.n {
            for j in 0..psi.n {
                let expect = if i == j { 1.0 } else { (-(kl(i, j) + kl(j, i)) / (2.0 * beta)).exp() };
                let got = soft.get(i, j);
                assert!((got - expect).abs() <= 1e-6, "{psi} ({i},{j}): stored {got}, recomputed {expect}");
            }
        }
    }
}

#[test]
fn features_round_trip_through_the_corpus() {
    let tmp = tempfile::tempdir().unwrap();
    let p = Pipeline::new(tiny(tmp.path()), false).unwrap();
    p.cmd_synth().unwrap();
    assert_eq!(p.cmd_features().unwrap().detail, 30);
    let (docs, _) = p.load_features(Role::Document).unwrap();
    let (queries, _) = p.load_features(Role::Query).unwrap();
    assert_eq!((docs.len(), queries.len()), (24, 6));
    assert!(docs.iter().all(|d| d.dim() == 8 && !d.is_empty()));
}
