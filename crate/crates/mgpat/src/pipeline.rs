//! The stage commands. Each reads its upstream artifacts from the artifact
//! root, checks that they were produced by the current configuration, and
//! writes its own artifacts plus a `run.txt` metadata record.
//!
//! ```text
//! <artifacts>/features/{features.txt, document/*.feat, query/*.feat}
//! <artifacts>/patterns/{manifest.txt, <content-hash>/{bundle.bin, summary.txt}}
//! <artifacts>/similarity/{manifest.txt, <psi>.hard.sim, <psi>.soft.sim}
//! <artifacts>/index/{manifest.txt, <psi>.document.idx, <psi>.query.idx}
//! <artifacts>/search/{scores.txt, lambda.txt, rankings.txt}
//! <artifacts>/evaluate/{summary.txt, *.csv}
//! <artifacts>/bench/report.txt
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mgpat_core::discovery::Provenance;
use mgpat_core::eval::{evaluate, greedy_select, map_of, marginal_analysis, Judgments, MarginalReport, SelectionStep};
use mgpat_core::index::build_index_with;
use mgpat_core::math::mix_seed;
use mgpat_core::retrieval::score_index;
use mgpat_core::synth::synthesize_corpus;
use mgpat_core::{
    build_similarity, run_grid, ArchiveIndex, Executor, FeatureSequence, Granularity, PatternSet, RelevanceTable,
    RunKey, ScoreOptions, SearchMethod, SimilarityMatrix, SimilarityMode,
};

use crate::audio::load_audio;
use crate::binio::{read_file, write_file};
use crate::bundle::{encode_bundle, read_bundle, summary};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::exec::Rayon;
use crate::featfile::{read_features, write_features};
use crate::indexfile::{encode_index, read_index};
use crate::manifest::{CorpusManifest, Role, Utterance};
use crate::mfcc::extract_features;
use crate::scorefile::{encode_lambda, encode_rankings, encode_scores, read_lambda, read_scores};
use crate::simfile::{read_similarity, write_similarity};
use crate::stamp::{content_hash, parse_text_header, text_header, Stamp};

/// Salt separating the dev/eval split stream from other seeded streams.
const SPLIT_SALT: u64 = 0x0d3f_e7a1;

/// What a command produced, for reporting.
#[derive(Debug, Clone)]
pub struct Outcome<T> {
    pub stamp: Stamp,
    pub warnings: Vec<String>,
    pub detail: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Features,
    Discover,
    Similarity,
    Index,
    Search,
    Evaluate,
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Features => "features",
            Stage::Discover => "discover",
            Stage::Similarity => "similarity",
            Stage::Index => "index",
            Stage::Search => "search",
            Stage::Evaluate => "evaluate",
        }
    }

    fn dir(&self) -> &'static str {
        match self {
            Stage::Discover => "patterns",
            other => other.name(),
        }
    }
}

struct RunRecord {
    command: &'static str,
    stamp: Stamp,
    upstream: Vec<(&'static str, Stamp)>,
    started: Instant,
    lines: Vec<String>,
}

impl RunRecord {
    fn new(command: &'static str, stamp: Stamp, upstream: Vec<(&'static str, Stamp)>, started: Instant) -> Self {
        Self {
            command,
            stamp,
            upstream,
            started,
            lines: Vec::new(),
        }
    }

    fn write(&self, dir: &Path, warnings: &[String]) -> Result<()> {
        let mut s = format!(
            "command {}\nconfig_hash {}\nseed {}\nversion mgpat {}\n",
            self.command,
            self.stamp.hex(),
            self.stamp.seed,
            env!("CARGO_PKG_VERSION")
        );
        for (name, st) in &self.upstream {
            let _ = writeln!(s, "upstream {name} {}", st.hex());
        }
        let _ = writeln!(s, "elapsed_secs {:.3}", self.started.elapsed().as_secs_f64());
        for l in &self.lines {
            let _ = writeln!(s, "{l}");
        }
        for w in warnings {
            let _ = writeln!(s, "warning {w}");
        }
        write_file(&dir.join("run.txt"), s.as_bytes())
    }
}

#[derive(Debug)]
pub struct Pipeline {
    pub config: PipelineConfig,
    /// Accept upstream artifacts whose config hash does not match.
    pub force: bool,
    exec: Rayon,
    features_stamp: OnceLock<Stamp>,
}

/// Per-granularity hard and soft similarity matrices.
pub type SimilaritySet = BTreeMap<Granularity, (SimilarityMatrix, SimilarityMatrix)>;
/// Per-granularity document and query indexes.
pub type IndexSet = BTreeMap<Granularity, (ArchiveIndex, ArchiveIndex)>;

fn judgments_text(j: &Judgments) -> String {
    let mut s = String::new();
    for (q, docs) in j {
        let list: Vec<&str> = docs.iter().map(String::as_str).collect();
        let _ = writeln!(s, "{q} {}", list.join(","));
    }
    s
}

fn read_text(path: &Path, stage: Stage) -> Result<String> {
    if !path.exists() {
        return Err(Error::Data(format!(
            "missing upstream artifact {}; run `mgpat {}` first",
            path.display(),
            stage.name()
        )));
    }
    std::fs::read_to_string(path).map_err(Error::io(path))
}

/// Body lines of a stamped text manifest, split on whitespace.
fn records(text: &str) -> impl Iterator<Item = Vec<&str>> {
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| l.split_whitespace().collect())
}

fn header_stamp(text: &str, path: &Path) -> Result<Stamp> {
    parse_text_header(text).ok_or_else(|| Error::file(path, "missing config hash header"))
}

/// Splits judged queries into dev and eval halves with a seeded shuffle.
pub fn split_queries(judged: &[String], dev_fraction: f64, seed: u64) -> (Vec<String>, Vec<String>) {
    let mut ids: Vec<String> = judged.to_vec();
    ids.sort();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, SPLIT_SALT)));
    let n_dev = ((ids.len() as f64 * dev_fraction).round() as usize).clamp(1.min(ids.len()), ids.len().saturating_sub(1).max(1));
    let eval = ids.split_off(n_dev.min(ids.len()));
    let mut dev = ids;
    dev.sort();
    let mut eval = eval;
    eval.sort();
    (dev, eval)
}

impl Pipeline {
    pub fn new(config: PipelineConfig, force: bool) -> Result<Self> {
        config.validate()?;
        let exec = Rayon::new(config.workers)?;
        Ok(Self {
            config,
            force,
            exec,
            features_stamp: OnceLock::new(),
        })
    }

    pub fn executor(&self) -> &Rayon {
        &self.exec
    }

    pub fn dir(&self, stage: Stage) -> PathBuf {
        self.config.paths.artifacts.join(stage.dir())
    }

    pub fn manifest(&self) -> Result<CorpusManifest> {
        let p = &self.config.paths.corpus;
        if !p.exists() {
            return Err(Error::Data(format!("corpus manifest {} not found", p.display())));
        }
        CorpusManifest::load(p)
    }

    fn seed(&self) -> u64 {
        self.config.seed
    }

    // ---- stamps -------------------------------------------------------

    fn compute_features_stamp(&self, manifest: &CorpusManifest) -> Result<Stamp> {
        let section = PipelineConfig::section_toml(&self.config.features);
        let mut parts: Vec<Vec<u8>> = vec![section];
        for u in manifest.all() {
            let bytes = read_file(&u.path)?;
            parts.push(format!("{} {} {}", u.id, u.role.as_str(), content_hash(&bytes)).into_bytes());
        }
        let refs: Vec<&[u8]> = parts.iter().map(Vec::as_slice).collect();
        Ok(Stamp::of("features", &refs, self.seed()))
    }

    fn discover_stamp(&self, features: &Stamp) -> Stamp {
        let section = PipelineConfig::section_toml(&self.config.discovery);
        Stamp::of("discover", &[&features.hash_bytes(), &section], self.seed())
    }

    fn similarity_stamp(&self, discover: &Stamp) -> Stamp {
        let section = PipelineConfig::section_toml(&self.config.similarity);
        Stamp::of("similarity", &[&discover.hash_bytes(), &section], self.seed())
    }

    fn index_stamp(&self, discover: &Stamp, features: &Stamp) -> Stamp {
        let section = PipelineConfig::section_toml(&self.config.index);
        Stamp::of("index", &[&discover.hash_bytes(), &features.hash_bytes(), &section], self.seed())
    }

    fn search_stamp(&self, index: &Stamp, similarity: &Stamp) -> Result<Stamp> {
        let section = PipelineConfig::section_toml(&self.config.search);
        let extra: Vec<u8> = match (self.config.lambda_file(), self.config.search.lambda.as_str()) {
            (Some(p), _) => read_file(&p)?,
            (None, "greedy") => {
                let mut v = PipelineConfig::section_toml(&self.config.evaluate);
                v.extend(judgments_text(&self.manifest()?.judgments).into_bytes());
                v
            }
            _ => Vec::new(),
        };
        Ok(Stamp::of(
            "search",
            &[&index.hash_bytes(), &similarity.hash_bytes(), &section, &extra],
            self.seed(),
        ))
    }

    fn evaluate_stamp(&self, search: &Stamp) -> Result<Stamp> {
        let section = PipelineConfig::section_toml(&self.config.evaluate);
        let judged = judgments_text(&self.manifest()?.judgments);
        Ok(Stamp::of(
            "evaluate",
            &[&search.hash_bytes(), &section, judged.as_bytes()],
            self.seed(),
        ))
    }

    /// The stamp the current configuration gives `stage`.
    pub fn expected(&self, stage: Stage) -> Result<Stamp> {
        Ok(match stage {
            Stage::Features => {
                if let Some(s) = self.features_stamp.get() {
                    return Ok(*s);
                }
                let s = self.compute_features_stamp(&self.manifest()?)?;
                *self.features_stamp.get_or_init(|| s)
            }
            Stage::Discover => self.discover_stamp(&self.expected(Stage::Features)?),
            Stage::Similarity => self.similarity_stamp(&self.expected(Stage::Discover)?),
            Stage::Index => self.index_stamp(&self.expected(Stage::Discover)?, &self.expected(Stage::Features)?),
            Stage::Search => self.search_stamp(&self.expected(Stage::Index)?, &self.expected(Stage::Similarity)?)?,
            Stage::Evaluate => self.evaluate_stamp(&self.expected(Stage::Search)?)?,
        })
    }

    /// Refuses upstream artifacts from a different configuration unless forced.
    fn verify(&self, stage: Stage, found: &Stamp, warnings: &mut Vec<String>) -> Result<()> {
        let expected = self.expected(stage)?;
        if *found == expected {
            return Ok(());
        }
        let msg = format!(
            "{} artifacts have config hash {} but the current configuration gives {}",
            stage.name(),
            found.short(),
            expected.short()
        );
        if self.force {
            warnings.push(format!("{msg} (forced)"));
            Ok(())
        } else {
            Err(Error::Data(format!("{msg}; rerun `mgpat {}` or pass --force", stage.name())))
        }
    }

    // ---- loaders ------------------------------------------------------

    /// Feature sequences of one role, in manifest order.
    pub fn load_features(&self, role: Role) -> Result<(Vec<FeatureSequence>, Stamp)> {
        let dir = self.dir(Stage::Features);
        let path = dir.join("features.txt");
        let text = read_text(&path, Stage::Features)?;
        let stamp = header_stamp(&text, &path)?;
        let mut out = Vec::new();
        for rec in records(&text) {
            if rec.len() != 5 {
                return Err(Error::file(&path, "malformed record"));
            }
            if rec[1] != role.as_str() {
                continue;
            }
            let (fs, s) = read_features(&dir.join(rec[2]))?;
            if s != stamp {
                return Err(Error::file(dir.join(rec[2]), "config hash differs from features.txt"));
            }
            out.push(fs);
        }
        Ok((out, stamp))
    }

    pub fn load_patterns(&self) -> Result<(BTreeMap<Granularity, PatternSet>, Stamp)> {
        let dir = self.dir(Stage::Discover);
        let path = dir.join("manifest.txt");
        let text = read_text(&path, Stage::Discover)?;
        let stamp = header_stamp(&text, &path)?;
        let mut out = BTreeMap::new();
        for rec in records(&text) {
            let psi: Granularity = rec[0].parse().map_err(|e| Error::file(&path, e))?;
            let (set, s) = read_bundle(&dir.join(rec[1]).join("bundle.bin"))?;
            if s != stamp || set.config != psi {
                return Err(Error::file(dir.join(rec[1]), "bundle does not match patterns/manifest.txt"));
            }
            out.insert(psi, set);
        }
        Ok((out, stamp))
    }

    pub fn load_similarity(&self) -> Result<(SimilaritySet, Stamp)> {
        let dir = self.dir(Stage::Similarity);
        let path = dir.join("manifest.txt");
        let text = read_text(&path, Stage::Similarity)?;
        let stamp = header_stamp(&text, &path)?;
        let mut out = BTreeMap::new();
        for rec in records(&text) {
            let psi: Granularity = rec[0].parse().map_err(|e| Error::file(&path, e))?;
            let (hard, a) = read_similarity(&dir.join(rec[1]))?;
            let (soft, b) = read_similarity(&dir.join(rec[2]))?;
            if a != stamp || b != stamp {
                return Err(Error::file(&path, format!("{psi}: matrix config hash differs from manifest")));
            }
            out.insert(psi, (hard, soft));
        }
        Ok((out, stamp))
    }

    pub fn load_index(&self) -> Result<(IndexSet, Stamp)> {
        let dir = self.dir(Stage::Index);
        let path = dir.join("manifest.txt");
        let text = read_text(&path, Stage::Index)?;
        let stamp = header_stamp(&text, &path)?;
        let mut out = BTreeMap::new();
        for rec in records(&text) {
            let psi: Granularity = rec[0].parse().map_err(|e| Error::file(&path, e))?;
            let (docs, a) = read_index(&dir.join(rec[1]))?;
            let (queries, b) = read_index(&dir.join(rec[2]))?;
            if a != stamp || b != stamp {
                return Err(Error::file(&path, format!("{psi}: index config hash differs from manifest")));
            }
            out.insert(psi, (docs, queries));
        }
        Ok((out, stamp))
    }

    // ---- commands -----------------------------------------------------

    pub fn cmd_features(&self) -> Result<Outcome<usize>> {
        let started = Instant::now();
        let manifest = self.manifest()?;
        let stamp = self.expected(Stage::Features)?;
        let cfg = self.config.features.to_core();
        let dir = self.dir(Stage::Features);
        let utts: Vec<&Utterance> = manifest.all().collect();
        let results = self.exec.map(&utts, |u| -> Result<(String, FeatureSequence)> {
            let fs = if u.is_feature_file() {
                let (mut fs, _) = read_features(&u.path)?;
                fs.utterance_id = u.id.clone();
                fs
            } else {
                let wave = load_audio(&u.path)?;
                extract_features(&u.id, &wave, &cfg).map_err(|e| Error::file(&u.path, e))?
            };
            let rel = format!("{}/{}.feat", u.role.as_str(), u.id);
            write_features(&dir.join(&rel), &fs, &stamp)?;
            Ok((rel, fs))
        });
        let mut listing = text_header("features", &stamp);
        listing.push_str("# id role file frames dim\n");
        let mut errors = Vec::new();
        let mut dims = BTreeSet::new();
        for (u, r) in utts.iter().zip(results) {
            match r {
                Ok((rel, fs)) => {
                    dims.insert(fs.dim());
                    let _ = writeln!(listing, "{} {} {rel} {} {}", u.id, u.role.as_str(), fs.len(), fs.dim());
                }
                Err(e) => errors.push(e.to_string()),
            }
        }
        if !errors.is_empty() {
            return Err(Error::Data(format!("feature extraction failed:\n  {}", errors.join("\n  "))));
        }
        if dims.len() > 1 {
            return Err(Error::Data(format!("utterances have different feature dimensions {dims:?}")));
        }
        write_file(&dir.join("features.txt"), listing.as_bytes())?;
        let mut run = RunRecord::new("features", stamp, Vec::new(), started);
        run.lines.push(format!("utterances {}", utts.len()));
        run.write(&dir, &[])?;
        Ok(Outcome {
            stamp,
            warnings: Vec::new(),
            detail: utts.len(),
        })
    }

    pub fn cmd_discover(&self) -> Result<Outcome<BTreeMap<Granularity, PathBuf>>> {
        let started = Instant::now();
        let mut warnings = Vec::new();
        let (docs, feat_stamp) = self.load_features(Role::Document)?;
        self.verify(Stage::Features, &feat_stamp, &mut warnings)?;
        let stamp = self.discover_stamp(&feat_stamp);
        let config = self.config.discovery.to_core(self.seed())?;
        let grid = run_grid(&docs, &config, &self.exec)?;
        let dir = self.dir(Stage::Discover);
        let mut listing = text_header("patterns", &stamp);
        listing.push_str("# psi bundle-directory\n");
        let mut written = BTreeMap::new();
        let mut run = RunRecord::new("discover", stamp, vec![("features", feat_stamp)], started);
        for (psi, d) in &grid.sets {
            let bytes = encode_bundle(&d.set, &stamp);
            let name = content_hash(&bytes)[..16].to_string();
            let sub = dir.join(&name);
            write_file(&sub.join("bundle.bin"), &bytes)?;
            write_file(
                &sub.join("summary.txt"),
                summary(&d.set, grid.provenance.get(psi), &stamp).as_bytes(),
            )?;
            let _ = writeln!(listing, "{psi} {name}");
            let iters = grid.provenance.get(psi).map(|p: &Provenance| p.iterations).unwrap_or(0);
            run.lines.push(format!("trained {psi} iterations {iters}"));
            written.insert(*psi, sub);
        }
        for (psi, e) in &grid.failures {
            let _ = writeln!(listing, "# failed {psi}: {e}");
            warnings.push(format!("{psi}: {e}"));
        }
        write_file(&dir.join("manifest.txt"), listing.as_bytes())?;
        run.write(&dir, &warnings)?;
        if written.is_empty() {
            return Err(Error::Data(format!("no granularity could be trained:\n  {}", warnings.join("\n  "))));
        }
        Ok(Outcome {
            stamp,
            warnings,
            detail: written,
        })
    }

    pub fn cmd_similarity(&self) -> Result<Outcome<usize>> {
        let started = Instant::now();
        let mut warnings = Vec::new();
        let (sets, disc) = self.load_patterns()?;
        self.verify(Stage::Discover, &disc, &mut warnings)?;
        let stamp = self.similarity_stamp(&disc);
        let beta = self.config.similarity.beta()?;
        let items: Vec<(&Granularity, &PatternSet)> = sets.iter().collect();
        let matrices = self.exec.map(&items, |(_, set)| -> Result<(SimilarityMatrix, SimilarityMatrix)> {
            Ok((
                build_similarity(set, SimilarityMode::Hard, None)?,
                build_similarity(set, SimilarityMode::Soft, beta)?,
            ))
        });
        let dir = self.dir(Stage::Similarity);
        let mut listing = text_header("similarity", &stamp);
        listing.push_str("# psi hard soft\n");
        for ((psi, _), m) in items.iter().zip(matrices) {
            let (hard, soft) = m?;
            let (h, s) = (format!("{psi}.hard.sim"), format!("{psi}.soft.sim"));
            write_similarity(&dir.join(&h), &hard, &stamp)?;
            write_similarity(&dir.join(&s), &soft, &stamp)?;
            let _ = writeln!(listing, "{psi} {h} {s}");
        }
        write_file(&dir.join("manifest.txt"), listing.as_bytes())?;
        RunRecord::new("similarity", stamp, vec![("discover", disc)], started).write(&dir, &warnings)?;
        Ok(Outcome {
            stamp,
            warnings,
            detail: items.len(),
        })
    }

    pub fn cmd_index(&self) -> Result<Outcome<usize>> {
        let started = Instant::now();
        let mut warnings = Vec::new();
        let (sets, disc) = self.load_patterns()?;
        self.verify(Stage::Discover, &disc, &mut warnings)?;
        let (docs, feat) = self.load_features(Role::Document)?;
        let (queries, feat_q) = self.load_features(Role::Query)?;
        if feat_q != feat {
            return Err(Error::Data("document and query features come from different runs".into()));
        }
        self.verify(Stage::Features, &feat, &mut warnings)?;
        let stamp = self.index_stamp(&disc, &feat);
        let n_best = self.config.index.n_best;
        let dir = self.dir(Stage::Index);
        let mut listing = text_header("index-manifest", &stamp);
        listing.push_str("# psi documents queries\n");
        for (psi, set) in &sets {
            let d = build_index_with(set, &docs, n_best, &self.exec)?;
            let q = build_index_with(set, &queries, n_best, &self.exec)?;
            for (id, e) in d.failures.iter().chain(&q.failures) {
                warnings.push(format!("{psi}: {id} not indexed: {e}"));
            }
            let (dn, qn) = (format!("{psi}.document.idx"), format!("{psi}.query.idx"));
            write_file(&dir.join(&dn), encode_index(&d, &stamp).as_bytes())?;
            write_file(&dir.join(&qn), encode_index(&q, &stamp).as_bytes())?;
            let _ = writeln!(listing, "{psi} {dn} {qn}");
        }
        write_file(&dir.join("manifest.txt"), listing.as_bytes())?;
        RunRecord::new("index", stamp, vec![("discover", disc), ("features", feat)], started).write(&dir, &warnings)?;
        Ok(Outcome {
            stamp,
            warnings,
            detail: sets.len(),
        })
    }

    /// Scores every query against every document for every granularity and
    /// configured method.
    pub fn score_all(&self, index: &IndexSet, sims: &SimilaritySet, methods: &[SearchMethod]) -> Result<RelevanceTable> {
        let manifest = self.manifest()?;
        let mut doc_ids = manifest.ids(Role::Document);
        let mut query_ids = manifest.ids(Role::Query);
        doc_ids.sort();
        query_ids.sort();
        let mut table = RelevanceTable::new(query_ids.clone(), doc_ids.clone());
        let opts = ScoreOptions {
            unnormalized: self.config.search.unnormalized,
        };
        for (psi, (docs, queries)) in index {
            let (hard, soft) = sims
                .get(psi)
                .ok_or_else(|| Error::Data(format!("no similarity matrices for {psi}")))?;
            let scores = score_index(
                docs,
                &doc_ids,
                &queries.entries,
                &query_ids,
                hard,
                Some(soft),
                methods,
                opts,
                &self.exec,
            )?;
            for (method, block) in scores {
                table.insert(RunKey { psi: *psi, method }, block)?;
            }
        }
        Ok(table)
    }

    pub fn cmd_search(&self) -> Result<Outcome<RelevanceTable>> {
        let started = Instant::now();
        let mut warnings = Vec::new();
        let (index, idx_stamp) = self.load_index()?;
        self.verify(Stage::Index, &idx_stamp, &mut warnings)?;
        let (sims, sim_stamp) = self.load_similarity()?;
        self.verify(Stage::Similarity, &sim_stamp, &mut warnings)?;
        let stamp = self.search_stamp(&idx_stamp, &sim_stamp)?;
        let methods = self.config.search.methods()?;
        let mut table = self.score_all(&index, &sims, &methods)?;

        let enabled: Vec<RunKey> = match (self.config.lambda_file(), self.config.search.lambda.as_str()) {
            (Some(p), _) => {
                let keys = read_lambda(&p)?;
                for k in &keys {
                    if table.block(k).is_none() {
                        warnings.push(format!("lambda enables {k}, which has no scores"));
                    }
                }
                keys.into_iter().filter(|k| table.block(k).is_some()).collect()
            }
            (None, "greedy") => {
                let manifest = self.manifest()?;
                let judged = judged_queries(&table, &manifest.judgments, &mut warnings);
                let (dev, _) = split_queries(&judged, self.config.evaluate.dev_fraction, self.seed());
                let budget = self.config.evaluate.budget.min(table.keys().count());
                greedy_select(&table, &dev, None, &manifest.judgments, budget)?
                    .into_iter()
                    .map(|s| s.key)
                    .collect()
            }
            _ => table.keys().copied().collect(),
        };
        for k in &enabled {
            table.weights.insert(*k, true);
        }
        let dir = self.dir(Stage::Search);
        write_file(&dir.join("scores.txt"), encode_scores(&table, &stamp).as_bytes())?;
        let mut lambda = text_header("lambda", &stamp);
        lambda.push_str(&encode_lambda(&enabled));
        write_file(&dir.join("lambda.txt"), lambda.as_bytes())?;
        let fused = if enabled.is_empty() {
            warnings.push("lambda enables no configurations; rankings are empty".into());
            None
        } else {
            Some(table.fuse_keys(&enabled)?)
        };
        write_file(
            &dir.join("rankings.txt"),
            encode_rankings(&table, fused.as_deref(), &stamp).as_bytes(),
        )?;
        let mut run = RunRecord::new("search", stamp, vec![("index", idx_stamp), ("similarity", sim_stamp)], started);
        run.lines.push(format!("configurations {}", table.keys().count()));
        run.lines.push(format!("enabled {}", enabled.len()));
        run.write(&dir, &warnings)?;
        Ok(Outcome {
            stamp,
            warnings,
            detail: table,
        })
    }

    /// Reads `search/lambda.txt`, the keys enabled for the fused ranking.
    pub fn load_enabled(&self) -> Result<Vec<RunKey>> {
        let path = self.dir(Stage::Search).join("lambda.txt");
        read_text(&path, Stage::Search)?;
        read_lambda(&path)
    }

    pub fn cmd_evaluate(&self) -> Result<Outcome<EvaluationSummary>> {
        let started = Instant::now();
        let mut warnings = Vec::new();
        let path = self.dir(Stage::Search).join("scores.txt");
        read_text(&path, Stage::Search)?;
        let (table, search_stamp) = read_scores(&path)?;
        self.verify(Stage::Search, &search_stamp, &mut warnings)?;
        let stamp = self.evaluate_stamp(&search_stamp)?;
        let manifest = self.manifest()?;
        let enabled = self.load_enabled()?;
        let summary = evaluate_table(&table, &manifest.judgments, &enabled, &self.config, &mut warnings)?;
        let dir = self.dir(Stage::Evaluate);
        summary.write(&dir, &stamp)?;
        RunRecord::new("evaluate", stamp, vec![("search", search_stamp)], started).write(&dir, &warnings)?;
        Ok(Outcome {
            stamp,
            warnings,
            detail: summary,
        })
    }

    /// Generates the synthetic corpus named by the `[synth]` section: feature
    /// files next to the corpus manifest plus the manifest itself.
    pub fn cmd_synth(&self) -> Result<Outcome<usize>> {
        let started = Instant::now();
        let spec = self.config.synth.to_core();
        let corpus = synthesize_corpus(&spec, self.seed())?;
        let stamp = Stamp::of("synth", &[&PipelineConfig::section_toml(&self.config.synth)], self.seed());
        let manifest_path = &self.config.paths.corpus;
        let base = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let mut manifest = CorpusManifest::default();
        let mut truth = text_header("synth-truth", &stamp);
        truth.push_str("# id speaker words | units\n");
        let groups = [(Role::Document, &corpus.documents), (Role::Query, &corpus.queries)];
        for (role, utts) in groups {
            for u in utts.iter() {
                let id = u.features.utterance_id.clone();
                let path = base.join("feats").join(format!("{id}.feat"));
                write_features(&path, &u.features, &stamp)?;
                let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
                let _ = writeln!(truth, "{id} {} {} | {}", u.speaker, list(&u.words), list(&u.units));
                let rec = Utterance { id, role, path };
                match role {
                    Role::Document => manifest.documents.push(rec),
                    Role::Query => manifest.queries.push(rec),
                }
            }
        }
        manifest.judgments = corpus.judgments.clone();
        manifest.validate()?;
        write_file(manifest_path, manifest.to_text(&base).as_bytes())?;
        write_file(&base.join("truth.txt"), truth.as_bytes())?;
        let mut run = RunRecord::new("synth", stamp, Vec::new(), started);
        run.lines.push(format!("documents {}", corpus.documents.len()));
        run.lines.push(format!("queries {}", corpus.queries.len()));
        run.write(&base, &[])?;
        Ok(Outcome {
            stamp,
            warnings: Vec::new(),
            detail: corpus.documents.len() + corpus.queries.len(),
        })
    }

    /// Runs every stage in order.
    pub fn run_all(&self) -> Result<Vec<String>> {
        let mut warnings = Vec::new();
        warnings.extend(self.cmd_features()?.warnings);
        warnings.extend(self.cmd_discover()?.warnings);
        warnings.extend(self.cmd_similarity()?.warnings);
        warnings.extend(self.cmd_index()?.warnings);
        warnings.extend(self.cmd_search()?.warnings);
        warnings.extend(self.cmd_evaluate()?.warnings);
        Ok(warnings)
    }
}

/// Everything `cmd_evaluate` reports.
#[derive(Debug, Clone)]
pub struct EvaluationSummary {
    pub judged: Vec<String>,
    pub dev: Vec<String>,
    pub eval: Vec<String>,
    /// Per-configuration MAP, P@5, P@10 over all judged queries.
    pub per_config: Vec<(RunKey, f64, f64, f64)>,
    /// Fusion of the keys enabled in `search/lambda.txt`.
    pub enabled: Option<mgpat_core::eval::EvaluationReport>,
    /// Fusion of every configuration, on all judged queries and on the eval split.
    pub all_ones_map: f64,
    pub all_ones_eval_map: f64,
    pub selection: Vec<SelectionStep>,
    pub oracle: Vec<SelectionStep>,
    pub marginals: MarginalReport,
}

impl EvaluationSummary {
    pub fn best_single(&self) -> Option<(RunKey, f64)> {
        self.per_config
            .iter()
            .fold(None, |best: Option<(RunKey, f64)>, (k, map, _, _)| match best {
                Some((_, b)) if b >= *map => best,
                _ => Some((*k, *map)),
            })
    }

    pub fn median_single(&self) -> f64 {
        let mut maps: Vec<f64> = self.per_config.iter().map(|c| c.1).collect();
        maps.sort_by(f64::total_cmp);
        let n = maps.len();
        if n == 0 {
            return 0.0;
        }
        if n % 2 == 1 {
            maps[n / 2]
        } else {
            (maps[n / 2 - 1] + maps[n / 2]) / 2.0
        }
    }

    fn write(&self, dir: &Path, stamp: &Stamp) -> Result<()> {
        let csv_header = |cols: &str| format!("# config_hash {}\n# seed {}\n{cols}\n", stamp.hex(), stamp.seed);

        let mut s = csv_header("psi,gamma,map,p_at_5,p_at_10");
        for (k, map, p5, p10) in &self.per_config {
            let _ = writeln!(s, "{},{},{map:.6},{p5:.6},{p10:.6}", k.psi, k.method);
        }
        write_file(&dir.join("per_config.csv"), s.as_bytes())?;

        if let Some(rep) = &self.enabled {
            let mut s = csv_header("query,split,ap,p_at_5,p_at_10");
            for q in &rep.per_query {
                let split = if self.dev.contains(&q.query) { "dev" } else { "eval" };
                let _ = writeln!(
                    s,
                    "{},{split},{:.6},{:.6},{:.6}",
                    q.query, q.average_precision, q.precision_at_5, q.precision_at_10
                );
            }
            write_file(&dir.join("queries.csv"), s.as_bytes())?;
        }

        for (name, trace) in [("selection.csv", &self.selection), ("oracle.csv", &self.oracle)] {
            let mut s = csv_header("step,psi,gamma,dev_map,eval_map");
            for st in trace {
                let eval = st.eval_map.map(|v| format!("{v:.6}")).unwrap_or_default();
                let _ = writeln!(s, "{},{},{},{:.6},{eval}", st.step, st.key.psi, st.key.method, st.dev_map);
            }
            write_file(&dir.join(name), s.as_bytes())?;
        }

        let m = &self.marginals;
        let mut s = csv_header("gamma,map");
        for (g, v) in &m.by_method {
            let _ = writeln!(s, "{g},{v:.6}");
        }
        write_file(&dir.join("marginal_gamma.csv"), s.as_bytes())?;
        for (name, dim, values) in [("marginal_m.csv", "m", &m.by_m), ("marginal_n.csv", "n", &m.by_n), ("marginal_l.csv", "l", &m.by_l)] {
            let mut s = csv_header(&format!("{dim},map"));
            for (v, map) in values {
                let _ = writeln!(s, "{v},{map:.6}");
            }
            write_file(&dir.join(name), s.as_bytes())?;
        }
        let cols: Vec<String> = m.n_values.iter().map(|n| format!("n{n}")).collect();
        let mut s = csv_header(&format!("m,{}", cols.join(",")));
        for (mv, row) in m.m_values.iter().zip(&m.plane) {
            let cells: Vec<String> = row.iter().map(|c| c.map(|v| format!("{v:.6}")).unwrap_or_default()).collect();
            let _ = writeln!(s, "{mv},{}", cells.join(","));
        }
        write_file(&dir.join("plane.csv"), s.as_bytes())?;

        let mut t = text_header("evaluation", stamp);
        let _ = writeln!(t, "judged queries {} (dev {}, eval {})", self.judged.len(), self.dev.len(), self.eval.len());
        let _ = writeln!(t, "configurations {}", self.per_config.len());
        if let Some(rep) = &self.enabled {
            let _ = writeln!(
                t,
                "enabled fusion: MAP {:.4}  P@5 {:.4}  P@10 {:.4}",
                rep.map, rep.precision_at_5, rep.precision_at_10
            );
        }
        let _ = writeln!(t, "all-ones fusion: MAP {:.4} (eval split {:.4})", self.all_ones_map, self.all_ones_eval_map);
        if let Some((k, v)) = self.best_single() {
            let _ = writeln!(t, "best single configuration: {k} MAP {v:.4}");
        }
        let _ = writeln!(t, "median single configuration MAP {:.4}", self.median_single());
        if let Some(last) = self.selection.last() {
            let _ = writeln!(
                t,
                "greedy selection ({} steps): dev MAP {:.4}, eval MAP {:.4}",
                last.step,
                last.dev_map,
                last.eval_map.unwrap_or(f64::NAN)
            );
        }
        if let Some(last) = self.oracle.last() {
            let _ = writeln!(t, "oracle selection on eval ({} steps): MAP {:.4}", last.step, last.dev_map);
        }
        let _ = writeln!(t, "marginals for gamma {} with the (m,n) plane at l={}", m.method, m.plane_l);
        for w in &m.warnings {
            let _ = writeln!(t, "warning {w}");
        }
        write_file(&dir.join("summary.txt"), t.as_bytes())
    }
}

/// Queries with at least one relevant document; the rest are reported.
fn judged_queries(table: &RelevanceTable, judgments: &Judgments, warnings: &mut Vec<String>) -> Vec<String> {
    let mut judged = Vec::new();
    for q in &table.queries {
        match judgments.get(q) {
            Some(j) if !j.is_empty() => judged.push(q.clone()),
            _ => warnings.push(format!("query {q} has no relevant documents; left out of metrics")),
        }
    }
    judged
}

/// Metrics, selection traces and marginals for a score table.
pub fn evaluate_table(
    table: &RelevanceTable,
    judgments: &Judgments,
    enabled: &[RunKey],
    config: &PipelineConfig,
    warnings: &mut Vec<String>,
) -> Result<EvaluationSummary> {
    let judged = judged_queries(table, judgments, warnings);
    if judged.len() < 2 {
        return Err(Error::Data("evaluation needs at least two judged queries".into()));
    }
    let (dev, eval) = split_queries(&judged, config.evaluate.dev_fraction, config.seed);
    let keys: Vec<RunKey> = table.keys().copied().collect();
    if keys.is_empty() {
        return Err(Error::Data("score table is empty".into()));
    }
    let mut per_config = Vec::with_capacity(keys.len());
    for k in &keys {
        let r = evaluate(table, table.block(k).expect("listed key"), &judged, judgments)?;
        per_config.push((*k, r.map, r.precision_at_5, r.precision_at_10));
    }
    let enabled_report = if enabled.is_empty() {
        None
    } else {
        Some(evaluate(table, &table.fuse_keys(enabled)?, &judged, judgments)?)
    };
    let all_ones_map = map_of(table, &keys, &judged, judgments)?;
    let all_ones_eval_map = map_of(table, &keys, &eval, judgments)?;
    let budget = config.evaluate.budget.min(keys.len());
    if budget < config.evaluate.budget {
        warnings.push(format!("selection budget capped at {budget} available configurations"));
    }
    let selection = greedy_select(table, &dev, Some(&eval), judgments, budget)?;
    let oracle = greedy_select(table, &eval, Some(&eval), judgments, budget)?;
    let method: SearchMethod = config.evaluate.plane_method.parse().expect("validated");
    let marginals = marginal_analysis(table, method, config.evaluate.plane_l, &judged, judgments)?;
    warnings.extend(marginals.warnings.iter().cloned());
    Ok(EvaluationSummary {
        judged,
        dev,
        eval,
        per_config,
        enabled: enabled_report,
        all_ones_map,
        all_ones_eval_map,
        selection,
        oracle,
        marginals,
    })
}
