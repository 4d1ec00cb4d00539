//! Pipeline configuration, read from TOML. Every field has a default, so an
//! empty file is a valid configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mgpat_core::synth::{Lexicon, SyntheticSpec};
use mgpat_core::{DiscoveryConfig, FeatureConfig, Granularity, SearchMethod};

use crate::error::{Error, Result};

/// Environment variable overriding `paths.artifacts`.
pub const ARTIFACTS_ENV: &str = "MGPAT_ARTIFACTS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    pub paths: Paths,
    pub features: FeatureSection,
    pub discovery: DiscoverySection,
    pub similarity: SimilaritySection,
    pub index: IndexSection,
    pub search: SearchSection,
    pub evaluate: EvaluateSection,
    pub synth: SynthSection,
    pub bench: BenchSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 0,
            paths: Paths::default(),
            features: FeatureSection::default(),
            discovery: DiscoverySection::default(),
            similarity: SimilaritySection::default(),
            index: IndexSection::default(),
            search: SearchSection::default(),
            evaluate: EvaluateSection::default(),
            synth: SynthSection::default(),
            bench: BenchSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Corpus manifest.
    pub corpus: PathBuf,
    pub artifacts: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            corpus: PathBuf::from("corpus/manifest.txt"),
            artifacts: PathBuf::from("artifacts"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSection {
    pub window_secs: f64,
    pub shift_secs: f64,
    pub pre_emphasis: f64,
    pub num_filters: usize,
    pub num_ceps: usize,
    pub delta_window: usize,
    pub low_freq: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub high_freq: Option<f64>,
    pub mean_normalize: bool,
}

impl Default for FeatureSection {
    fn default() -> Self {
        FeatureConfig::default().into()
    }
}

impl From<FeatureConfig> for FeatureSection {
    fn from(c: FeatureConfig) -> Self {
        Self {
            window_secs: c.window_secs,
            shift_secs: c.shift_secs,
            pre_emphasis: c.pre_emphasis,
            num_filters: c.num_filters,
            num_ceps: c.num_ceps,
            delta_window: c.delta_window,
            low_freq: c.low_freq,
            high_freq: c.high_freq,
            mean_normalize: c.mean_normalize,
        }
    }
}

impl FeatureSection {
    pub fn to_core(&self) -> FeatureConfig {
        FeatureConfig {
            window_secs: self.window_secs,
            shift_secs: self.shift_secs,
            pre_emphasis: self.pre_emphasis,
            num_filters: self.num_filters,
            num_ceps: self.num_ceps,
            delta_window: self.delta_window,
            low_freq: self.low_freq,
            high_freq: self.high_freq,
            mean_normalize: self.mean_normalize,
        }
    }
}

/// The grid is the product of the `m`, `n` and `l` lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscoverySection {
    pub m: Vec<usize>,
    pub n: Vec<usize>,
    pub l: Vec<usize>,
    pub max_iterations: usize,
    pub convergence_threshold: f64,
    pub em_iterations: usize,
    pub kmeans_restarts: usize,
}

impl Default for DiscoverySection {
    fn default() -> Self {
        let d = DiscoveryConfig::default();
        Self {
            m: vec![3, 5],
            n: vec![10, 20],
            l: vec![1, 2],
            max_iterations: d.max_iterations,
            convergence_threshold: d.convergence_threshold,
            em_iterations: d.em_iterations,
            kmeans_restarts: d.kmeans_restarts,
        }
    }
}

impl DiscoverySection {
    pub fn grid(&self) -> Result<Vec<Granularity>> {
        let mut grid = Vec::new();
        for &m in &self.m {
            for &n in &self.n {
                for &l in &self.l {
                    grid.push(Granularity::new(m, n, l)?);
                }
            }
        }
        grid.sort();
        grid.dedup();
        Ok(grid)
    }

    pub fn to_core(&self, seed: u64) -> Result<DiscoveryConfig> {
        let c = DiscoveryConfig {
            grid: self.grid()?,
            max_iterations: self.max_iterations,
            convergence_threshold: self.convergence_threshold,
            seed,
            em_iterations: self.em_iterations,
            kmeans_restarts: self.kmeans_restarts,
        };
        c.validate()?;
        Ok(c)
    }
}

/// `beta = "auto"` uses 100 * m; a number fixes beta for every granularity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BetaPolicy {
    Fixed(f64),
    Named(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimilaritySection {
    pub beta: BetaPolicy,
}

impl Default for SimilaritySection {
    fn default() -> Self {
        Self {
            beta: BetaPolicy::Named("auto".into()),
        }
    }
}

impl SimilaritySection {
    pub fn beta(&self) -> Result<Option<f64>> {
        match &self.beta {
            BetaPolicy::Fixed(b) if *b > 0.0 => Ok(Some(*b)),
            BetaPolicy::Fixed(b) => Err(Error::Usage(format!("beta must be positive, got {b}"))),
            BetaPolicy::Named(s) if s == "auto" => Ok(None),
            BetaPolicy::Named(s) => Err(Error::Usage(format!("beta must be a number or \"auto\", got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndexSection {
    pub n_best: usize,
}

impl Default for IndexSection {
    fn default() -> Self {
        Self { n_best: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSection {
    /// Method codes: soft, N-best, DTW bits, e.g. "101".
    pub methods: Vec<String>,
    pub unnormalized: bool,
    /// `"all"`, `"greedy"`, or a lambda file path.
    pub lambda: String,
}

impl Default for SearchSection {
    fn default() -> Self {
        Self {
            methods: SearchMethod::all().iter().map(|m| m.to_string()).collect(),
            unnormalized: false,
            lambda: "all".into(),
        }
    }
}

impl SearchSection {
    pub fn methods(&self) -> Result<Vec<SearchMethod>> {
        let mut out: Vec<SearchMethod> = self
            .methods
            .iter()
            .map(|s| s.parse().map_err(|_| Error::Usage(format!("bad search method {s:?}; expected e.g. \"101\""))))
            .collect::<Result<_>>()?;
        out.sort();
        out.dedup();
        if out.is_empty() {
            return Err(Error::Usage("no search methods configured".into()));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    /// Fraction of judged queries used for greedy selection.
    pub dev_fraction: f64,
    pub budget: usize,
    pub plane_method: String,
    pub plane_l: usize,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self {
            dev_fraction: 0.5,
            budget: 20,
            plane_method: "100".into(),
            plane_l: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub dim: usize,
    pub units: usize,
    pub states_per_unit: usize,
    pub self_loop: f64,
    pub mean_spread: f64,
    pub emission_std: f64,
    /// Explicit terms as unit lists; when absent `terms` random ones are made.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lexicon: Option<Vec<Vec<usize>>>,
    pub terms: usize,
    pub min_units: usize,
    pub max_units: usize,
    pub speakers: usize,
    pub perturbation: f64,
    pub documents: usize,
    pub queries: usize,
    pub min_words: usize,
    pub max_words: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        let s = SyntheticSpec::default();
        let (terms, min_units, max_units) = match s.lexicon {
            Lexicon::Generated {
                terms,
                min_units,
                max_units,
            } => (terms, min_units, max_units),
            Lexicon::Explicit(_) => unreachable!("default lexicon is generated"),
        };
        Self {
            dim: s.dim,
            units: s.units,
            states_per_unit: s.states_per_unit,
            self_loop: s.self_loop,
            mean_spread: s.mean_spread,
            emission_std: s.emission_std,
            lexicon: None,
            terms,
            min_units,
            max_units,
            speakers: s.speakers,
            perturbation: s.perturbation,
            documents: s.documents,
            queries: s.queries,
            min_words: s.min_words,
            max_words: s.max_words,
        }
    }
}

impl SynthSection {
    pub fn to_core(&self) -> SyntheticSpec {
        SyntheticSpec {
            dim: self.dim,
            units: self.units,
            states_per_unit: self.states_per_unit,
            self_loop: self.self_loop,
            mean_spread: self.mean_spread,
            emission_std: self.emission_std,
            lexicon: match &self.lexicon {
                Some(terms) => Lexicon::Explicit(terms.clone()),
                None => Lexicon::Generated {
                    terms: self.terms,
                    min_units: self.min_units,
                    max_units: self.max_units,
                },
            },
            speakers: self.speakers,
            perturbation: self.perturbation,
            documents: self.documents,
            queries: self.queries,
            min_words: self.min_words,
            max_words: self.max_words,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    /// States per pattern of the index to time against.
    pub m: usize,
    pub queries: usize,
    pub documents: usize,
    pub repeats: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            m: 5,
            queries: 5,
            documents: 40,
            repeats: 3,
        }
    }
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Usage(format!("config: {e}")))
    }

    /// Reads a config file; relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        let mut c = Self::parse(&text).map_err(|e| match e {
            Error::Usage(msg) => Error::Usage(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        c.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(c)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.paths.corpus, &mut self.paths.artifacts] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(l) = self.lambda_file() {
            if l.is_relative() {
                self.search.lambda = base.join(l).display().to_string();
            }
        }
    }

    pub fn lambda_file(&self) -> Option<PathBuf> {
        match self.search.lambda.as_str() {
            "all" | "greedy" => None,
            p => Some(PathBuf::from(p)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.features.to_core().validate()?;
        self.discovery.to_core(self.seed)?;
        self.similarity.beta()?;
        if self.index.n_best == 0 {
            return Err(Error::Usage("index.n_best must be at least 1".into()));
        }
        self.search.methods()?;
        if !(self.evaluate.dev_fraction > 0.0 && self.evaluate.dev_fraction < 1.0) {
            return Err(Error::Usage("evaluate.dev_fraction must lie in (0, 1)".into()));
        }
        if self.evaluate.budget == 0 {
            return Err(Error::Usage("evaluate.budget must be at least 1".into()));
        }
        self.evaluate
            .plane_method
            .parse::<SearchMethod>()
            .map_err(|_| Error::Usage(format!("bad evaluate.plane_method {:?}", self.evaluate.plane_method)))?;
        Ok(())
    }

    /// Canonical TOML of one section, the input to stage hashes.
    pub fn section_toml<T: Serialize>(section: &T) -> Vec<u8> {
        toml::to_string(section).expect("config sections serialize").into_bytes()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = PipelineConfig::parse("").unwrap();
        assert_eq!(c, PipelineConfig::default());
        c.validate().unwrap();
        assert_eq!(c.discovery.grid().unwrap().len(), 8);
        assert_eq!(c.similarity.beta().unwrap(), None);
        assert_eq!(c.search.methods().unwrap().len(), 8);
    }

    #[test]
    fn overrides_and_errors() {
        let c = PipelineConfig::parse("seed = 4\n[similarity]\nbeta = 50.0\n[discovery]\nm = [2]\nn = [4]\nl = [1]\n").unwrap();
        assert_eq!(c.similarity.beta().unwrap(), Some(50.0));
        assert_eq!(c.discovery.grid().unwrap(), vec![Granularity::new(2, 4, 1).unwrap()]);
        assert!(PipelineConfig::parse("bogus = 1\n").is_err());
        let bad = PipelineConfig::parse("[similarity]\nbeta = \"big\"\n").unwrap();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let mut c = PipelineConfig::parse("[paths]\ncorpus = \"c/m.txt\"\n[search]\nlambda = \"l.txt\"\n").unwrap();
        c.resolve_paths(Path::new("/etc/x"));
        assert_eq!(c.paths.corpus, PathBuf::from("/etc/x/c/m.txt"));
        assert_eq!(c.lambda_file(), Some(PathBuf::from("/etc/x/l.txt")));
    }
}
