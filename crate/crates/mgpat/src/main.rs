use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mgpat::bench::bench_pairs;
use mgpat::config::ARTIFACTS_ENV;
use mgpat::manifest::Role;
use mgpat::pipeline::Outcome;
use mgpat::{Error, Pipeline, PipelineConfig, Result, Stage};

/// Multi-granularity acoustic pattern discovery and spoken term search.
///
/// Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
#[derive(Debug, Parser)]
#[command(name = "mgpat", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML configuration file.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Artifact root (overrides the config).
    #[arg(long, global = true, env = ARTIFACTS_ENV)]
    artifacts: Option<PathBuf>,
    /// Corpus manifest (overrides the config).
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(short = 'j', long, global = true)]
    workers: Option<usize>,
    /// Use upstream artifacts even if their config hash does not match.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Extract features for every utterance in the corpus manifest.
    Features {
        #[arg(long)]
        window: Option<f64>,
        #[arg(long)]
        shift: Option<f64>,
        #[arg(long)]
        filters: Option<usize>,
        #[arg(long)]
        ceps: Option<usize>,
        /// Subtract the per-utterance cepstral mean.
        #[arg(long)]
        cmn: bool,
    },
    /// Train pattern sets over the configured (m, n, l) grid.
    Discover,
    /// Build hard and soft similarity matrices for every pattern set.
    Similarity {
        /// Fixed beta for every granularity instead of 100 * m.
        #[arg(long)]
        beta: Option<f64>,
    },
    /// Decode documents and queries into 1-best, N-best and posteriorgram indexes.
    Index {
        #[arg(short = 'n', long)]
        n_best: Option<usize>,
    },
    /// Score all queries against all documents and write fused rankings.
    Search {
        /// Method codes (soft, N-best, DTW bits), e.g. 100,101.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
        /// "all", "greedy", or a lambda file.
        #[arg(long)]
        lambda: Option<String>,
        /// Report raw sums instead of length-normalized scores.
        #[arg(long)]
        unnormalized: bool,
    },
    /// Compute MAP, P@5, P@10, greedy selection traces and marginal grids.
    Evaluate {
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Generate the synthetic corpus described by the [synth] section.
    Synth,
    /// Time frame-level DTW against pattern-level matching.
    Bench,
    /// Run features, discover, similarity, index, search and evaluate in order.
    All,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let c = &cli.common;
    let mut config = match &c.config {
        Some(p) => PipelineConfig::load(p)?,
        None => {
            let mut d = PipelineConfig::default();
            d.resolve_paths(&std::env::current_dir().map_err(|e| Error::Internal(e.to_string()))?);
            d
        }
    };
    if let Some(a) = &c.artifacts {
        config.paths.artifacts = a.clone();
    }
    if let Some(p) = &c.corpus {
        config.paths.corpus = p.clone();
    }
    if let Some(s) = c.seed {
        config.seed = s;
    }
    if let Some(w) = c.workers {
        config.workers = w;
    }
    match &cli.command {
        Command::Features {
            window,
            shift,
            filters,
            ceps,
            cmn,
        } => {
            let f = &mut config.features;
            f.window_secs = window.unwrap_or(f.window_secs);
            f.shift_secs = shift.unwrap_or(f.shift_secs);
            f.num_filters = filters.unwrap_or(f.num_filters);
            f.num_ceps = ceps.unwrap_or(f.num_ceps);
            f.mean_normalize |= cmn;
        }
        Command::Similarity { beta: Some(b) } => config.similarity.beta = mgpat::config::BetaPolicy::Fixed(*b),
        Command::Index { n_best: Some(n) } => config.index.n_best = *n,
        Command::Search {
            methods,
            lambda,
            unnormalized,
        } => {
            if let Some(m) = methods {
                config.search.methods = m.clone();
            }
            if let Some(l) = lambda {
                config.search.lambda = l.clone();
            }
            config.search.unnormalized |= unnormalized;
        }
        Command::Evaluate { budget: Some(b) } => config.evaluate.budget = *b,
        _ => {}
    }
    Ok(config)
}

fn report<T>(what: &str, o: &Outcome<T>, detail: String) {
    println!("{what}: {detail} [config {}]", o.stamp);
    for w in &o.warnings {
        eprintln!("warning: {w}");
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(&cli)?;
    let p = Pipeline::new(config, cli.common.force)?;
    match cli.command {
        Command::Features { .. } => {
            let o = p.cmd_features()?;
            report("features", &o, format!("{} utterances", o.detail));
        }
        Command::Discover => {
            let o = p.cmd_discover()?;
            report("discover", &o, format!("{} pattern sets", o.detail.len()));
        }
        Command::Similarity { .. } => {
            let o = p.cmd_similarity()?;
            report("similarity", &o, format!("{} granularities", o.detail));
        }
        Command::Index { .. } => {
            let o = p.cmd_index()?;
            report("index", &o, format!("{} granularities", o.detail));
        }
        Command::Search { .. } => {
            let o = p.cmd_search()?;
            let t = &o.detail;
            let detail = format!(
                "{} configurations, {} queries x {} documents",
                t.keys().count(),
                t.queries.len(),
                t.documents.len()
            );
            report("search", &o, detail);
        }
        Command::Evaluate { .. } => {
            let o = p.cmd_evaluate()?;
            let s = &o.detail;
            let mut detail = format!("all-ones MAP {:.4}", s.all_ones_map);
            if let Some(r) = &s.enabled {
                detail = format!("MAP {:.4}, P@5 {:.4}, P@10 {:.4}; {detail}", r.map, r.precision_at_5, r.precision_at_10);
            }
            report("evaluate", &o, detail);
            println!("reports in {}", p.dir(Stage::Evaluate).display());
        }
        Command::Synth => {
            let o = p.cmd_synth()?;
            report("synth", &o, format!("{} utterances -> {}", o.detail, p.config.paths.corpus.display()));
        }
        Command::Bench => {
            let mut warnings = Vec::new();
            let (sims, _) = p.load_similarity()?;
            let (index, _) = p.load_index()?;
            let (docs, _) = p.load_features(Role::Document)?;
            let (queries, _) = p.load_features(Role::Query)?;
            let b = &p.config.bench;
            let psi = index
                .keys()
                .find(|g| g.m == b.m && g.l == 1)
                .or_else(|| index.keys().find(|g| g.m == b.m))
                .or_else(|| {
                    warnings.push(format!("no index with m={}; using the first one", b.m));
                    index.keys().next()
                })
                .copied()
                .ok_or_else(|| Error::Data("no indexes to benchmark".into()))?;
            let (di, qi) = &index[&psi];
            let q: Vec<_> = queries.into_iter().take(b.queries).collect();
            let d: Vec<_> = docs.into_iter().take(b.documents).collect();
            let r = bench_pairs(&q, &d, di, qi, &sims[&psi].0, b.repeats)?;
            let text = r.to_text();
            mgpat::binio::write_file(&p.config.paths.artifacts.join("bench").join("report.txt"), text.as_bytes())?;
            print!("{text}");
            for w in warnings {
                eprintln!("warning: {w}");
            }
        }
        Command::All => {
            for w in p.run_all()? {
                eprintln!("warning: {w}");
            }
            println!("pipeline complete; reports in {}", p.dir(Stage::Evaluate).display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mgpat: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
