//! `treeid` command-line interface.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::bench::{compare_methods, time_builds, BlobSpec, TimingOptions};
use crate::decode::{beam_search, dot_scorer, BeamConfig};
use crate::error::Result;
use crate::io;
use crate::metrics::{evaluate_run, DEFAULT_CUTOFFS};
use crate::treebuild::{build_tree_with_stats, node_embeddings};
use crate::types::{validate_tree, Method, TreeBuildConfig, DEFAULT_GREEDY_THRESHOLD, DEFAULT_K};

pub const THREADS_ENV: &str = "TREEID_THREADS";

#[derive(Debug, Parser)]
#[command(name = "treeid", version, about = "Balanced k-ary item identifier trees")]
struct Cli {
    /// Worker threads (overrides TREEID_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build an identifier tree from item embeddings.
    BuildTree(BuildTreeArgs),
    /// Beam-search the tree for each query embedding.
    Decode(DecodeArgs),
    /// Recall, Hit and NDCG of a ranking file against ground truth.
    Eval(EvalArgs),
    /// Construction-time benchmarks on synthetic blobs.
    Bench {
        #[command(subcommand)]
        mode: BenchMode,
    },
    /// Check a tree file's structural invariants.
    Verify {
        #[arg(long)]
        tree: PathBuf,
    },
    /// Write a synthetic blob embedding file.
    GenSynth {
        #[command(flatten)]
        blobs: BlobArgs,
        #[arg(long, default_value_t = 10_000)]
        n_items: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct TreeArgs {
    #[arg(long, default_value = "hybrid")]
    method: Method,
    #[arg(long, default_value_t = DEFAULT_K as u64, value_parser = clap::value_parser!(u64).range(2..))]
    k: u64,
    #[arg(long, default_value_t = DEFAULT_GREEDY_THRESHOLD)]
    threshold: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl TreeArgs {
    fn config(&self) -> TreeBuildConfig {
        TreeBuildConfig {
            k: self.k as usize,
            greedy_threshold: self.threshold,
            method: self.method,
            seed: self.seed,
            ..TreeBuildConfig::default()
        }
    }
}

#[derive(Debug, Args)]
struct BuildTreeArgs {
    #[arg(long)]
    embeddings: PathBuf,
    #[command(flatten)]
    tree: TreeArgs,
    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DecodeArgs {
    #[arg(long)]
    tree: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, default_value_t = 50)]
    beam: usize,
    #[arg(long, default_value_t = 20)]
    top: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    runs: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_CUTOFFS)]
    cutoffs: Vec<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BlobArgs {
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 64)]
    n_blobs: usize,
    #[arg(long, default_value_t = 1.0)]
    spread: f64,
    #[arg(long = "data-seed", default_value_t = 0)]
    data_seed: u64,
}

impl BlobArgs {
    fn spec(&self, n_items: usize) -> BlobSpec {
        BlobSpec {
            n_items,
            dim: self.dim,
            n_blobs: self.n_blobs.min(n_items.max(1)),
            blob_spread: self.spread,
            seed: self.data_seed,
        }
    }
}

#[derive(Debug, Args)]
struct TimingArgs {
    #[arg(long, default_value_t = 1)]
    warmup: usize,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
    repeats: u64,
}

impl TimingArgs {
    fn options(&self) -> TimingOptions {
        TimingOptions { warmup: self.warmup, repeats: self.repeats as usize }
    }
}

#[derive(Debug, Subcommand)]
enum BenchMode {
    /// Build time per (size, method).
    Scaling {
        #[arg(long, value_delimiter = ',', default_values_t = [10_000usize, 40_000])]
        sizes: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = Method::ALL)]
        methods: Vec<Method>,
        #[command(flatten)]
        blobs: BlobArgs,
        #[command(flatten)]
        tree: TreeArgs,
        #[command(flatten)]
        timing: TimingArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// All three methods on one dataset, with time and SSE ratios.
    Compare {
        #[arg(long, default_value_t = 100_000)]
        n_items: usize,
        #[command(flatten)]
        blobs: BlobArgs,
        #[command(flatten)]
        tree: TreeArgs,
        #[command(flatten)]
        timing: TimingArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Usage(String),
    Data(crate::error::Error),
}

impl From<crate::error::Error> for Failure {
    fn from(e: crate::error::Error) -> Self {
        Failure::Data(e)
    }
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let threads = match resolve_threads(cli.threads) {
        Ok(t) => t,
        Err(msg) => {
            eprintln!("error: {msg}");
            return 1;
        }
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return 2;
        }
    };
    log::info!("workers: {}", pool.current_num_threads());
    match pool.install(|| dispatch(cli.command)) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn resolve_threads(flag: Option<usize>) -> std::result::Result<Option<usize>, String> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) if !v.trim().is_empty() => Some(
                v.trim().parse::<usize>().map_err(|_| format!("{THREADS_ENV}='{v}' is not a thread count"))?,
            ),
            _ => None,
        },
    };
    if n == Some(0) {
        return Err("thread count must be >= 1".into());
    }
    Ok(n)
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn dispatch(cmd: Command) -> std::result::Result<(), Failure> {
    match cmd {
        Command::BuildTree(a) => {
            let cfg = a.tree.config();
            cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
            let x = io::load_embeddings(&a.embeddings)?;
            let (tree, stats) = build_tree_with_stats(&x, &cfg)?;
            log::info!(
                "built tree: {} items, depth {}, {} nodes, sse {:.6e}, {:.3}s",
                tree.n_items(),
                tree.depth(),
                tree.nodes().len(),
                stats.total_sse,
                stats.seconds
            );
            io::write_tree(&tree, output(a.out.as_deref())?)?;
        }
        Command::Decode(a) => {
            let cfg = BeamConfig::new(a.beam, a.top).map_err(|e| Failure::Usage(e.to_string()))?;
            let tree = io::read_tree_file(&a.tree)?;
            let x = io::load_embeddings(&a.embeddings)?;
            let queries = io::load_embeddings(&a.queries)?;
            let scorer = dot_scorer(&tree, node_embeddings(&tree, &x)?)?;
            let rankings = (0..queries.n_items())
                .into_par_iter()
                .map(|q| {
                    let out = beam_search(&tree, &scorer, queries.row(q), cfg)?;
                    Ok((q.to_string(), out.ranked))
                })
                .collect::<Result<Vec<_>>>()?;
            io::write_rankings_csv(&rankings, output(a.out.as_deref())?)?;
        }
        Command::Eval(a) => {
            if a.cutoffs.contains(&0) {
                return Err(Failure::Usage("cutoffs must be >= 1".into()));
            }
            let runs = io::read_rankings_csv(&a.runs)?;
            let truth = io::read_truth_csv(&a.truth)?;
            let report = evaluate_run(&io::join_runs(&runs, truth), &a.cutoffs)?;
            io::write_eval_csv(&report, output(a.out.as_deref())?)?;
        }
        Command::Bench { mode } => match mode {
            BenchMode::Scaling { sizes, methods, blobs, tree, timing, out } => {
                tree.config().validate().map_err(|e| Failure::Usage(e.to_string()))?;
                let rows = time_builds(&sizes, &methods, &blobs.spec(sizes[0]), &tree.config(), timing.options())?;
                io::write_bench_csv(&rows, output(out.as_deref())?)?;
            }
            BenchMode::Compare { n_items, blobs, tree, timing, out } => {
                tree.config().validate().map_err(|e| Failure::Usage(e.to_string()))?;
                let row = compare_methods(&blobs.spec(n_items), &tree.config(), timing.options())?;
                io::write_compare_csv(&[row], output(out.as_deref())?)?;
            }
        },
        Command::Verify { tree } => {
            let t = io::read_tree_file(&tree)?;
            let report = validate_tree(&t);
            if !report.is_ok() {
                for v in &report.violations {
                    eprintln!("violation: {v}");
                }
                report.into_result()?;
            }
            println!("ok: {} items, k={}, depth {}, {} nodes", t.n_items(), t.k(), t.depth(), t.nodes().len());
        }
        Command::GenSynth { blobs, n_items, out } => {
            let x = crate::bench::gen_blobs(&blobs.spec(n_items))?;
            io::write_embeddings_file(&x, &out)?;
        }
    }
    Ok(())
}
