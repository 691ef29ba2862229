//! Command-line entry point: corpus generation, token-cost analysis,
//! density reporting, evaluation runs, and the wire-protocol stub
//! server.

use manyshot_cli::{config_file, corpus, dataset, density, remote, stub};

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use manyshot_core::codec::{amortization_ratio, compression_report, round_to, TokenProfile};
use manyshot_core::harness::{
    local_backend, shot_sweep, split_dataset, Backend, EvalOptions, EvalReport, KnnBackend,
};
use manyshot_core::pipeline::synthesize_dataset;
use manyshot_core::task::TaskTable;
use manyshot_core::trees::KnnParams;
use manyshot_core::CorpusConfig;

#[derive(Parser)]
#[command(name = "manyshot", version, about = "Synthetic many-shot tabular task corpus and evaluation tool")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an admitted-task corpus as JSONL.
    Generate(GenerateArgs),
    /// Print the token compression table and amortization curve.
    AnalyzeTokens(AnalyzeArgs),
    /// Report task density over feature/shot bins for a corpus file.
    Density(DensityArgs),
    /// Evaluate a backend under the chunked many-shot protocol.
    Eval(EvalArgs),
    /// Serve the wire protocol with deterministic toy behavior.
    StubServer(StubArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Key/value config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of admitted tasks to emit.
    #[arg(long, default_value_t = 100)]
    count: u64,
    /// Output JSONL path.
    #[arg(long)]
    out: PathBuf,
    /// Audit JSONL of rejected/degenerate task ids.
    #[arg(long)]
    rejected: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, default_value_t = 4)]
    workers: usize,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Warm-up mode: apply the example-level consensus filter.
    #[arg(long)]
    warmup: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Profile name, or "all".
    #[arg(long, default_value = "all")]
    profile: String,
    /// Demonstrations for the amortization curve.
    #[arg(long, default_value_t = 1024)]
    m: u64,
    /// Queries per sequence.
    #[arg(long, default_value_t = 50)]
    n: u64,
}

#[derive(Args)]
struct DensityArgs {
    /// Corpus JSONL file.
    #[arg(long)]
    corpus: PathBuf,
    /// Also write the histogram as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// rf | knn | remote
    #[arg(long)]
    backend: String,
    /// Remote endpoint (host:port or http://host:port/path).
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long, default_value_t = 30_000)]
    timeout_ms: u64,
    #[arg(long, default_value_t = 3)]
    retries: u32,
    #[arg(long, default_value_t = 4)]
    max_concurrent: usize,
    /// Ask the remote endpoint for labels only (no probabilities).
    #[arg(long)]
    labels_only: bool,
    /// CSV dataset to evaluate on.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Label column index for CSV datasets (default: last).
    #[arg(long)]
    label_col: Option<usize>,
    /// Number of synthetic tasks to evaluate instead of a CSV.
    #[arg(long)]
    synthetic_tasks: Option<usize>,
    /// Rows per synthetic task.
    #[arg(long, default_value_t = 768)]
    rows: usize,
    /// Config file for synthetic generation.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated shot counts, e.g. 8,64,512.
    #[arg(long, default_value = "8,64,512")]
    shots: String,
    /// Prompt variants per chunk.
    #[arg(long, default_value_t = 5)]
    v: usize,
    /// Queries per chunk.
    #[arg(long, default_value_t = 50)]
    n: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    /// kNN neighbor count.
    #[arg(long, default_value_t = 8)]
    knn_k: usize,
    /// kNN Minkowski exponent.
    #[arg(long, default_value_t = 2.0)]
    knn_p: f64,
    /// Write the full report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StubArgs {
    #[arg(long, default_value = "127.0.0.1:8391")]
    addr: String,
    /// fixed | cycle | probs | truncate-once | flaky
    #[arg(long, default_value = "cycle")]
    mode: String,
    /// Label for fixed mode.
    #[arg(long, default_value_t = 0)]
    label: u8,
    /// Leading failures for flaky mode.
    #[arg(long, default_value_t = 1)]
    fail_first: u64,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::AnalyzeTokens(args) => cmd_analyze_tokens(args),
        Command::Density(args) => cmd_density(args),
        Command::Eval(args) => cmd_eval(args),
        Command::StubServer(args) => {
            match stub::StubMode::parse(&args.mode, args.label, args.fail_first) {
                Ok(mode) => stub::serve(&args.addr, mode),
                Err(e) => Err(e),
            }
        }
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn load_or_default_config(path: &Option<PathBuf>) -> Result<CorpusConfig> {
    match path {
        Some(p) => config_file::load_config(p),
        None => Ok(CorpusConfig::default()),
    }
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let mut config = load_or_default_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.master_seed = seed;
    }
    if args.warmup {
        config.guard.consensus = true;
    }
    let out_file = std::fs::File::create(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let mut out = std::io::BufWriter::new(out_file);
    let mut rejected_file = match &args.rejected {
        Some(p) => Some(std::io::BufWriter::new(
            std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => None,
    };
    let summary = {
        let rejected_writer: Option<&mut dyn Write> = match rejected_file.as_mut() {
            Some(w) => Some(w),
            None => None,
        };
        corpus::generate(&config, args.count, args.workers, &mut out, rejected_writer)?
    };
    if let Some(mut w) = rejected_file {
        w.flush()?;
    }

    println!("corpus written to {}", args.out.display());
    println!(
        "processed {} task ids: {} admitted, {} guard-rejected, {} degenerate (admission rate {:.3})",
        summary.processed,
        summary.admitted,
        summary.rejected,
        summary.degenerate,
        summary.admission_rate
    );
    let print_hist = |name: &str, hist: &BTreeMap<String, u64>| {
        print!("{name}:");
        for (bin, count) in hist {
            print!(" {bin}={count}");
        }
        println!();
    };
    print_hist("d histogram", &summary.d_histogram);
    print_hist("K histogram", &summary.k_histogram);
    print_hist("M histogram", &summary.m_histogram);
    Ok(())
}

fn cmd_analyze_tokens(args: AnalyzeArgs) -> Result<()> {
    let profiles: Vec<TokenProfile> = match args.profile.as_str() {
        "all" => vec![TokenProfile::merged_3digit(), TokenProfile::digit_level()],
        name => vec![TokenProfile::builtin(name)
            .ok_or_else(|| anyhow::anyhow!("unknown profile '{name}'"))?],
    };
    for profile in &profiles {
        let report = compression_report(profile);
        println!("profile {} ({:?})", profile.name, profile.digit_rule);
        println!(
            "  per-cell cost, NL decimal -> tabular decimal: {} -> {}",
            profile.nl_decimal_cell, profile.tab_decimal_cell
        );
        println!(
            "  (A) tabular structure:            {:.2}x",
            round_to(report.tabular, 2)
        );
        println!(
            "  (B) number normalization (bare):  {:.2}x",
            round_to(report.normalization_no_delim, 2)
        );
        println!(
            "      number normalization (delim): {:.2}x",
            round_to(report.normalization_with_delim, 2)
        );
        println!(
            "  (AxB) overall compression:        {:.1}x",
            round_to(report.overall, 1)
        );
        println!();
    }
    println!("amortization C(1)/C(N) = N(M+1)/(M+N), M = {}", args.m);
    for n in [1, 2, 5, 10, 25, args.n] {
        println!("  N = {:>4}: {:.1}x", n, amortization_ratio(args.m, n));
    }
    Ok(())
}

fn cmd_density(args: DensityArgs) -> Result<()> {
    let records = corpus::read_corpus(&args.corpus)?;
    if records.is_empty() {
        eprintln!("warning: corpus {} holds no records", args.corpus.display());
    }
    let table = density::DensityTable::from_records(&records);
    print!("{}", table.render_text());
    if let Some(csv) = &args.csv {
        density::write_csv(&table, csv)?;
        println!("csv written to {}", csv.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct TaskEval {
    source: String,
    report: EvalReport,
}

#[derive(Serialize)]
struct MultiEvalReport {
    backend: String,
    n: usize,
    v: usize,
    seed: u64,
    shots: Vec<usize>,
    mean_accuracy: BTreeMap<usize, f64>,
    failed_chunks: u64,
    tasks: Vec<TaskEval>,
}

fn parse_shots(text: &str) -> Result<Vec<usize>> {
    let shots: Vec<usize> = text
        .split(',')
        .map(|s| s.trim().parse().context("shot counts must be integers"))
        .collect::<Result<_>>()?;
    if shots.is_empty() {
        bail!("at least one shot count is required");
    }
    Ok(shots)
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let shots = parse_shots(&args.shots)?;
    let backend: Box<dyn Backend> = match args.backend.as_str() {
        "remote" => {
            let endpoint = args
                .endpoint
                .clone()
                .ok_or_else(|| anyhow::anyhow!("--endpoint is required for the remote backend"))?;
            Box::new(remote::RemoteBackend::new(remote::RemoteConfig {
                endpoint,
                timeout: Duration::from_millis(args.timeout_ms),
                retries: args.retries,
                backoff: Duration::from_millis(100),
                max_concurrent: args.max_concurrent,
                want_probabilities: !args.labels_only,
                bearer_token: std::env::var("MANYSHOT_API_KEY").ok(),
            })?)
        }
        "knn" => Box::new(KnnBackend {
            params: KnnParams {
                k: args.knn_k,
                minkowski_p: args.knn_p,
            },
        }),
        other => local_backend(other)
            .ok_or_else(|| anyhow::anyhow!("unknown backend '{other}' (rf | knn | remote)"))?,
    };

    let mut sources: Vec<(String, TaskTable)> = Vec::new();
    match (&args.dataset, args.synthetic_tasks) {
        (Some(path), None) => {
            sources.push((
                path.display().to_string(),
                dataset::load_csv(path, args.label_col)?,
            ));
        }
        (None, Some(count)) => {
            let config = load_or_default_config(&args.config)?;
            let mut seed = args.seed;
            while sources.len() < count {
                match synthesize_dataset(&config, args.rows, seed) {
                    Ok(table) => sources.push((format!("synthetic:{seed}"), table)),
                    Err(manyshot_core::Error::Degenerate(_)) => {}
                    Err(e) => bail!("synthesizing dataset (seed {seed}): {e}"),
                }
                seed = seed.wrapping_add(1);
            }
        }
        _ => bail!("exactly one of --dataset or --synthetic-tasks is required"),
    }

    let opts = EvalOptions {
        n: args.n,
        v: args.v,
        seed: args.seed,
        want_probabilities: !args.labels_only,
        ..EvalOptions::default()
    };

    let mut tasks = Vec::new();
    let mut failed_chunks = 0u64;
    let mut accuracy_sums: BTreeMap<usize, (f64, u64)> = BTreeMap::new();
    for (source, table) in sources {
        let ds = split_dataset(table, args.train_fraction, args.seed)
            .map_err(|e| anyhow::anyhow!("{source}: {e}"))?;
        let report = shot_sweep(&ds, &shots, &opts, backend.as_ref())
            .map_err(|e| anyhow::anyhow!("{source}: {e}"))?;
        for slice in &report.slices {
            failed_chunks += slice.chunks_failed as u64;
            let entry = accuracy_sums.entry(slice.m).or_insert((0.0, 0));
            entry.0 += slice.accuracy;
            entry.1 += 1;
        }
        tasks.push(TaskEval { source, report });
    }

    let multi = MultiEvalReport {
        backend: backend.name().to_string(),
        n: args.n,
        v: args.v,
        seed: args.seed,
        shots: shots.clone(),
        mean_accuracy: accuracy_sums
            .iter()
            .map(|(&m, &(sum, count))| (m, sum / count as f64))
            .collect(),
        failed_chunks,
        tasks,
    };

    println!(
        "backend {}, {} task(s), V = {}, N = {}",
        multi.backend,
        multi.tasks.len(),
        multi.v,
        multi.n
    );
    for (m, acc) in &multi.mean_accuracy {
        println!("  M = {m:>5}: mean accuracy {acc:.4}");
    }
    if let Some(path) = &args.out {
        let file = std::fs::File::create(path)
            .with_context(|| format!("creating {}", path.display()))?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), &multi)?;
        println!("report written to {}", path.display());
    }
    if failed_chunks > 0 {
        bail!("{failed_chunks} chunk(s) failed after retries");
    }
    Ok(())
}
