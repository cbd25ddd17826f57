use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use ckens::data::load_csv;
use ckens::ensemble::{load_predictor, predict};
use ckens::harness::{self, EvalMetric, ExperimentConfig};
use ckens::metrics;
use ckens::Execution;
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Checkpoint ensembles: train, sweep, compare and apply predictors.
#[derive(Parser)]
#[command(name = "ckens", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run (first learning rate, seed 0) and evaluate every method.
    Train(RunArgs),
    /// Train every (learning rate, seed) cell and write sweep.csv and summary.json.
    Sweep(RunArgs),
    /// Print comparison tables from an output directory's summary.json.
    Report {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Apply a saved predictor to a CSV dataset.
    Eval(EvalArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Overrides the config's output_dir.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Overrides the config's base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Maximum concurrent runs (1 = sequential, 0 = one per core).
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Accuracy,
    PrAuc,
}

impl From<MetricArg> for EvalMetric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Accuracy => EvalMetric::Accuracy,
            MetricArg::PrAuc => EvalMetric::PrAuc,
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    /// predictor.json or the directory holding it.
    #[arg(long, value_name = "PATH")]
    predictor: PathBuf,
    #[arg(long, value_name = "CSV")]
    data: PathBuf,
    /// Header name, or zero-based column index with --no-header.
    #[arg(long, default_value = "label")]
    label_column: String,
    #[arg(long)]
    no_header: bool,
    #[arg(long, value_enum, default_values_t = [MetricArg::Accuracy])]
    metric: Vec<MetricArg>,
    /// Also write the precision-recall curve (binary data only).
    #[arg(long, value_name = "CSV")]
    pr_curve: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,
}

fn execution(jobs: usize) -> Execution {
    if jobs == 1 {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn load_config(args: &RunArgs) -> Result<(ExperimentConfig, Option<PathBuf>)> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(out) = &args.out {
        cfg.output_dir = Some(out.clone());
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(jobs) = args.jobs {
        cfg.jobs = jobs;
    }
    if cfg.output_dir.is_none() {
        bail!("no output directory: set output_dir in the config or pass --out");
    }
    let base = args.config.parent().map(Path::to_path_buf);
    Ok((cfg, base))
}

fn train(args: &RunArgs) -> Result<()> {
    let (cfg, base) = load_config(args)?;
    let exec = execution(cfg.jobs);
    let (dir, rows) = exec.with_jobs(cfg.jobs, || harness::run_single(&cfg, base.as_deref(), exec))?;
    print!("{}", harness::rows_to_csv(&rows));
    eprintln!("run written to {}", dir.display());
    Ok(())
}

fn sweep(args: &RunArgs) -> Result<()> {
    let (cfg, base) = load_config(args)?;
    let exec = execution(cfg.jobs);
    let outcome = harness::run_sweep(&cfg, base.as_deref(), exec)?;
    let out = cfg.output_dir.as_deref().expect("checked in load_config");
    for f in &outcome.summary.failures {
        eprintln!("warning: lr={} seed={} failed: {}", f.learning_rate, f.seed, f.error);
    }
    match harness::render(&outcome.summary) {
        Ok(text) => print!("{text}"),
        Err(e) => eprintln!("{e}"),
    }
    eprintln!("{} rows written to {}", outcome.rows.len(), out.join(harness::SWEEP_CSV).display());
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<()> {
    let exec = execution(args.jobs.unwrap_or(0));
    let predictor = load_predictor(&args.predictor)?;
    let ds = load_csv(&args.data, &args.label_column, !args.no_header)?;
    if ds.dims() != predictor.spec.input_dim() {
        bail!(
            "{} has {} features but the predictor expects {}",
            args.data.display(),
            ds.dims(),
            predictor.spec.input_dim()
        );
    }
    let probs = exec.with_jobs(args.jobs.unwrap_or(0), || predict(&predictor, &ds.inputs, exec))?;
    let mut wanted: Vec<EvalMetric> = args.metric.iter().map(|&m| m.into()).collect();
    wanted.sort();
    wanted.dedup();
    println!("method,metric,value");
    for m in wanted {
        let v = harness::evaluate(m, &probs, &ds.labels)
            .with_context(|| format!("computing {}", m.as_str()))?;
        println!("{},{},{}", predictor.method, m.as_str(), v);
    }
    if let Some(path) = &args.pr_curve {
        let curve = metrics::pr_curve(&metrics::positive_scores(&probs)?, &ds.binary_labels())?;
        metrics::write_pr_curve(path, &curve)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => train(&a),
        Command::Sweep(a) => sweep(&a),
        Command::Report { out } => {
            print!("{}", harness::report(&out)?);
            Ok(())
        }
        Command::Eval(a) => eval(&a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
