//! `dcl`: convert datasets, train baseline or curriculum models, analyse
//! per-level error rates and summarise finished runs.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 runtime error.

mod report;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dcl_core::checkpoint::Checkpoint;
use dcl_core::config::ConfigError;
use dcl_core::data::{self, DataError};
use dcl_core::metrics::write_level_csv;
use dcl_core::pipeline::{self, PipelineError, PreparedData, RunConfig};

#[derive(Parser)]
#[command(name = "dcl", version, about = "Train and analyse intent classifiers with a density-driven curriculum")]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a dataset file into canonical JSONL.
    Convert(ConvertArgs),
    /// Train a model and write a run directory.
    Train(TrainArgs),
    /// Per-level error rates of a checkpoint on a dataset.
    Analyze(AnalyzeArgs),
    /// Summarise a run directory.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Banking77Csv,
    Clinc150Json,
    Jsonl,
}

#[derive(Args)]
struct ConvertArgs {
    input: PathBuf,
    #[arg(long, value_enum)]
    format: Format,
    #[arg(long, short)]
    output: PathBuf,
    /// CLINC150 sections to keep.
    #[arg(long, value_delimiter = ',', default_values_t = data::CLINC150_IN_SCOPE.map(String::from))]
    sections: Vec<String>,
    #[arg(long, default_value = "text")]
    text_column: String,
    #[arg(long, default_value = "category")]
    label_column: String,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    omega_floor: Option<f64>,
    #[arg(long)]
    reassign_period: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, default_value = "run")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Canonical JSONL to evaluate.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = vec![2, 3, 4, 7, 10])]
    k_sweep: Vec<usize>,
    #[arg(long, default_value_t = dcl_core::difficulty::DEFAULT_THETA)]
    theta: f64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    run_dir: PathBuf,
    /// Emit the machine-readable summary instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Runtime(m) => m,
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(c) => c.into(),
            e if e.is_data_error() => Failure::Data(e.to_string()),
            e => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Read { .. } => Failure::Data(e.to_string()),
            e => Failure::Usage(e.to_string()),
        }
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        Failure::Data(e.to_string())
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    }
    let result = match cli.command {
        Command::Convert(args) => convert(args),
        Command::Train(args) => train(args),
        Command::Analyze(args) => analyze(args),
        Command::Report(args) => report::run(&args.run_dir, args.json),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn convert(args: ConvertArgs) -> Result<(), Failure> {
    if args.output == args.input {
        return Err(Failure::Usage("output would overwrite the input file".into()));
    }
    let records = match args.format {
        Format::Banking77Csv => data::ingest_csv(&args.input, &args.text_column, &args.label_column)?,
        Format::Clinc150Json => {
            let sections: Vec<&str> = args.sections.iter().map(String::as_str).collect();
            data::ingest_clinc150(&args.input, &sections)?
        }
        Format::Jsonl => data::ingest_jsonl(&args.input)?,
    };
    data::write_jsonl(&args.output, &records)?;
    let labels = data::LabelVocab::from_labels(records.iter().map(|r| r.label.as_str()));
    println!(
        "{} records, {} labels -> {}",
        records.len(),
        labels.len(),
        args.output.display()
    );
    Ok(())
}

fn train(args: TrainArgs) -> Result<(), Failure> {
    let mut cfg = RunConfig::from_file(&args.config)?;
    let overrides: [(&str, Option<String>); 10] = [
        ("mode", args.mode.clone()),
        ("k", args.k.map(|v| v.to_string())),
        ("theta", args.theta.map(|v| v.to_string())),
        ("lambda", args.lambda.map(|v| v.to_string())),
        ("omega_floor", args.omega_floor.map(|v| v.to_string())),
        ("reassign_period", args.reassign_period.map(|v| v.to_string())),
        ("seed", args.seed.map(|v| v.to_string())),
        ("epochs", args.epochs.map(|v| v.to_string())),
        ("dim", args.dim.map(|v| v.to_string())),
        ("embeddings", args.embeddings.as_ref().map(|p| p.display().to_string())),
    ];
    for (key, value) in overrides {
        if let Some(v) = value {
            cfg.set(key, &v, None)?;
        }
    }
    cfg.validate()?;
    let prepared = PreparedData::load(&cfg)?;
    for w in &prepared.warnings {
        eprintln!("warning: {w}");
    }
    let out = pipeline::run(&cfg, &prepared)?;
    pipeline::write_run_outputs(&args.out_dir, &cfg, &prepared, &out)?;
    let [accuracy, precision, recall, f1] = out.test_metrics.percentages();
    let line = serde_json::json!({
        "mode": cfg.mode,
        "accuracy": accuracy,
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "best_epoch": out.best_epoch,
        "out_dir": args.out_dir.display().to_string(),
    });
    println!("{line}");
    Ok(())
}

fn analyze(args: AnalyzeArgs) -> Result<(), Failure> {
    if args.k_sweep.contains(&0) {
        return Err(Failure::Usage("K values must be at least 1".into()));
    }
    if !(args.theta > 0.0 && args.theta <= 100.0) {
        return Err(Failure::Usage("--theta must lie in (0, 100]".into()));
    }
    let checkpoint = Checkpoint::load(&args.checkpoint)
        .map_err(|e| Failure::Data(format!("{}: {e}", args.checkpoint.display())))?;
    let records = data::ingest_jsonl(&args.dataset)?;
    let samples = pipeline::samples_for_checkpoint(&checkpoint, &records)?;
    let analyses = pipeline::analyze_levels(&checkpoint, &samples, &args.k_sweep, args.theta)?;
    std::fs::create_dir_all(&args.out_dir).map_err(|e| io_failure(&args.out_dir, e))?;

    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(stdout, "{:>3} {:>5} {:>7} {:>7} {:>10}", "K", "level", "count", "errors", "error_rate");
    for a in &analyses {
        let path = args.out_dir.join(format!("level_error_K{}.csv", a.k));
        let file = File::create(&path).map_err(|e| io_failure(&path, e))?;
        let mut w = BufWriter::new(file);
        write_level_csv(&mut w, &a.levels)
            .and_then(|_| w.flush())
            .map_err(|e| io_failure(&path, e))?;
        for (level, e) in &a.levels {
            let _ = writeln!(
                stdout,
                "{:>3} {:>5} {:>7} {:>7} {:>10.4}",
                a.k, level, e.count, e.errors, e.error_rate
            );
        }
    }
    Ok(())
}
