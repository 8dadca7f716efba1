use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use minimax_core::experiment::{report_from_file, run_experiment, ExperimentConfig, ExperimentKind, FailureRecord};
use minimax_core::Error;

/// Minimax training and verification experiments for imbalanced classification.
#[derive(Parser)]
#[command(name = "minimax", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One three-phase minimax training run.
    Train(RunArgs),
    /// The {TLA, TWCE} x {linear, EGA} grid over the configured seeds.
    Ablate(RunArgs),
    /// Exact worst-class identification and estimate-error curves.
    Theory(RunArgs),
    /// Monte Carlo validation of the theory curves.
    Mc(RunArgs),
    /// Bayes risks and the adversarial prior of the configured mixture.
    Oracle(RunArgs),
    /// Re-emit trajectory tables from a saved report.json.
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Parent directory for the timestamped artifact directory.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Overrides the Monte Carlo trial count.
    #[arg(long)]
    trials: Option<usize>,
    /// Named hyperparameter preset (cifar10-lt, cifar10-step, cifar100-lt, cifar100-step).
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Args)]
struct ReportArgs {
    /// Path to a report.json written by `train` or `ablate`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

fn fail(kind: Option<ExperimentKind>, err: &Error) -> ExitCode {
    let record = FailureRecord::new(kind, err);
    eprintln!("{}", serde_json::to_string(&record).expect("failure record serializes"));
    ExitCode::from(if matches!(err, Error::Config { .. }) { 2 } else { 1 })
}

fn fresh_dir(parent: &Path, label: &str) -> PathBuf {
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    let base = parent.join(format!("{label}-{stamp}"));
    let mut dir = base.clone();
    let mut n = 2;
    while dir.exists() {
        dir = PathBuf::from(format!("{}-{n}", base.display()));
        n += 1;
    }
    dir
}

fn run(kind: ExperimentKind, args: RunArgs) -> ExitCode {
    let mut config = match &args.config {
        Some(path) => match ExperimentConfig::load(path) {
            Ok(c) => c,
            Err(e) => return fail(Some(kind), &e),
        },
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(trials) = args.trials {
        config.mc.trials = trials;
    }
    if args.preset.is_some() {
        config.preset = args.preset;
    }
    if let Some(declared) = config.experiment {
        if declared != kind {
            eprintln!("note: config declares `{declared}`, running `{kind}`");
        }
    }
    let dir = fresh_dir(&args.out, kind.name());
    match run_experiment(&config, kind, &dir) {
        Ok(manifest) => {
            println!("{}", dir.display());
            for f in manifest.files {
                println!("  {f}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("artifacts so far: {}", dir.display());
            fail(Some(kind), &e)
        }
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Train(a) => run(ExperimentKind::Train, a),
        Command::Ablate(a) => run(ExperimentKind::Ablate, a),
        Command::Theory(a) => run(ExperimentKind::Theory, a),
        Command::Mc(a) => run(ExperimentKind::Mc, a),
        Command::Oracle(a) => run(ExperimentKind::Oracle, a),
        Command::Report(a) => {
            let dir = fresh_dir(&a.out, "report");
            match report_from_file(&a.input, &dir) {
                Ok(files) => {
                    println!("{}", dir.display());
                    for f in files {
                        println!("  {f}");
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => fail(None, &e),
            }
        }
    }
}
