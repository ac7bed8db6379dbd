use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use splitlab::channel::TransportMode;
use splitlab::runner::{experiment_listing, run, ExperimentConfig, ExperimentKind, Profile, RunOptions};

/// Split-learning inversion attacks and defences.
#[derive(Parser)]
#[command(name = "splitlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one split classifier and report accuracy and dCor.
    Train(RunArgs),
    /// Attack victims under a list of defences.
    Attack(RunArgs),
    /// Train the full noise-scale x NoPeekNN-weight grid.
    Grid(RunArgs),
    /// Accuracy against post-training noise scale.
    Sweep(RunArgs),
    /// Reconstruction quality against attacker dataset size.
    Sizes(RunArgs),
    /// Attacker trained on a different dataset.
    Transfer(RunArgs),
    /// List experiments and what they measure.
    List,
}

#[derive(Args)]
struct RunArgs {
    /// Flat key = value configuration file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Root directory for run outputs.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Directory containing mnist/ (and emnist/ or other transfer sources).
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// `full` or `desk`.
    #[arg(long)]
    profile: Option<Profile>,
    /// `in-process` or `socket`; defaults to $SPLITLAB_TRANSPORT, then in-process.
    #[arg(long)]
    transport: Option<TransportMode>,
    /// Override any configuration key, e.g. `--set alpha=0.1`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    dry_run: bool,
    #[arg(short, long)]
    quiet: bool,
}

fn resolve(kind: ExperimentKind, args: &RunArgs) -> splitlab::Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let mut cfg = ExperimentConfig::parse(&std::fs::read_to_string(path)?)?;
            if cfg.experiment != kind {
                return Err(splitlab::Error::Config(format!(
                    "{} describes a `{}` experiment, not `{}`",
                    path.display(),
                    cfg.experiment.verb(),
                    kind.verb()
                )));
            }
            cfg.experiment = kind;
            cfg
        }
        None => ExperimentConfig::new(kind),
    };
    if let Some(p) = args.profile {
        cfg.set_profile(p);
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(d) = &args.data_dir {
        cfg.data_dir = d.clone();
    }
    if let Some(o) = &args.output {
        cfg.output_dir = o.clone();
    }
    for kv in &args.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| splitlab::Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    Ok(cfg)
}

fn execute(kind: ExperimentKind, args: &RunArgs) -> splitlab::Result<()> {
    let cfg = resolve(kind, args)?;
    if args.dry_run {
        cfg.validate()?;
        print!("{}", cfg.echo());
        println!("# run directory: {}", cfg.run_dir().display());
        return Ok(());
    }
    let transport = match args.transport {
        Some(t) => t,
        None => TransportMode::from_env()?,
    };
    let summary = run(
        &cfg,
        &RunOptions {
            transport,
            quiet: args.quiet,
        },
    )?;
    println!("{}", summary.dir.display());
    for f in &summary.files {
        println!("  {}", f.file_name().unwrap_or_default().to_string_lossy());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match &cli.command {
        Command::List => {
            print!("{}", experiment_listing());
            return ExitCode::SUCCESS;
        }
        Command::Train(a) => (ExperimentKind::TrainClassifier, a),
        Command::Attack(a) => (ExperimentKind::Attack, a),
        Command::Grid(a) => (ExperimentKind::Grid, a),
        Command::Sweep(a) => (ExperimentKind::NoiseSweep, a),
        Command::Sizes(a) => (ExperimentKind::SizeStudy, a),
        Command::Transfer(a) => (ExperimentKind::TransferStudy, a),
    };
    match execute(kind, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
