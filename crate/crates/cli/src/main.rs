//! `hetsurv`: generate synthetic cohorts, train, evaluate and predict.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "hetsurv", version, about = "Multimodal graph survival prediction")]
struct Cli {
    /// Repeat for more log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

/// Options every command shares.
#[derive(Debug, Args)]
pub struct Common {
    /// TOML config file; omitted keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Overrides `train.seed`, the root of all randomness.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Output file or directory, depending on the command.
    #[arg(long)]
    pub out: PathBuf,

    /// Use the large-scale hyperparameters (batch 128, 500 epochs, lr 3e-4, dropout 0.3).
    #[arg(long)]
    pub paper_scale: bool,

    /// Override one config key, e.g. `--set train.epochs=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic cohort file.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Train on a cohort; writes a checkpoint and the loss trace into `--out`.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        cohort: PathBuf,
    },
    /// Cross-validate on a cohort, or score it with `--checkpoint`.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Per-patient risk CSV for one scheme.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Modality subset such as `P&G&C` or `G`.
        #[arg(long, default_value = "P&G&C")]
        scheme: String,
    },
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
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();

    let result = match cli.command {
        Command::Generate { common } => commands::generate(&common),
        Command::Train { common, cohort } => commands::train(&common, &cohort),
        Command::Evaluate { common, cohort, checkpoint } => {
            commands::evaluate(&common, &cohort, checkpoint.as_deref())
        }
        Command::Predict { common, cohort, checkpoint, scheme } => {
            commands::predict(&common, &cohort, &checkpoint, &scheme)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
