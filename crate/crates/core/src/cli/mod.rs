//! Config-driven command line front end.
//!
//! Every stage reads and writes files in one output directory:
//!
//! | stage      | reads                                   | writes                                   |
//! |------------|-----------------------------------------|------------------------------------------|
//! | `simulate` | config                                  | `expression.csv`, `labels.csv`, `manifest.json` |
//! | `embed`    | `expression.csv`                        | `latent.csv`, `autoencoder.json`           |
//! | `features` | `expression.csv`, `spatial.csv`         | `spatial_features.csv`, `joint_latent.csv` |
//! | `train`    | `latent.csv`, `labels.csv`              | `model.json`, `loss_history.csv`         |
//! | `infer`    | `model.json`, `latent.csv`, `labels.csv`| `trajectories.jsonl`                     |
//! | `evaluate` | the above                               | `metrics.csv`                            |
//! | `plot`     | `latent.csv`, `trajectories.jsonl`      | `plot.svg`, `loss.svg`                   |
//!
//! plus `config.<stage>.json`, the resolved configuration.

pub mod commands;
pub mod config;
pub mod io;
pub mod plot;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{
    cmd_embed, cmd_evaluate, cmd_features, cmd_infer, cmd_plot, cmd_simulate, cmd_train, Layout,
    ModelCheckpoint,
};
pub use config::PipelineConfig;

use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "cellflow",
    version,
    about = "Trajectory inference between single-cell snapshots"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct StageArgs {
    /// JSON pipeline config.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (overrides output.dir).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Simulate(StageArgs),
    /// Embed expression into the latent space.
    Embed(StageArgs),
    /// Compute spatial neighbourhood features.
    Features(StageArgs),
    /// Train the dynamics model.
    Train(StageArgs),
    /// Integrate trajectories with a trained model.
    Infer(StageArgs),
    /// Compute evaluation metrics.
    Evaluate(StageArgs),
    /// Render SVG figures.
    Plot(StageArgs),
}

impl Command {
    fn args(&self) -> &StageArgs {
        match self {
            Command::Simulate(a)
            | Command::Embed(a)
            | Command::Features(a)
            | Command::Train(a)
            | Command::Infer(a)
            | Command::Evaluate(a)
            | Command::Plot(a) => a,
        }
    }
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Json(_) => 2,
        Error::MissingInput(_) => 3,
        Error::NonFinite(_) | Error::NotConverged(_) => 4,
        Error::Dimension(_) | Error::Malformed { .. } => 5,
        Error::CheckpointVersion { .. } => 6,
        Error::InvalidArgument(_) | Error::Io(_) => 1,
    }
}

/// Runs one stage and returns the files it wrote.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>> {
    let a = cli.command.args();
    let cfg = PipelineConfig::load(&a.config, a.seed)?;
    let out = commands::resolve_out(a.out.as_deref(), &cfg)?;
    match &cli.command {
        Command::Simulate(_) => cmd_simulate(&cfg, &out),
        Command::Embed(_) => cmd_embed(&cfg, &out),
        Command::Features(_) => cmd_features(&cfg, &out),
        Command::Train(_) => cmd_train(&cfg, &out),
        Command::Infer(_) => cmd_infer(&cfg, &out),
        Command::Evaluate(_) => cmd_evaluate(&cfg, &out),
        Command::Plot(_) => cmd_plot(&cfg, &out),
    }
}

/// Entry point of the binary: parses arguments, runs, reports, and returns
/// the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    crate::numerics::par::init_threads();
    match run(&cli) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
