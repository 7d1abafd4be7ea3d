//! Command-line front end over the `trajgp` library.
//!
//! Every command reads one JSON run config, writes plain CSV and JSON files
//! into the configured output directory and finishes with a `manifest.json`
//! listing those files in the order they were written.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod report;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use trajgp::analysis::Engine;

pub use config::{Dataset, RunConfig};
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "trajgp", version, about = "Gaussian process models of ski race trajectories")]
pub struct Cli {
    /// Increase log verbosity (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit maximum-likelihood hyperparameters.
    Train(TrainArgs),
    /// Predict one lap from others with the batch or on-line engine.
    Flow(FlowArgs),
    /// Per-lap resultant-force curves and distributions on a segment.
    Force(ForceArgs),
    /// Black-box versus grey-box speed-change uncertainty on a segment.
    Compare(CompareArgs),
    /// Cluster skiers on a segment and fit one aggregated model per cluster.
    Cluster(ClusterArgs),
    /// Write a synthetic race with its ground truth.
    GenerateSample(GenerateArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Common {
    /// Run config JSON.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Local periodic flow model of one skier.
    Individual,
    /// Squared exponential force model of one skier on a segment.
    Force,
    /// Composite model pooled over skiers on a segment.
    Aggregated,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Skier id. In aggregated mode a comma-separated list, default all.
    #[arg(long)]
    pub skier: Option<String>,
    #[arg(long, value_enum, default_value = "individual")]
    pub mode: Mode,
    /// Segment name, required by the force and aggregated modes.
    #[arg(long)]
    pub segment: Option<String>,
    /// Laps used for training, default all.
    #[arg(long, value_delimiter = ',')]
    pub laps: Option<Vec<usize>>,
}

fn parse_engine(s: &str) -> Result<Engine, String> {
    s.parse().map_err(|e: trajgp::Error| e.to_string())
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FlowArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub skier: String,
    /// `sgp` or `ogp`.
    #[arg(long, default_value = "sgp", value_parser = parse_engine)]
    pub engine: Engine,
    /// Training laps, default all but the last.
    #[arg(long, value_delimiter = ',')]
    pub laps: Option<Vec<usize>>,
    /// Lap to predict, default the last.
    #[arg(long)]
    pub predict_lap: Option<usize>,
    /// Overrides the config grid size of the on-line engine.
    #[arg(long)]
    pub grid_size: Option<usize>,
    /// Permit predicting a lap that is also used for training.
    #[arg(long)]
    pub allow_insample: bool,
    /// Hyperparameter file to use instead of training.
    #[arg(long)]
    pub theta: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ForceArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub skier: String,
    #[arg(long)]
    pub segment: String,
    /// Laps to report, default all.
    #[arg(long, value_delimiter = ',')]
    pub laps: Option<Vec<usize>>,
    /// Force hyperparameter file to use instead of training.
    #[arg(long)]
    pub theta: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub skier: String,
    #[arg(long)]
    pub segment: String,
    /// Laps to tabulate, default all.
    #[arg(long, value_delimiter = ',')]
    pub laps: Option<Vec<usize>>,
    /// Flow hyperparameter file to use instead of training.
    #[arg(long)]
    pub theta: Option<PathBuf>,
    /// Force hyperparameter file to use instead of training.
    #[arg(long)]
    pub force_theta: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ClusterArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub segment: String,
    #[arg(long, default_value_t = 1)]
    pub lap: usize,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenerateArgs {
    /// Directory receiving the dataset and a matching `config.json`.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 6)]
    pub skiers: usize,
}

/// Runs one command and returns the files it wrote.
pub fn run(cli: &Cli) -> CliResult<Vec<PathBuf>> {
    match &cli.command {
        Command::Train(a) => commands::train(a),
        Command::Flow(a) => commands::flow(a),
        Command::Force(a) => commands::force(a),
        Command::Compare(a) => commands::compare(a),
        Command::Cluster(a) => commands::cluster(a),
        Command::GenerateSample(a) => commands::generate_sample(a),
    }
}
