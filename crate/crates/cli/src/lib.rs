//! `flowplan` command line: ingest, train, eval, scenario, serve, plus a
//! synthetic-world generator for demos and tests.

use std::ffi::OsString;
use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use flowplan_core::geodata::{GeoError, Split};
use flowplan_core::model::ModelError;
use flowplan_core::numeric::NumericError;
use flowplan_core::trainer::TrainError;

pub mod commands;
pub mod config;
pub mod manifest;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;

/// Invalid invocation: bad flag combination or unreadable config file.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

#[derive(Debug, Parser)]
#[command(name = "flowplan", version, about = "Commuting flow prediction and what-if scenarios")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate inputs, build the adjacency network and assign flow splits.
    Ingest(IngestArgs),
    /// Train encoders and the boosted predictor; report test-split metrics.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split of a labelled flow table.
    Eval(EvalArgs),
    /// Predict the flow changes caused by a scenario file.
    Scenario(ScenarioArgs),
    /// Serve a checkpoint over HTTP.
    Serve(ServeArgs),
    /// Write a synthetic gravity-model city (tracts, schema, flows, config, scenario).
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// Tract table (.csv/.tsv) or GeoJSON FeatureCollection.
    #[arg(long)]
    pub tracts: PathBuf,
    /// Indicator schema (TOML).
    #[arg(long)]
    pub schema: PathBuf,
    /// Flow table: origin_id,dest_id,commuters[,split].
    #[arg(long)]
    pub flows: PathBuf,
    /// Optional precomputed travel distances: origin_id,dest_id,km.
    #[arg(long)]
    pub distances: Option<PathBuf>,
    /// Optional run configuration (TOML); flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed of the train/val/test split [default: config value, else the training seed, else 0].
    #[arg(long)]
    pub split_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Output directory.
    #[arg(long, default_value = "ingest")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Seed for parameter init and batch order (required).
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Gradient norm ceiling; 0 turns clipping off.
    #[arg(long)]
    pub clip_grad_norm: Option<f64>,
    /// Boosting rounds.
    #[arg(long)]
    pub rounds: Option<usize>,
    /// Dataset label in the report table.
    #[arg(long)]
    pub label: Option<String>,
    /// Output directory.
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Labelled flow table (as written by `ingest` or `train`).
    #[arg(long)]
    pub flows: PathBuf,
    /// train, val or test.
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// Score pairs the model has no prediction for as zero.
    #[arg(long)]
    pub assume_zero: bool,
    #[arg(long, default_value = "city")]
    pub label: String,
    /// Also write the report as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Scenario document (JSON).
    #[arg(long)]
    pub scenario: PathBuf,
    /// Keep only pairs whose endpoints lie within this distance of an edited tract.
    #[arg(long)]
    pub radius_km: Option<f64>,
    #[arg(long, default_value_t = 40)]
    pub bins: usize,
    /// Longest new pair considered around edited tracts.
    #[arg(long, default_value_t = 30.0)]
    pub cutoff_km: f64,
    /// Output directory.
    #[arg(long, default_value = "scenario")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    #[arg(long, default_value_t = 40)]
    pub bins: usize,
    #[arg(long, default_value_t = 30.0)]
    pub cutoff_km: f64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    pub tracts: usize,
    #[arg(long, default_value_t = 42)]
    pub world_seed: u64,
    /// Output directory.
    #[arg(long, default_value = "synthetic")]
    pub out: PathBuf,
}

/// Maps an error chain to the process exit code.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<UsageError>() || cause.is::<clap::Error>() {
            return EXIT_USAGE;
        }
        let diverged = matches!(cause.downcast_ref::<TrainError>(), Some(TrainError::Diverged { .. }))
            || matches!(cause.downcast_ref::<ModelError>(), Some(ModelError::Train(TrainError::Diverged { .. })))
            || matches!(cause.downcast_ref::<NumericError>(), Some(NumericError::NonFiniteLoss(_)));
        if diverged {
            return EXIT_DIVERGED;
        }
        if cause.is::<GeoError>() {
            return EXIT_DATA;
        }
    }
    EXIT_DATA
}

pub fn execute(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Ingest(a) => commands::ingest(&a).map(|_| ()),
        Command::Train(a) => commands::train(&a).map(|_| ()),
        Command::Eval(a) => commands::eval(&a).map(|_| ()),
        Command::Scenario(a) => commands::scenario(&a).map(|_| ()),
        Command::Serve(a) => commands::serve(&a),
        Command::Synth(a) => commands::synth(&a).map(|_| ()),
    }
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
