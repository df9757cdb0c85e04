//! recdiv: audit and mitigate filter bubbles in a sequential recommender.
//!
//! Pipeline stages run as subcommands over a shared config file and a
//! workspace directory: ingest -> communities -> train -> bubble ->
//! influence -> modify -> report.

mod commands;
mod config;
mod workspace;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use config::PipelineConfig;
use workspace::{Workspace, WorkspaceLock};

#[derive(Parser)]
#[command(name = "recdiv", version, about = "Filter-bubble auditing for sequential recommenders")]
struct Cli {
    /// Pipeline configuration file.
    #[arg(long, global = true, default_value = "recdiv.toml")]
    config: PathBuf,
    /// Workspace directory for artifacts (overrides paths.workspace).
    #[arg(long, global = true)]
    workspace: Option<PathBuf>,
    /// Root seed (overrides the config seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overwrite existing stage outputs.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse (or synthesize), filter, index, split, and windowize the logs.
    Ingest {
        /// Generate planted-bubble data instead of parsing paths.raw_csv.
        #[arg(long)]
        synthetic: bool,
    },
    /// Sweep degree thresholds and persist the selected community map.
    Communities,
    /// Train the checkpointed LSTM recommender on the train split.
    Train,
    /// Compare recommendation diversity against history diversity.
    Bubble,
    /// Trace training-data influence: self vs random and cross-category.
    Influence,
    /// Retrain on cleansed/augmented data and evaluate on the test split.
    Modify,
    /// Bundle all artifacts into a checksummed manifest.
    Report,
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let config = PipelineConfig::load(&cli.config)?;
    let seed = cli.seed.unwrap_or(config.seed);
    let dir = cli
        .workspace
        .clone()
        .or_else(|| config.paths.workspace.clone())
        .unwrap_or_else(|| PathBuf::from("workspace"));
    let ws = Workspace::new(dir, cli.force)?;
    let _lock = WorkspaceLock::acquire(&ws)?;

    match cli.command {
        Command::Ingest { synthetic } => commands::cmd_ingest(&config, &ws, seed, synthetic),
        Command::Communities => commands::cmd_communities(&config, &ws, seed),
        Command::Train => commands::cmd_train(&config, &ws, seed),
        Command::Bubble => commands::cmd_bubble(&config, &ws, seed),
        Command::Influence => commands::cmd_influence(&config, &ws, seed),
        Command::Modify => commands::cmd_modify(&config, &ws, seed),
        Command::Report => commands::cmd_report(&config, &ws),
    }
}
