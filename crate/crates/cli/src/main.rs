//! `tomosar` pipeline driver.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
//! failure. `TOMOSAR_THREADS` caps the worker pool.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tomosar_core::{CoreError, ErrorClass};

mod commands;
mod config;

use config::{apply_preset, PipelineConfig};

#[derive(Parser)]
#[command(
    name = "tomosar",
    about = "Subsurface tomographic SAR pipeline: simulate, focus, and map ant nests",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Pipeline configuration (JSON).
    #[arg(long, global = true, default_value = "tomosar.json")]
    config: PathBuf,

    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Scenario preset overriding the scene section
    /// (trees-only, sim-6ch, sim-20ch, sim-50ch, sim-100ch).
    #[arg(long, global = true)]
    preset: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Build scenes and synthesize range-compressed echoes.
    Simulate,
    /// Back-project echoes into tomographic layer stacks.
    Focus,
    /// Extract reflectivity transect profiles to CSV.
    Profile,
    /// Tile stacks into labeled patch files.
    Dataset,
    /// Train the detection and size networks.
    Train,
    /// Apply trained networks to produce nest maps and detections.
    Infer,
    /// Score detections against ground truth.
    Evaluate,
}

fn init_thread_pool() {
    if let Ok(value) = std::env::var("TOMOSAR_THREADS") {
        match value.parse::<usize>() {
            Ok(n) if n > 0 => {
                // Ignore failure when a pool already exists.
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => eprintln!("warning: TOMOSAR_THREADS={value:?} is not a positive integer"),
        }
    }
}

fn run(cli: &Cli) -> tomosar_core::Result<()> {
    let mut config = PipelineConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(preset) = &cli.preset {
        apply_preset(&mut config, preset)?;
        config.validate()?;
    }
    match cli.command {
        Command::Simulate => commands::cmd_simulate(&config),
        Command::Focus => commands::cmd_focus(&config),
        Command::Profile => commands::cmd_profile(&config),
        Command::Dataset => commands::cmd_dataset(&config),
        Command::Train => commands::cmd_train(&config),
        Command::Infer => commands::cmd_infer(&config),
        Command::Evaluate => commands::cmd_evaluate(&config).map(|_| ()),
    }
}

fn exit_code(err: &CoreError) -> u8 {
    match err.class() {
        ErrorClass::Config => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numeric => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_thread_pool();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
