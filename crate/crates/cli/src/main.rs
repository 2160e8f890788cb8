mod artifacts;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::artifacts::Artifacts;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
        }
    }
}

#[derive(Parser)]
#[command(name = "sarstereo", version, about = "SAR-optical stereogrammetry toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON configuration file; omitted keys keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config value, e.g. `--set matching.template_size=101`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Output directory (same as `--set output_dir=...`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Height accuracy of the configured stereo geometries and grids.
    AnalyzeAccuracy,
    /// Render a synthetic scene: rasters, truth correspondences, reference cloud.
    Simulate,
    /// Harris keypoints of `inputs.sar`.
    Detect,
    /// Tie points between `inputs.sar` and `inputs.optical`.
    Match,
    /// Joint 3-D intersection of the tie points in `inputs.points`.
    Intersect,
    /// Plane-fit distances of `inputs.points` to `inputs.reference`.
    Evaluate,
    /// Matching and evaluation end to end (simulated scene unless inputs are given).
    Pipeline,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::AnalyzeAccuracy => "analyze-accuracy",
            Command::Simulate => "simulate",
            Command::Detect => "detect",
            Command::Match => "match",
            Command::Intersect => "intersect",
            Command::Evaluate => "evaluate",
            Command::Pipeline => "pipeline",
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let mut sets = cli.sets.clone();
    if let Some(out) = &cli.out {
        sets.push(format!("output_dir={}", serde_json::to_string(out).expect("path serializes")));
    }
    let cfg = config::load(cli.config.as_deref(), &sets)?;
    let mut out = Artifacts::default();
    match cli.command {
        Command::AnalyzeAccuracy => commands::analyze_accuracy(&cfg, &mut out)?,
        Command::Simulate => commands::simulate(&cfg, &mut out)?,
        Command::Detect => commands::detect(&cfg, &mut out)?,
        Command::Match => commands::match_cmd(&cfg, &mut out)?,
        Command::Intersect => commands::intersect_cmd(&cfg, &mut out)?,
        Command::Evaluate => commands::evaluate(&cfg, &mut out)?,
        Command::Pipeline => commands::pipeline(&cfg, &mut out)?,
    }
    out.commit(&cfg.output_dir, cli.command.name(), &cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sarstereo {}: {e}", cli.command.name());
            ExitCode::from(e.exit_code())
        }
    }
}
