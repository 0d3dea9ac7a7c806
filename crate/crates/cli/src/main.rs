use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use stancelab::config::PipelineConfig;
use stancelab::stages::{self, ExitKind, Stage};

/// Stance analysis pipeline for policy-document corpora.
#[derive(Debug, Parser)]
#[command(name = "stancelab", version)]
struct Cli {
    /// Stage to run; `all` runs ingest, segment, filter, classify, analyze, report.
    #[arg(value_enum)]
    stage: Stage,
    /// Pipeline configuration (key = value lines).
    #[arg(long)]
    config: PathBuf,
    /// Override a configuration value.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match PipelineConfig::load(&cli.config, &cli.overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("stancelab: {e:#}");
            return ExitCode::from(ExitKind::Config as u8);
        }
    };
    match stages::run(cli.stage, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("stancelab: {f}");
            ExitCode::from(f.kind as u8)
        }
    }
}
