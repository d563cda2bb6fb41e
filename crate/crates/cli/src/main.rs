use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use config::BackendKind;

/// County-level hospitalization forecasting: ingest, correlate, evaluate, report.
#[derive(Debug, Parser)]
#[command(name = "hospcast", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the weekly panel from the configured CSV snapshots.
    Ingest(CommonArgs),
    /// Rank indicators by Pearson correlation with y.
    Correlate(CommonArgs),
    /// Run rolling-origin forecasts and write records, tables and a manifest.
    Evaluate(EvaluateArgs),
    /// Render tables from an existing records file.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Path to the TOML config.
    #[arg(short, long)]
    config: PathBuf,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated model keys (lag1, ar1, es, arx, linreg, llm, hybrid_arx, hybrid_linreg).
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<String>>,
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    /// Number of repetitions per cell.
    #[arg(long)]
    runs: Option<u32>,
    /// Seed forwarded to the HTTP backend.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Records file; defaults to `records.jsonl` in the output directory.
    #[arg(long)]
    records: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(a) => commands::ingest(&a),
        Command::Correlate(a) => commands::correlate(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Report(a) => commands::report(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", render_chain(&e));
            ExitCode::FAILURE
        }
    }
}

/// Error chain joined with `: `, skipping causes already quoted by their parent.
fn render_chain(e: &anyhow::Error) -> String {
    let mut out = String::new();
    let mut prev = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if prev.contains(&msg) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&msg);
        prev = msg;
    }
    out
}
