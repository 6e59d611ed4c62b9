#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("analysis error: {0}")]
    Analysis(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Analysis(_) | CliError::Runtime(_) => 3,
        }
    }
}

/// Hamiltonian learning for cross-resonance gates.
#[derive(Debug, Parser)]
#[command(name = "crlearn", version)]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config's.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for independent runs.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Output directory; overrides the config's.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a fixed-shot dataset over the whole query space.
    Generate,
    /// Run the configured scenarios and write per-round summaries.
    Run,
    /// Compute RMSE curves, slopes and query advantage from a run directory or summary CSV.
    Analyze {
        input: PathBuf,
        /// Slope window `LO:HI` in total queries; repeatable.
        #[arg(long, value_parser = parse_window)]
        window: Vec<(f64, f64)>,
    },
    /// Print a device preset, or list them.
    ShowPreset { name: Option<String> },
}

fn parse_window(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(':').ok_or("expected LO:HI")?;
    let lo: f64 = lo.parse().map_err(|e| format!("{e}"))?;
    let hi: f64 = hi.parse().map_err(|e| format!("{e}"))?;
    if !(lo < hi) {
        return Err("LO must be below HI".into());
    }
    Ok((lo, hi))
}

fn resolved(cli: &Cli) -> Result<config::Resolved, CliError> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Config("--config is required".into()))?;
    config::load(path)?.resolve()
}

fn out_dir(cli: &Cli, r: Option<&config::Resolved>) -> PathBuf {
    cli.out.clone().or_else(|| r.and_then(|r| r.config.output.clone())).unwrap_or_else(|| PathBuf::from("out"))
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Generate => {
            let r = resolved(cli)?;
            let seed = cli.seed.unwrap_or(r.config.seed);
            commands::generate(&r, seed, &out_dir(cli, Some(&r)))?;
        }
        Command::Run => {
            let r = resolved(cli)?;
            let seed = cli.seed.unwrap_or(r.config.seed);
            commands::run(&r, seed, cli.jobs, &out_dir(cli, Some(&r)))?;
        }
        Command::Analyze { input, window } => {
            let r = cli.config.as_ref().map(|_| resolved(cli)).transpose()?;
            let csv = if input.is_dir() { input.join("summary.csv") } else { input.clone() };
            let rows = commands::read_rows(&csv)?;
            let fits = match &r {
                Some(r) => commands::decoherence_table(r)?,
                None => Vec::new(),
            };
            let analysis = commands::analyze(&rows, window, fits)?;
            let out = match (&cli.out, input.is_dir()) {
                (Some(o), _) => o.clone(),
                (None, true) => input.clone(),
                (None, false) => csv.parent().map(|p| p.to_path_buf()).unwrap_or_default(),
            };
            commands::write_analysis(&analysis, &out, &commands::analysis_provenance(input, r.as_ref()))?;
        }
        Command::ShowPreset { name } => println!("{}", commands::show_preset(name.as_deref())?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("crlearn: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
