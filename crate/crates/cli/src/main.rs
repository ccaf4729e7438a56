//! `nbell`: simulate and analyse the spin-energy Bell measurement.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use crate::commands::ScanOptions;
use crate::config::{parse_angle, RunConfig};

#[derive(Parser)]
#[command(
    name = "nbell",
    version,
    about = "Spin-energy Bell test simulator for neutron polarimetry"
)]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `[bell] seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `[output] dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Use expected counts instead of Poisson samples, with no setting misalignment.
    #[arg(long, global = true)]
    no_noise: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scan the translation stage and fit the interference fringe.
    Scan {
        /// Spin phase α (radians, or e.g. `90deg`).
        #[arg(long, default_value = "0", value_parser = parse_angle, allow_hyphen_values = true)]
        alpha: f64,
        #[arg(long, default_value_t = -15.0, allow_hyphen_values = true)]
        start_mm: f64,
        #[arg(long, default_value_t = 35.0, allow_hyphen_values = true)]
        end_mm: f64,
        #[arg(long, default_value_t = 41)]
        points: usize,
    },
    /// Simulate the sixteen-setting Bell measurement and report S.
    Bell,
    /// Find the momentum spread that gives a target fringe contrast.
    Calibrate {
        #[arg(long, default_value_t = 0.838, allow_hyphen_values = true)]
        target: f64,
    },
    /// Compute correlations and S from a counts CSV.
    Analyze { counts: PathBuf },
}

fn run(cli: Cli) -> Result<u8> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let seed = cli.seed.unwrap_or(cfg.bell.seed);
    let out = cli.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    match cli.command {
        Command::Scan {
            alpha,
            start_mm,
            end_mm,
            points,
        } => {
            let opts = ScanOptions {
                alpha,
                start_mm,
                end_mm,
                points,
            };
            commands::scan(&cfg, &opts, seed, &out, cli.no_noise)?;
            Ok(0)
        }
        Command::Bell => commands::bell(&cfg, seed, &out, cli.no_noise),
        Command::Calibrate { target } => {
            commands::calibrate(&cfg, target, &out)?;
            Ok(0)
        }
        Command::Analyze { counts } => {
            commands::analyze(&cfg, &counts, &out)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
