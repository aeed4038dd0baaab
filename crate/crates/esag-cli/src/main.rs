//! `esag` — simulate, fit, predict, and score spatial hyperspheric regressions
//! for compositional data.
//!
//! Exit codes: 0 success, 2 validation error, 3 numerical error, 4 I/O error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use esag_cli::config::{Mode, RunConfig, SimSpec};
use esag_cli::dataset::{read_dataset, read_grid, write_dataset, write_grid, Grid};
use esag_cli::error::{CliError, Result};
use esag_cli::fitrun::fit_dataset;
use esag_cli::predictrun::{predict_grid, write_predictions};
use esag_cli::scorerun::score_chains;
use esag_cli::sim::simulate;

#[derive(Parser)]
#[command(name = "esag", version, about = "Spatial hyperspheric regression for compositional data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigOverrides {
    /// Run configuration (JSON); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the configured random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the configured worker count.
    #[arg(long)]
    workers: Option<usize>,
}

impl ConfigOverrides {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(workers) = self.workers {
            cfg.workers = workers;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset (and truth record) from a simulation spec.
    Simulate {
        /// Simulation specification (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Output directory (dataset.csv, truth.json, optionally grid.csv).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Fit the hierarchical model by MCMC and persist the chains.
    Fit {
        #[command(flatten)]
        overrides: ConfigOverrides,
        /// Dataset CSV.
        #[arg(long)]
        data: PathBuf,
        /// Output directory (chains.csv, chains.meta.json, summary.json).
        #[arg(long)]
        out: PathBuf,
        /// Data model: esag or esag_plus.
        #[arg(long)]
        mode: Option<String>,
        /// Disable the latent spatial fields.
        #[arg(long)]
        no_spatial: bool,
        /// Treat response columns as compositions (square-root on ingestion).
        #[arg(long)]
        as_composition: bool,
    },
    /// Predict compositions over a covariate grid from a fitted chain file.
    Predict {
        #[command(flatten)]
        overrides: ConfigOverrides,
        /// Fitted chains CSV (with its .meta.json sidecar).
        #[arg(long)]
        chain: PathBuf,
        /// Grid CSV: site_x, site_y, x_1..x_p (raw covariates).
        #[arg(long)]
        grid: PathBuf,
        /// Output prediction CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare two fitted chains on one dataset (mean logS, mean CSD).
    Score {
        #[command(flatten)]
        overrides: ConfigOverrides,
        #[arg(long)]
        chain_a: PathBuf,
        #[arg(long)]
        chain_b: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        as_composition: bool,
        /// Optional JSON report path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_mode(raw: &str) -> Result<Mode> {
    match raw {
        "esag" => Ok(Mode::Esag),
        "esag_plus" | "esag+" => Ok(Mode::EsagPlus),
        other => Err(CliError::Validation(format!(
            "unknown mode {other:?}; expected esag or esag_plus"
        ))),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, out, seed } => {
            let spec = SimSpec::load(&config)?;
            let result = simulate(&spec, seed)?;
            std::fs::create_dir_all(&out)?;
            write_dataset(&out.join("dataset.csv"), &result.dataset)?;
            let truth = serde_json::to_string_pretty(&result.truth)?;
            std::fs::write(out.join("truth.json"), truth)?;
            if let Some(grid) = &result.truth.grid {
                // Prediction-ready grid with raw covariates.
                let p = spec.x_formulas.len();
                let x = nalgebra::DMatrix::from_fn(grid.coords.len(), p, |i, k| {
                    spec.x_formulas[k].eval(grid.coords[i])
                });
                write_grid(&out.join("grid.csv"), &Grid { coords: grid.coords.clone(), x })?;
            }
            println!(
                "simulated {} observations into {} (seed {seed})",
                result.dataset.coords.len(),
                out.display()
            );
            Ok(())
        }
        Command::Fit { overrides, data, out, mode, no_spatial, as_composition } => {
            let mut cfg = overrides.load()?;
            if let Some(mode) = mode.as_deref() {
                cfg.mode = parse_mode(mode)?;
            }
            if no_spatial {
                cfg.spatial = false;
            }
            let raw = read_dataset(&data)?;
            let result = fit_dataset(raw, &cfg, as_composition)?;
            if result.adjusted_rows > 0 {
                eprintln!(
                    "warning: renormalized {} composition rows whose sums deviated from 1 \
                     within the 1e-6 window",
                    result.adjusted_rows
                );
            }
            std::fs::create_dir_all(&out)?;
            esag_cli::chains::write_chains(&out.join("chains.csv"), &result.outputs, &result.meta)?;
            std::fs::write(
                out.join("summary.json"),
                serde_json::to_string_pretty(&result.summary)?,
            )?;
            print!("{}", result.summary.render());
            println!("chains written to {}", out.join("chains.csv").display());
            Ok(())
        }
        Command::Predict { overrides, chain, grid, out } => {
            let cfg = overrides.load()?;
            let grid = read_grid(&grid)?;
            let predictions = predict_grid(&chain, &grid, cfg.pred_mc_draws, cfg.seed)?;
            let rows = write_predictions(&out, &predictions)?;
            println!("wrote {rows} prediction rows to {}", out.display());
            Ok(())
        }
        Command::Score { overrides, chain_a, chain_b, data, as_composition, out } => {
            let cfg = overrides.load()?;
            let raw = read_dataset(&data)?;
            let report = score_chains(
                &chain_a,
                &chain_b,
                raw,
                as_composition,
                cfg.mc_draws,
                cfg.pred_mc_draws,
                cfg.seed,
            )?;
            print!("{}", report.render());
            if let Some(path) = out {
                std::fs::write(path, serde_json::to_string_pretty(&report)?)?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
