//! Command-line driver for the kanpca factor-model toolkit.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

mod commands;
mod config;

use clap::{Args, Parser, Subcommand};
use commands::AppError;
use config::{parse_grid_list, ExperimentConfig, Overrides};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "kanpca",
    version,
    about = "Factor models for return panels: classical PCA and a B-spline KAN autoencoder \
             with a linear decoder, fitted under a leakage-free chronological protocol"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct RunArgs {
    /// Experiment config (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input CSV, overriding the config's data.path.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory, overriding the config's output.dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// RNG seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Constrain every encoder edge to be affine (the PCA-equivalent mode).
    #[arg(long)]
    affine: bool,
    /// Factor count, overriding the architecture's bottleneck width.
    #[arg(long)]
    k: Option<usize>,
    /// Grid schedule, e.g. "3,5,10" or a single size.
    #[arg(long)]
    grid: Option<String>,
    /// Deterministic outputs: logical audit timestamps, no wall-clock lines.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Fit classical PCA on the training split; report R^2 on all splits.
    FitPca(RunArgs),
    /// Fit the KAN autoencoder (spline or --affine); report R^2 on all splits.
    FitKan(RunArgs),
    /// Fit both models on identical splits and emit a comparison table.
    Benchmark(RunArgs),
    /// Export factor series z_t over the full standardized panel.
    ExportFactors {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Input CSV, overriding the config's data.path.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Export sampled first-layer edge functions for plotting.
    ExportEdges {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Points per curve.
        #[arg(long, default_value_t = 200)]
        samples: usize,
    },
    /// Print a model file's header.
    Inspect {
        #[arg(long)]
        model: PathBuf,
    },
}

fn resolve(args: &RunArgs) -> Result<ExperimentConfig, AppError> {
    let grids = match &args.grid {
        None => None,
        Some(s) => Some(parse_grid_list(s).map_err(AppError::Usage)?),
    };
    let overrides = Overrides {
        data: args.data.clone(),
        out: args.out.clone(),
        seed: args.seed,
        affine: args.affine,
        k: args.k,
        grids,
        deterministic: args.deterministic,
    };
    Ok(ExperimentConfig::load(args.config.as_deref())?.resolve(&overrides)?)
}

fn run(cli: Cli) -> Result<(), AppError> {
    match cli.command {
        Command::FitPca(args) => commands::cmd_fit_pca(&resolve(&args)?),
        Command::FitKan(args) => commands::cmd_fit_kan(&resolve(&args)?),
        Command::Benchmark(args) => commands::cmd_benchmark(&resolve(&args)?),
        Command::ExportFactors { model, out, config, data } => {
            let overrides = Overrides { data, ..Default::default() };
            let cfg = ExperimentConfig::load(config.as_deref())?.resolve(&overrides)?;
            let out = commands::resolve_out_file(&cfg, &out);
            commands::cmd_export_factors(&cfg, &model, &out)
        }
        Command::ExportEdges { model, out, samples } => {
            commands::cmd_export_edges(&model, &out, samples)
        }
        Command::Inspect { model } => commands::cmd_inspect(&model),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap's help/version paths exit cleanly; argument mistakes are
            // usage errors (exit 1).
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
