//! `tgf` — the pipeline front end.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric failure.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use commands::compare::Pairing;
use config::ConfigError;

#[derive(Parser)]
#[command(name = "tgf", version, about = "Stock-panel forecasting over a fixed node graph")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment configuration file (plain-text key = value).
    #[arg(long)]
    config: PathBuf,
    /// Output directory (defaults to $TGF_OUT).
    #[arg(long, env = "TGF_OUT")]
    out: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Load and clean the CSV inputs into a rectangular panel.
    Ingest(CommonArgs),
    /// Feature tensor operations.
    Features {
        #[command(subcommand)]
        action: FeaturesAction,
    },
    /// Graph composition.
    Graph {
        #[command(subcommand)]
        action: GraphAction,
    },
    /// Run the configuration grid end to end.
    Experiment(CommonArgs),
    /// Compare two runs' prediction grids with a left-tailed paired t-test.
    Compare {
        /// Directory holding the first run's predictions.csv.
        #[arg(long)]
        run_a: PathBuf,
        /// Directory holding the second run's predictions.csv.
        #[arg(long)]
        run_b: PathBuf,
        /// Pair squared errors per observation or per ticker.
        #[arg(long, default_value = "observation")]
        paired_by: String,
        /// Optional output directory for the report files.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one configuration with a validation tail and record the curve.
    Curve(CommonArgs),
    /// Model inspection.
    Model {
        #[command(subcommand)]
        action: ModelAction,
    },
}

#[derive(Subcommand)]
enum FeaturesAction {
    /// Compute the tensor and write it as a binary blob.
    Build(CommonArgs),
    /// Print per-feature summary statistics.
    Inspect {
        #[arg(long)]
        config: PathBuf,
        /// Inspect a previously written features.bin instead of recomputing.
        #[arg(long)]
        tensor: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum GraphAction {
    /// Compose the adjacency and export edges, diagnostics, and the operator.
    Build {
        #[command(flatten)]
        common: CommonArgs,
        /// Override the config graph mode (returns | ratios).
        #[arg(long)]
        mode: Option<String>,
        /// Override the correlation threshold.
        #[arg(long)]
        threshold: Option<f64>,
    },
}

#[derive(Subcommand)]
enum ModelAction {
    /// Print the layer/shape listing.
    Describe {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seq_len: Option<usize>,
        #[arg(long)]
        horizon: Option<usize>,
    },
}

fn load_config(path: &PathBuf, seed: Option<u64>) -> anyhow::Result<config::AppConfig> {
    let mut cfg = config::load(path)?;
    if let Some(seed) = seed {
        cfg.optim.seed = seed;
    }
    Ok(cfg)
}

fn dispatch(cli: Cli) -> anyhow::Result<i32> {
    match cli.command {
        Command::Ingest(args) => {
            let cfg = load_config(&args.config, args.seed)?;
            commands::ingest::run(&cfg, &args.out)?;
            Ok(0)
        }
        Command::Features { action } => match action {
            FeaturesAction::Build(args) => {
                let cfg = load_config(&args.config, args.seed)?;
                commands::features::build(&cfg, &args.out)?;
                Ok(0)
            }
            FeaturesAction::Inspect { config, tensor } => {
                let cfg = load_config(&config, None)?;
                commands::features::inspect(&cfg, tensor.as_deref())?;
                Ok(0)
            }
        },
        Command::Graph { action } => match action {
            GraphAction::Build { common, mode, threshold } => {
                let cfg = load_config(&common.config, common.seed)?;
                let mut pipeline = cfg.pipeline.clone();
                if let Some(mode) = mode {
                    pipeline.graph_mode = match mode.as_str() {
                        "returns" => tgf_core::CorrelationMode::PearsonReturns,
                        "ratios" => tgf_core::CorrelationMode::SpearmanRatios,
                        other => {
                            return Err(
                                ConfigError(format!("--mode: returns or ratios, got {other:?}"))
                                    .into(),
                            )
                        }
                    };
                }
                if threshold.is_some() {
                    pipeline.graph_threshold = threshold;
                }
                commands::graph::build(&cfg, &common.out, &pipeline)?;
                Ok(0)
            }
        },
        Command::Experiment(args) => {
            let cfg = load_config(&args.config, args.seed)?;
            commands::experiment::run(&cfg, &args.out)
        }
        Command::Compare { run_a, run_b, paired_by, out } => {
            let pairing = match paired_by.as_str() {
                "observation" => Pairing::Observation,
                "ticker" => Pairing::Ticker,
                other => {
                    return Err(ConfigError(format!(
                        "--paired-by: observation or ticker, got {other:?}"
                    ))
                    .into())
                }
            };
            commands::compare::run(&run_a, &run_b, pairing, out.as_deref())?;
            Ok(0)
        }
        Command::Curve(args) => {
            let cfg = load_config(&args.config, args.seed)?;
            commands::curve::run(&cfg, &args.out)?;
            Ok(0)
        }
        Command::Model { action } => match action {
            ModelAction::Describe { config, seq_len, horizon } => {
                let cfg = load_config(&config, None)?;
                commands::describe::run(&cfg, seq_len, horizon)?;
                Ok(0)
            }
        },
    }
}

fn exit_code_for(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return 1;
    }
    if let Some(core) = err.downcast_ref::<tgf_core::Error>() {
        return match core.class() {
            tgf_core::ErrorClass::Data => 2,
            tgf_core::ErrorClass::Numeric => 3,
        };
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e) as u8)
        }
    }
}
