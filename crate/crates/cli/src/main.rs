use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use probcast_cli::{cmd_evaluate, cmd_forecast, cmd_gan, cmd_plot, cmd_train_det, ExperimentConfig, ForecastRequest};

#[derive(Parser)]
#[command(name = "probcast", version, about = "Probabilistic forecasting by adversarial conversion of a GRU forecaster")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides any config field, e.g. `--set training.batch_size=32`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl RunArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut config = ExperimentConfig::load(&self.config, &self.overrides)?;
        if let Some(seed) = self.seed {
            config.set_seed(seed);
        }
        if let Some(out) = &self.out {
            config.out = out.clone();
        }
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fit (or search for) the deterministic forecaster.
    TrainDet(RunArgs),
    /// Convert a deterministic checkpoint to a generator and train it adversarially.
    Gan {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        det_checkpoint: PathBuf,
    },
    /// Sample forecasts for every window of a CSV series.
    Forecast {
        #[arg(long)]
        checkpoint: PathBuf,
        /// CSV of consecutive observations, original units.
        #[arg(long)]
        windows: PathBuf,
        /// Forecasts per window.
        #[arg(long, default_value_t = 200)]
        n: usize,
        /// Output CSV.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Rows between window starts (default: the window size).
        #[arg(long)]
        stride: Option<usize>,
        /// The window CSV has no header row.
        #[arg(long)]
        no_header: bool,
    },
    /// Fan chart of sampled forecasts against the realized values.
    Plot {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Output SVG; with several features, one file per feature.
        #[arg(long)]
        out: PathBuf,
        /// Feature indices to plot (default: all).
        #[arg(long, value_delimiter = ',')]
        features: Option<Vec<usize>>,
    },
    /// Score a checkpoint on the configured test split.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Draws per window (default: the config's evaluation_samples).
        #[arg(long)]
        n: Option<usize>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::TrainDet(args) => {
            let dir = cmd_train_det(&args.load()?)?;
            println!("{}", dir.display());
        }
        Command::Gan { run, det_checkpoint } => {
            let dir = cmd_gan(&run.load()?, &det_checkpoint)?;
            println!("{}", dir.display());
        }
        Command::Forecast {
            checkpoint,
            windows,
            n,
            out,
            seed,
            stride,
            no_header,
        } => {
            let summary = cmd_forecast(&ForecastRequest {
                checkpoint,
                windows,
                has_header: !no_header,
                n,
                stride,
                seed,
                out: out.clone(),
            })?;
            eprintln!("{} windows, {} rows -> {}", summary.windows, summary.rows, out.display());
        }
        Command::Plot {
            samples,
            truth,
            out,
            features,
        } => {
            for path in cmd_plot(&samples, &truth, &out, features.as_deref())? {
                println!("{}", path.display());
            }
        }
        Command::Evaluate { run, checkpoint, n } => {
            let config = run.load()?;
            let report = cmd_evaluate(&config, &checkpoint, n)?;
            let text = serde_json::to_string_pretty(&report)?;
            match run.out {
                Some(path) => std::fs::write(&path, text + "\n")?,
                None => println!("{text}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
