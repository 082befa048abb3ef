//! Command-line pipeline around the `probcast` library: fit a deterministic
//! forecaster, convert and train it adversarially, then forecast, evaluate
//! and plot.

pub mod commands;
pub mod config;
pub mod plot;
pub mod run;

pub use commands::{cmd_evaluate, cmd_forecast, cmd_gan, cmd_train_det, ComparisonReport, ForecastRequest};
pub use config::ExperimentConfig;
pub use plot::cmd_plot;
pub use run::{read_manifest, RunManifest};
