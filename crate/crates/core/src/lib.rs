//! Probabilistic multivariate forecasting by adversarially converting a
//! deterministic GRU forecaster into a conditional-GAN generator.
//!
//! The pipeline is: fit (or search for) a deterministic forecaster under
//! MAE, build a generator with the same GRU encoder whose representation is
//! concatenated with a noise vector, then train it against a sequence
//! discriminator and score it with empirical CRPS.

pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod loss;
pub mod models;
pub mod nn;
pub mod rng;
pub mod search;
pub mod synthetic;
pub mod training;

pub use checkpoint::{load_model, save_model, Checkpoint, ModelHandle};
pub use dataset::{
    apply_scaler, chronological_split, fit_scaler, invert_scaler, load_csv, make_windows, ScalerState, SplitSpec,
    Splits, TimeSeriesFrame, WindowSet, WindowedExample,
};
pub use error::{Error, Result};
pub use evaluation::{
    crps_empirical, crps_gaussian, crps_multivariate, evaluate_point, evaluate_probabilistic, MetricsReport,
    PredictiveSampleSet,
};
pub use models::{
    build_deterministic, build_discriminator, build_generator_from_deterministic, DeterministicModel,
    DeterministicSpec, Discriminator, DiscriminatorSpec, Generator, GeneratorSpec,
};
pub use search::{ga_search, GaConfig, SearchSpace};
pub use training::{train_deterministic, train_gan, TrainConfig, TrainReport};
