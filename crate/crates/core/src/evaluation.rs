//! Empirical CRPS, its closed-form Gaussian counterpart, and dataset-level
//! scoring of probabilistic and point forecasters.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::dataset::{ScalerState, WindowSet};
use crate::error::{Error, Result};
use crate::models::{DeterministicModel, Generator};
use crate::rng::{derive_seed, seeded, stream};

pub const DEFAULT_SAMPLES: usize = 200;

/// How the `E|X - X'|` term is estimated from a finite sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrpsEstimator {
    /// `X` is the first half of the draws and `X'` the second half, paired
    /// elementwise.
    #[default]
    HalfSplit,
    /// Mean over all distinct pairs.
    FullPairwise,
}

/// `mean|s - x| - 1/2 mean|X_i - X'_i|` with the two halves of `samples`
/// as the independent copies.
pub fn crps_empirical(samples: &[f64], x: f64) -> Result<f64> {
    crps_empirical_with(samples, x, CrpsEstimator::HalfSplit)
}

pub fn crps_empirical_with(samples: &[f64], x: f64, estimator: CrpsEstimator) -> Result<f64> {
    let n = samples.len();
    if n < 2 || !n.is_multiple_of(2) {
        return Err(Error::BadSampleCount(n));
    }
    // Means are taken as offsets from the first term so that identical
    // terms average to exactly that term.
    let first = (samples[0] - x).abs();
    let accuracy = first + samples.iter().map(|s| (s - x).abs() - first).sum::<f64>() / n as f64;
    let spread = match estimator {
        CrpsEstimator::HalfSplit => {
            let (a, b) = samples.split_at(n / 2);
            a.iter().zip(b).map(|(p, q)| (p - q).abs()).sum::<f64>() / (n / 2) as f64
        }
        CrpsEstimator::FullPairwise => {
            let mut sorted = samples.to_vec();
            sorted.sort_by(f64::total_cmp);
            // sum_{i<j} (s_(j) - s_(i)) = sum_k s_(k) (2k - n + 1)
            let low = sorted[0];
            let total: f64 = sorted
                .iter()
                .enumerate()
                .map(|(k, s)| (s - low) * (2.0 * k as f64 - n as f64 + 1.0))
                .sum();
            2.0 * total / (n * (n - 1)) as f64
        }
    };
    Ok(accuracy - 0.5 * spread)
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

/// Closed-form CRPS of `N(mu, sigma^2)` at `x`.
pub fn crps_gaussian(mu: f64, sigma: f64, x: f64) -> Result<f64> {
    if sigma <= 0.0 || !sigma.is_finite() {
        return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
    }
    let z = (x - mu) / sigma;
    Ok(sigma * (z * (2.0 * std_normal_cdf(z) - 1.0) + 2.0 * std_normal_pdf(z) - 1.0 / std::f64::consts::PI.sqrt()))
}

/// Draws for one window (`[n x f]`) together with the realised target.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveSampleSet {
    samples: Array2<f64>,
    ground_truth: Array1<f64>,
}

impl PredictiveSampleSet {
    pub fn new(samples: Array2<f64>, ground_truth: Array1<f64>) -> Result<Self> {
        if samples.ncols() != ground_truth.len() {
            return Err(Error::shape(
                format!("{} features", ground_truth.len()),
                format!("{} sample columns", samples.ncols()),
            ));
        }
        if samples.nrows() == 0 {
            return Err(Error::BadSampleCount(0));
        }
        if samples.iter().chain(ground_truth.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite sample or ground truth".into()));
        }
        Ok(Self { samples, ground_truth })
    }

    pub fn samples(&self) -> &Array2<f64> {
        &self.samples
    }

    pub fn ground_truth(&self) -> &Array1<f64> {
        &self.ground_truth
    }
}

/// Univariate CRPS of every feature column against its target entry.
pub fn crps_multivariate(set: &PredictiveSampleSet) -> Result<Array1<f64>> {
    crps_multivariate_with(set, CrpsEstimator::HalfSplit)
}

pub fn crps_multivariate_with(set: &PredictiveSampleSet, estimator: CrpsEstimator) -> Result<Array1<f64>> {
    set.samples
        .columns()
        .into_iter()
        .zip(set.ground_truth.iter())
        .map(|(col, &x)| crps_empirical_with(&col.to_vec(), x, estimator))
        .collect::<Result<Vec<_>>>()
        .map(Array1::from)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Units {
    Original,
    Scaled,
}

/// Per-feature and overall scores. For point forecasts the CRPS fields hold
/// the MAE (the degenerate-distribution reduction).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub crps_overall: f64,
    pub mae_overall: f64,
    pub crps_per_feature: Vec<f64>,
    pub mae_per_feature: Vec<f64>,
    pub n_windows: usize,
    pub samples_per_window: usize,
    pub units: Units,
}

impl MetricsReport {
    fn from_sums(model: &str, crps: Array1<f64>, mae: Array1<f64>, n_windows: usize, n: usize, units: Units) -> Self {
        let crps_per_feature = (crps / n_windows as f64).to_vec();
        let mae_per_feature = (mae / n_windows as f64).to_vec();
        Self {
            model: model.to_owned(),
            crps_overall: mean(&crps_per_feature),
            mae_overall: mean(&mae_per_feature),
            crps_per_feature,
            mae_per_feature,
            n_windows,
            samples_per_window: n,
            units,
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Anything that can draw `n` forecasts per window for a batch of windows,
/// row `i * n + j` being draw `j` of window `i`.
pub trait ProbabilisticForecaster: Sync {
    fn draw(&self, steps: &[Array2<f64>], n: usize, rng: &mut dyn rand::RngCore) -> Result<Array2<f64>>;
}

impl ProbabilisticForecaster for Generator {
    fn draw(&self, steps: &[Array2<f64>], n: usize, rng: &mut dyn rand::RngCore) -> Result<Array2<f64>> {
        self.sample_batch(steps, n, rng)
    }
}

pub trait PointForecaster: Sync {
    fn point(&self, steps: &[Array2<f64>]) -> Result<Array2<f64>>;
}

impl PointForecaster for DeterministicModel {
    fn point(&self, steps: &[Array2<f64>]) -> Result<Array2<f64>> {
        self.predict(steps)
    }
}

/// Windows per scoring chunk. Each chunk draws from its own seeded stream,
/// so results do not depend on thread scheduling.
const CHUNK: usize = 64;

fn to_units(values: Array2<f64>, scaler: Option<&ScalerState>) -> Result<Array2<f64>> {
    match scaler {
        Some(s) => s.inverse(values.view()),
        None => Ok(values),
    }
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Scores `n_samples` draws per window with CRPS; `mae_*` holds the error of
/// the per-feature sample median. Reported in original units when a scaler
/// is given.
pub fn evaluate_probabilistic<F: ProbabilisticForecaster + ?Sized>(
    model: &F,
    windows: &WindowSet,
    n_samples: usize,
    seed: u64,
    scaler: Option<&ScalerState>,
) -> Result<MetricsReport> {
    evaluate_probabilistic_with(model, windows, n_samples, seed, scaler, CrpsEstimator::HalfSplit)
}

pub fn evaluate_probabilistic_with<F: ProbabilisticForecaster + ?Sized>(
    model: &F,
    windows: &WindowSet,
    n_samples: usize,
    seed: u64,
    scaler: Option<&ScalerState>,
    estimator: CrpsEstimator,
) -> Result<MetricsReport> {
    if n_samples < 2 || !n_samples.is_multiple_of(2) {
        return Err(Error::BadSampleCount(n_samples));
    }
    let f = windows.n_features();
    let n_windows = windows.len();
    let starts: Vec<usize> = (0..n_windows).step_by(CHUNK).collect();
    let partials = starts
        .par_iter()
        .map(|&start| -> Result<(Array1<f64>, Array1<f64>)> {
            let idx: Vec<usize> = (start..(start + CHUNK).min(n_windows)).collect();
            let batch = windows.batch(&idx);
            let mut rng = seeded(derive_seed(seed, start as u64), stream::EVAL);
            let draws = to_units(model.draw(&batch.steps, n_samples, &mut rng)?, scaler)?;
            let targets = to_units(batch.targets, scaler)?;
            let mut crps = Array1::zeros(f);
            let mut mae = Array1::zeros(f);
            for (i, truth) in targets.rows().into_iter().enumerate() {
                let block = draws.slice(ndarray::s![i * n_samples..(i + 1) * n_samples, ..]);
                for j in 0..f {
                    let mut col = block.column(j).to_vec();
                    crps[j] += crps_empirical_with(&col, truth[j], estimator)?;
                    col.sort_by(f64::total_cmp);
                    mae[j] += (median(&col) - truth[j]).abs();
                }
            }
            Ok((crps, mae))
        })
        .collect::<Result<Vec<_>>>()?;
    let (crps, mae) = partials
        .into_iter()
        .fold((Array1::zeros(f), Array1::zeros(f)), |(c, m), (pc, pm)| (c + pc, m + pm));
    let units = if scaler.is_some() { Units::Original } else { Units::Scaled };
    Ok(MetricsReport::from_sums("probabilistic", crps, mae, n_windows, n_samples, units))
}

/// Mean absolute error per feature of a point forecaster.
pub fn evaluate_point<F: PointForecaster + ?Sized>(
    model: &F,
    windows: &WindowSet,
    scaler: Option<&ScalerState>,
) -> Result<MetricsReport> {
    let f = windows.n_features();
    let n_windows = windows.len();
    let starts: Vec<usize> = (0..n_windows).step_by(CHUNK).collect();
    let partials = starts
        .par_iter()
        .map(|&start| -> Result<Array1<f64>> {
            let idx: Vec<usize> = (start..(start + CHUNK).min(n_windows)).collect();
            let batch = windows.batch(&idx);
            let pred = to_units(model.point(&batch.steps)?, scaler)?;
            let targets = to_units(batch.targets, scaler)?;
            Ok((pred - targets).mapv(f64::abs).sum_axis(Axis(0)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mae = partials.into_iter().fold(Array1::zeros(f), |acc, p| acc + p);
    let units = if scaler.is_some() { Units::Original } else { Units::Scaled };
    Ok(MetricsReport::from_sums("deterministic", mae.clone(), mae, n_windows, 1, units))
}

/// Wraps a point forecaster as a sampler that repeats its forecast.
pub struct Degenerate<'a, P: PointForecaster + ?Sized>(pub &'a P);

impl<P: PointForecaster + ?Sized> ProbabilisticForecaster for Degenerate<'_, P> {
    fn draw(&self, steps: &[Array2<f64>], n: usize, _rng: &mut dyn rand::RngCore) -> Result<Array2<f64>> {
        let pred = self.0.point(steps)?;
        let mut out = Array2::zeros((pred.nrows() * n, pred.ncols()));
        for (i, row) in pred.rows().into_iter().enumerate() {
            for j in 0..n {
                out.row_mut(i * n + j).assign(&row);
            }
        }
        Ok(out)
    }
}

/// Spread of the draws per window: sample standard deviation of each feature.
pub fn sample_spread<F: ProbabilisticForecaster + ?Sized>(
    model: &F,
    windows: &WindowSet,
    n_samples: usize,
    seed: u64,
) -> Result<Array2<f64>> {
    let f = windows.n_features();
    let mut out = Array2::zeros((windows.len(), f));
    let mut rng = seeded(seed, stream::EVAL);
    for start in (0..windows.len()).step_by(CHUNK) {
        let idx: Vec<usize> = (start..(start + CHUNK).min(windows.len())).collect();
        let batch = windows.batch(&idx);
        let draws = model.draw(&batch.steps, n_samples, &mut rng)?;
        for (k, &i) in idx.iter().enumerate() {
            let block = draws.slice(ndarray::s![k * n_samples..(k + 1) * n_samples, ..]);
            out.row_mut(i).assign(&block.std_axis(Axis(0), 1.0));
        }
    }
    Ok(out)
}

/// `n` independent draws from `N(mu, sigma^2)`.
pub fn normal_draws<R: Rng + ?Sized>(rng: &mut R, n: usize, mu: f64, sigma: f64) -> Vec<f64> {
    (0..n)
        .map(|_| mu + sigma * rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect()
}
