//! Synthetic series with known conditional distributions, used for
//! fixtures and recovery checks.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::dataset::TimeSeriesFrame;
use crate::rng::{seeded, stream};

/// `x[t+1] = phi * x[t] + scale(x[t]) * eps`, `eps ~ N(0, 1)`, with
/// `scale(x) = base_scale + slope * |x|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianAr {
    pub phi: f64,
    pub base_scale: f64,
    pub slope: f64,
}

impl GaussianAr {
    /// Homoscedastic AR(1).
    pub fn ar1(phi: f64, sigma: f64) -> Self {
        Self {
            phi,
            base_scale: sigma,
            slope: 0.0,
        }
    }

    pub fn heteroscedastic(phi: f64, base_scale: f64, slope: f64) -> Self {
        Self { phi, base_scale, slope }
    }

    pub fn conditional_mean(&self, last: f64) -> f64 {
        self.phi * last
    }

    pub fn conditional_scale(&self, last: f64) -> f64 {
        self.base_scale + self.slope * last.abs()
    }

    /// `len` observations after a burn-in of 500 steps from zero.
    pub fn simulate(&self, len: usize, seed: u64) -> TimeSeriesFrame {
        let mut rng = seeded(seed, stream::DATA);
        let mut x = 0.0;
        for _ in 0..500 {
            x = self.next(x, &mut rng);
        }
        let mut values = Vec::with_capacity(len);
        for _ in 0..len {
            x = self.next(x, &mut rng);
            values.push(x);
        }
        TimeSeriesFrame::from_values(Array2::from_shape_vec((len, 1), values).expect("column"))
            .expect("finite simulation")
            .with_sample_rate("1 step")
    }

    fn next<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> f64 {
        let eps: f64 = rng.sample(StandardNormal);
        self.conditional_mean(x) + self.conditional_scale(x) * eps
    }
}

/// Multivariate fixture: independent AR(1) features with per-feature offsets
/// and scales, so that scaling matters.
pub fn multivariate_fixture(len: usize, features: usize, seed: u64) -> TimeSeriesFrame {
    let columns: Vec<TimeSeriesFrame> = (0..features)
        .map(|j| GaussianAr::ar1(0.7 + 0.05 * (j % 4) as f64, 0.5).simulate(len, seed.wrapping_add(j as u64)))
        .collect();
    let values = Array2::from_shape_fn((len, features), |(i, j)| {
        10.0 * j as f64 + (1.0 + j as f64) * columns[j].values()[[i, 0]]
    });
    TimeSeriesFrame::from_values(values).expect("finite fixture")
}
