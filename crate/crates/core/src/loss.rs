//! Point and adversarial objectives.
//!
//! The score-space functions (`loss_*`) validate their inputs and are what
//! reports use. Training works on discriminator logits through the
//! `*_from_logits` variants, which are numerically stable and also return
//! the gradient with respect to the logits.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{sigmoid, softplus};

/// Mean of `|prediction - target|` over every entry.
pub fn loss_mae(predictions: ArrayView2<'_, f64>, targets: ArrayView2<'_, f64>) -> Result<f64> {
    if predictions.dim() != targets.dim() || predictions.is_empty() {
        return Err(Error::shape(format!("{:?}", targets.dim()), format!("{:?}", predictions.dim())));
    }
    let n = predictions.len() as f64;
    Ok(predictions
        .iter()
        .zip(targets.iter())
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / n)
}

/// Subgradient of [`loss_mae`] with respect to the predictions.
pub fn mae_gradient(predictions: &Array2<f64>, targets: &Array2<f64>) -> Array2<f64> {
    let n = predictions.len() as f64;
    let mut g = predictions - targets;
    g.mapv_inplace(|d| {
        if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        }
    });
    g
}

fn check_scores(scores: ArrayView1<'_, f64>, name: &str) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::Domain(format!("{name} is empty")));
    }
    if let Some(s) = scores.iter().find(|s| !(**s > 0.0 && **s < 1.0)) {
        return Err(Error::Domain(format!("{name} contains {s}, outside (0, 1)")));
    }
    Ok(())
}

/// `-mean[ln D(real) + ln(1 - D(fake))]`.
pub fn loss_discriminator(real_scores: ArrayView1<'_, f64>, fake_scores: ArrayView1<'_, f64>) -> Result<f64> {
    check_scores(real_scores, "real scores")?;
    check_scores(fake_scores, "fake scores")?;
    if real_scores.len() != fake_scores.len() {
        return Err(Error::shape(real_scores.len(), fake_scores.len()));
    }
    let n = real_scores.len() as f64;
    let total: f64 = real_scores
        .iter()
        .zip(fake_scores.iter())
        .map(|(r, f)| r.ln() + (-f).ln_1p())
        .sum();
    Ok(-total / n)
}

/// Non-saturating generator objective `-mean ln D(fake)`.
pub fn loss_generator(fake_scores: ArrayView1<'_, f64>) -> Result<f64> {
    check_scores(fake_scores, "fake scores")?;
    Ok(-fake_scores.iter().map(|s| s.ln()).sum::<f64>() / fake_scores.len() as f64)
}

/// Literal minimax generator objective `mean ln(1 - D(fake))`.
pub fn loss_generator_saturating(fake_scores: ArrayView1<'_, f64>) -> Result<f64> {
    check_scores(fake_scores, "fake scores")?;
    Ok(fake_scores.iter().map(|s| (-s).ln_1p()).sum::<f64>() / fake_scores.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorLoss {
    #[default]
    NonSaturating,
    Saturating,
}

/// Discriminator loss and its gradients on the real and fake logits.
pub fn discriminator_loss_from_logits(real: &Array1<f64>, fake: &Array1<f64>) -> (f64, Array1<f64>, Array1<f64>) {
    let n = real.len() as f64;
    // -ln sigmoid(l) = softplus(-l); -ln(1 - sigmoid(l)) = softplus(l)
    let loss = (real.iter().map(|&l| softplus(-l)).sum::<f64>() + fake.iter().map(|&l| softplus(l)).sum::<f64>()) / n;
    let d_real = real.mapv(|l| (sigmoid(l) - 1.0) / n);
    let d_fake = fake.mapv(|l| sigmoid(l) / n);
    (loss, d_real, d_fake)
}

pub fn generator_loss_from_logits(fake: &Array1<f64>, form: GeneratorLoss) -> (f64, Array1<f64>) {
    let n = fake.len() as f64;
    match form {
        GeneratorLoss::NonSaturating => {
            let loss = fake.iter().map(|&l| softplus(-l)).sum::<f64>() / n;
            (loss, fake.mapv(|l| (sigmoid(l) - 1.0) / n))
        }
        GeneratorLoss::Saturating => {
            let loss = -fake.iter().map(|&l| softplus(l)).sum::<f64>() / n;
            (loss, fake.mapv(|l| -sigmoid(l) / n))
        }
    }
}

/// The adversarial value `mean ln D(real) + mean ln(1 - D(fake))` from logits.
pub fn value_from_logits(real: &Array1<f64>, fake: &Array1<f64>) -> f64 {
    -discriminator_loss_from_logits(real, fake).0
}
