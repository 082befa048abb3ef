//! MAE fitting of the deterministic forecaster and conditional-GAN training
//! of the generator, both with validation-based model selection and early
//! stopping.

use std::time::Instant;

use ndarray::{concatenate, s, Array2, Axis};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Batch, WindowSet};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_point, evaluate_probabilistic};
use crate::loss::{
    discriminator_loss_from_logits, generator_loss_from_logits, loss_mae, mae_gradient, value_from_logits,
    GeneratorLoss,
};
use crate::models::{DeterministicModel, Discriminator, Generator};
use crate::nn::{sigmoid, Adam, AdamConfig, Parameters};
use crate::rng::{derive_seed, seeded, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub det_learning_rate: f64,
    pub gen_learning_rate: f64,
    pub disc_learning_rate: f64,
    /// First-moment decay for both adversarial optimizers.
    pub gan_beta1: f64,
    pub disc_steps_per_gen_step: usize,
    pub patience: usize,
    pub seed: u64,
    pub eval_samples_per_window: usize,
    pub generator_loss: GeneratorLoss,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            max_epochs: 200,
            det_learning_rate: 1e-3,
            gen_learning_rate: 2e-4,
            disc_learning_rate: 2e-4,
            gan_beta1: 0.5,
            disc_steps_per_gen_step: 1,
            patience: 20,
            seed: 0,
            eval_samples_per_window: 200,
            generator_loss: GeneratorLoss::NonSaturating,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_owned()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.disc_steps_per_gen_step == 0 {
            return bad("disc_steps_per_gen_step must be at least 1");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if self.eval_samples_per_window < 2 || !self.eval_samples_per_window.is_multiple_of(2) {
            return bad("eval_samples_per_window must be even and at least 2");
        }
        for (name, lr) in [
            ("det_learning_rate", self.det_learning_rate),
            ("gen_learning_rate", self.gen_learning_rate),
            ("disc_learning_rate", self.disc_learning_rate),
        ] {
            if !(lr.is_finite() && lr >= 0.0) {
                return bad(&format!("{name} must be finite and non-negative"));
            }
        }
        if !(0.0..1.0).contains(&self.gan_beta1) {
            return bad("gan_beta1 must be in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Training MAE, or the generator loss for adversarial training.
    pub loss: f64,
    pub disc_loss: Option<f64>,
    /// Validation MAE, or validation CRPS for adversarial training (scaled units).
    pub validation: f64,
    pub mean_real_score: Option<f64>,
    pub mean_fake_score: Option<f64>,
    /// Adversarial value on a fixed probe batch with fixed noise.
    pub probe_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Index into `epochs` of the retained model.
    pub best_epoch: Option<usize>,
    pub best_validation: Option<f64>,
    pub disc_updates: usize,
    pub gen_updates: usize,
    pub stopped_early: bool,
    pub wall_clock_seconds: f64,
}

impl TrainReport {
    fn new() -> Self {
        Self {
            epochs: Vec::new(),
            best_epoch: None,
            best_validation: None,
            disc_updates: 0,
            gen_updates: 0,
            stopped_early: false,
            wall_clock_seconds: 0.0,
        }
    }

    /// Records an epoch; returns true when it is the new best.
    fn push(&mut self, record: EpochRecord) -> bool {
        let improved = self.best_validation.is_none_or(|b| record.validation < b);
        if improved {
            self.best_epoch = Some(self.epochs.len());
            self.best_validation = Some(record.validation);
        }
        self.epochs.push(record);
        improved
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        crate::io::write_json(path.as_ref(), self)
    }
}

fn finite(value: f64, epoch: usize, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Diverged {
            epoch,
            what: what.to_owned(),
        })
    }
}

fn shuffled_batches(n: usize, size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(size).map(<[usize]>::to_vec).collect()
}

/// Fits the deterministic model under MAE. Returns the parameters with the
/// lowest validation MAE.
pub fn train_deterministic(
    model: DeterministicModel,
    train: &WindowSet,
    valid: &WindowSet,
    config: &TrainConfig,
) -> Result<(DeterministicModel, TrainReport)> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::TooShort("no training windows".into()));
    }
    let started = Instant::now();
    let mut model = model;
    let mut grad = model.zeros_like();
    let mut opt = Adam::new(AdamConfig::new(config.det_learning_rate));
    let mut rng = seeded(config.seed, stream::SHUFFLE);
    let mut report = TrainReport::new();
    let mut best = model.clone();
    let mut since_best = 0;

    for epoch in 1..=config.max_epochs {
        let mut total = 0.0;
        for idx in shuffled_batches(train.len(), config.batch_size, &mut rng) {
            let batch = train.batch(&idx);
            grad.zero();
            let (pred, cache) = model.forward(&batch.steps)?;
            let loss = finite(loss_mae(pred.view(), batch.targets.view())?, epoch, "training loss")?;
            let d = mae_gradient(&pred, &batch.targets);
            model.backward(&cache, &d, &mut grad);
            opt.update(model.params_mut(), grad.params());
            total += loss * idx.len() as f64;
        }
        let validation = finite(evaluate_point(&model, valid, None)?.mae_overall, epoch, "validation MAE")?;
        let improved = report.push(EpochRecord {
            epoch,
            loss: total / train.len() as f64,
            disc_loss: None,
            validation,
            mean_real_score: None,
            mean_fake_score: None,
            probe_value: None,
        });
        if improved {
            best = model.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                report.stopped_early = true;
                break;
            }
        }
    }
    if report.epochs.is_empty() {
        best = model;
    }
    report.wall_clock_seconds = started.elapsed().as_secs_f64();
    Ok((best, report))
}

/// Per-step statistics of one discriminator update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscriminatorStep {
    pub loss: f64,
    pub mean_real_score: f64,
    pub mean_fake_score: f64,
}

/// Owns both players, their gradient buffers and optimizers.
#[derive(Debug, Clone)]
pub struct GanTrainer {
    pub generator: Generator,
    pub discriminator: Discriminator,
    gen_grad: Generator,
    disc_grad: Discriminator,
    gen_opt: Adam,
    disc_opt: Adam,
    noise_rng: ChaCha8Rng,
    generator_loss: GeneratorLoss,
}

fn doubled(steps: &[Array2<f64>]) -> Vec<Array2<f64>> {
    steps.iter().map(|s| concatenate![Axis(0), *s, *s]).collect()
}

impl GanTrainer {
    pub fn new(generator: Generator, discriminator: Discriminator, config: &TrainConfig) -> Result<Self> {
        let g = &generator.spec().base;
        let d = discriminator.spec();
        if (g.window_size, g.feature_count) != (d.window_size, d.feature_count) {
            return Err(Error::shape(
                format!("discriminator (w={}, f={})", g.window_size, g.feature_count),
                format!("(w={}, f={})", d.window_size, d.feature_count),
            ));
        }
        Ok(Self {
            gen_grad: generator.zeros_like(),
            disc_grad: discriminator.zeros_like(),
            gen_opt: Adam::new(AdamConfig::new(config.gen_learning_rate).with_betas(config.gan_beta1, 0.999)),
            disc_opt: Adam::new(AdamConfig::new(config.disc_learning_rate).with_betas(config.gan_beta1, 0.999)),
            noise_rng: seeded(config.seed, stream::NOISE),
            generator_loss: config.generator_loss,
            generator,
            discriminator,
        })
    }

    /// One discriminator update on real targets versus fresh generator draws.
    /// Generator parameters are not touched.
    pub fn discriminator_step(&mut self, batch: &Batch) -> Result<DiscriminatorStep> {
        let b = batch.len();
        let z = self.generator.sample_noise(b, &mut self.noise_rng);
        let fake = self.generator.generate(&batch.steps, &z)?;
        let candidates = concatenate![Axis(0), batch.targets, fake];
        let (logits, cache) = self.discriminator.forward(&doubled(&batch.steps), &candidates)?;
        let logits = logits.column(0).to_owned();
        let real = logits.slice(s![..b]).to_owned();
        let fake = logits.slice(s![b..]).to_owned();
        let (loss, d_real, d_fake) = discriminator_loss_from_logits(&real, &fake);
        let d_logits = concatenate![Axis(0), d_real, d_fake].insert_axis(Axis(1));
        self.disc_grad.zero();
        self.discriminator.backward(&cache, &d_logits, &mut self.disc_grad);
        self.disc_opt.update(self.discriminator.params_mut(), self.disc_grad.params());
        Ok(DiscriminatorStep {
            loss,
            mean_real_score: real.mapv(sigmoid).mean().unwrap_or(0.5),
            mean_fake_score: fake.mapv(sigmoid).mean().unwrap_or(0.5),
        })
    }

    /// One generator update through the discriminator. Discriminator
    /// parameters are not touched.
    pub fn generator_step(&mut self, batch: &Batch) -> Result<f64> {
        let z = self.generator.sample_noise(batch.len(), &mut self.noise_rng);
        let (fake, gen_cache) = self.generator.forward(&batch.steps, &z)?;
        let (logits, disc_cache) = self.discriminator.forward(&batch.steps, &fake)?;
        let (loss, d_logits) = generator_loss_from_logits(&logits.column(0).to_owned(), self.generator_loss);
        self.disc_grad.zero();
        let d_fake = self
            .discriminator
            .backward(&disc_cache, &d_logits.insert_axis(Axis(1)), &mut self.disc_grad);
        self.gen_grad.zero();
        self.generator.backward(&gen_cache, &d_fake, &mut self.gen_grad);
        self.gen_opt.update(self.generator.params_mut(), self.gen_grad.params());
        Ok(loss)
    }

    /// `mean ln D(real) + mean ln(1 - D(G(z)))` for given noise.
    pub fn value(&self, batch: &Batch, noise: &Array2<f64>) -> Result<f64> {
        let fake = self.generator.generate(&batch.steps, noise)?;
        let real = self.discriminator.logits(&batch.steps, &batch.targets)?.column(0).to_owned();
        let fake = self.discriminator.logits(&batch.steps, &fake)?.column(0).to_owned();
        Ok(value_from_logits(&real, &fake))
    }
}

#[derive(Debug, Clone)]
pub struct GanOutcome {
    /// Generator with the lowest validation CRPS.
    pub generator: Generator,
    /// Discriminator at the end of training.
    pub discriminator: Discriminator,
    pub report: TrainReport,
}

/// Seed of the validation draws; fixed for a run so that re-scoring the
/// returned generator reproduces its recorded validation CRPS exactly.
pub fn validation_seed(config: &TrainConfig) -> u64 {
    derive_seed(config.seed, stream::EVAL)
}

const PROBE_BATCH: usize = 64;

/// Alternating conditional-GAN training. Each batch performs
/// `disc_steps_per_gen_step` discriminator updates then one generator update;
/// after every epoch the generator is scored by validation CRPS.
pub fn train_gan(
    generator: Generator,
    discriminator: Discriminator,
    train: &WindowSet,
    valid: &WindowSet,
    config: &TrainConfig,
) -> Result<GanOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::TooShort("no training windows".into()));
    }
    let started = Instant::now();
    let mut trainer = GanTrainer::new(generator, discriminator, config)?;
    let mut rng = seeded(config.seed, stream::SHUFFLE);
    let probe_idx: Vec<usize> = (0..train.len().min(PROBE_BATCH)).collect();
    let probe = train.batch(&probe_idx);
    let probe_noise = trainer
        .generator
        .sample_noise(probe.len(), &mut seeded(config.seed, stream::DATA));
    let eval_seed = validation_seed(config);

    let mut report = TrainReport::new();
    let mut best = trainer.generator.clone();
    let mut since_best = 0;
    for epoch in 1..=config.max_epochs {
        let (mut g_total, mut d_total, mut real_total, mut fake_total) = (0.0, 0.0, 0.0, 0.0);
        let mut d_count = 0usize;
        let batches = shuffled_batches(train.len(), config.batch_size, &mut rng);
        let n_batches = batches.len();
        for idx in batches {
            let batch = train.batch(&idx);
            for _ in 0..config.disc_steps_per_gen_step {
                let step = trainer.discriminator_step(&batch)?;
                finite(step.loss, epoch, "discriminator loss")?;
                d_total += step.loss;
                real_total += step.mean_real_score;
                fake_total += step.mean_fake_score;
                d_count += 1;
                report.disc_updates += 1;
            }
            g_total += finite(trainer.generator_step(&batch)?, epoch, "generator loss")?;
            report.gen_updates += 1;
        }
        let validation = evaluate_probabilistic(
            &trainer.generator,
            valid,
            config.eval_samples_per_window,
            eval_seed,
            None,
        )?
        .crps_overall;
        let validation = finite(validation, epoch, "validation CRPS")?;
        let probe_value = finite(trainer.value(&probe, &probe_noise)?, epoch, "adversarial value")?;
        let improved = report.push(EpochRecord {
            epoch,
            loss: g_total / n_batches as f64,
            disc_loss: Some(d_total / d_count as f64),
            validation,
            mean_real_score: Some(real_total / d_count as f64),
            mean_fake_score: Some(fake_total / d_count as f64),
            probe_value: Some(probe_value),
        });
        if improved {
            best = trainer.generator.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                report.stopped_early = true;
                break;
            }
        }
    }
    if report.epochs.is_empty() {
        best = trainer.generator.clone();
    }
    report.wall_clock_seconds = started.elapsed().as_secs_f64();
    Ok(GanOutcome {
        generator: best,
        discriminator: trainer.discriminator,
        report,
    })
}

/// Validation MAE of a deterministic model in scaled units.
pub fn validation_mae(model: &DeterministicModel, valid: &WindowSet) -> Result<f64> {
    Ok(evaluate_point(model, valid, None)?.mae_overall)
}
