//! The pipeline commands. Each returns its primary output path or report;
//! `main` turns errors into one-line diagnostics.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use ndarray::{Array2, Axis};
use probcast::checkpoint::{load_model, save_model, ModelHandle};
use probcast::dataset::parse_csv;
use probcast::evaluation::Degenerate;
use probcast::models::{build_discriminator, convert_deterministic, GeneratorSpec};
use probcast::rng::{derive_seed, seeded, stream};
use probcast::search::{ga_search, DeterministicFitness, DiscriminatorFitness, SearchOutcome, SearchSpace};
use probcast::{
    apply_scaler, build_deterministic, chronological_split, evaluate_point, evaluate_probabilistic, fit_scaler,
    load_csv, train_deterministic, train_gan, DeterministicModel, DeterministicSpec, Error, GaConfig, MetricsReport,
    ScalerState, TimeSeriesFrame, WindowSet,
};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::run::{PhaseDir, RunLock};

/// Salts for the per-purpose seeds derived from the experiment seed.
mod salt {
    pub const DETERMINISTIC: u64 = 101;
    pub const GENERATOR: u64 = 102;
    pub const DISCRIMINATOR: u64 = 103;
    pub const TEST: u64 = 104;
}

/// Scaled splits of the configured dataset.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub feature_names: Vec<String>,
    pub scaler: ScalerState,
    pub train: TimeSeriesFrame,
    pub valid: TimeSeriesFrame,
    pub test: TimeSeriesFrame,
}

impl Prepared {
    pub fn load(config: &ExperimentConfig) -> Result<Self> {
        let path = &config.dataset.path;
        let frame = load_csv(path, config.dataset.has_header)
            .with_context(|| format!("cannot read dataset {}", path.display()))?;
        let splits = chronological_split(&frame, &config.split)?;
        let scaler = fit_scaler(&splits.train);
        Ok(Self {
            feature_names: frame.feature_names().to_vec(),
            train: apply_scaler(&splits.train, &scaler)?,
            valid: apply_scaler(&splits.valid, &scaler)?,
            test: apply_scaler(&splits.test, &scaler)?,
            scaler,
        })
    }

    pub fn n_features(&self) -> usize {
        self.train.n_features()
    }

    /// Errors unless every split yields at least one window of size `w`.
    pub fn check_window(&self, w: usize) -> Result<()> {
        for (name, split) in [("train", &self.train), ("valid", &self.valid), ("test", &self.test)] {
            ensure!(
                w < split.len(),
                "window_size {w} leaves no windows in the {name} split ({} rows)",
                split.len()
            );
        }
        Ok(())
    }

    pub fn windows(&self, w: usize) -> Result<(WindowSet, WindowSet, WindowSet)> {
        Ok((
            WindowSet::new(&self.train, w)?,
            WindowSet::new(&self.valid, w)?,
            WindowSet::new(&self.test, w)?,
        ))
    }
}

fn run_search<F>(space: &SearchSpace, ga: &GaConfig, fitness: F) -> Result<SearchOutcome>
where
    F: Fn(&[i64], u64) -> probcast::Result<f64> + Sync,
{
    let outcome = ga_search(
        space,
        |genome, seed| match fitness(genome, seed) {
            Ok(v) => v,
            Err(e) => {
                eprintln!("warning: genome {genome:?} scored +inf: {e}");
                f64::INFINITY
            }
        },
        ga,
    )?;
    if outcome.budget_exhausted {
        eprintln!("warning: fitness budget exhausted; using the best genome so far");
    }
    ensure!(
        outcome.best.fitness.is_some_and(f64::is_finite),
        "search found no trainable architecture"
    );
    Ok(outcome)
}

/// Fits (or searches for, then fits) the deterministic forecaster. Writes
/// `<out>/det/{checkpoint,scaler,train_report,metrics}.json`, plus
/// `search_history.json` when searching.
pub fn cmd_train_det(config: &ExperimentConfig) -> Result<PathBuf> {
    config.validate()?;
    let data = Prepared::load(config)?;
    let f = data.n_features();
    if let Some(spec) = config.explicit_deterministic(f) {
        spec.validate()?;
        data.check_window(spec.window_size)?;
    }
    let _lock = RunLock::acquire(&config.out)?;
    let mut dir = PhaseDir::start(config.out.join("det"), "train-det", config)?;

    let spec = match config.explicit_deterministic(f) {
        Some(spec) => spec,
        None => {
            let space = config.search_space();
            let ctx = DeterministicFitness {
                space: &space,
                train: &data.train,
                valid: &data.valid,
                config: config.search_training(),
            };
            eprintln!("searching deterministic architectures");
            let outcome = run_search(&space.deterministic()?, &config.ga, |g, s| ctx.evaluate(g, s))?;
            outcome.history.save(dir.artifact("search_history", "search_history.json"))?;
            space.decode_deterministic(&outcome.best.genome, f)?
        }
    };
    data.check_window(spec.window_size)?;
    let (train, valid, test) = data.windows(spec.window_size)?;
    eprintln!(
        "training deterministic model (w={}, layers={}, cells={})",
        spec.window_size, spec.gru_layers, spec.gru_cells
    );
    let model = build_deterministic(&spec, derive_seed(config.seed, salt::DETERMINISTIC))?;
    let (model, report) = train_deterministic(model, &train, &valid, &config.training)?;

    save_model(&model, Some(&data.scaler), dir.checkpoint("deterministic", "checkpoint.json"))?;
    data.scaler.save(dir.artifact("scaler", "scaler.json"))?;
    report.save(dir.report("train", "train_report.json"))?;
    let metrics = evaluate_point(&model, &test, Some(&data.scaler))?;
    probcast::io::write_json(&dir.report("metrics", "metrics.json"), &metrics)?;
    dir.finish()
}

/// Test-set scores of a deterministic model and its adversarial successor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub deterministic: MetricsReport,
    pub probcast: MetricsReport,
}

fn mismatch(message: String) -> anyhow::Error {
    Error::CheckpointMismatch(message).into()
}

/// Converts a deterministic checkpoint into a generator and trains it
/// adversarially. Writes `<out>/gan/{generator,discriminator,train_report,
/// metrics}.json`, plus `search_history.json` when searching.
pub fn cmd_gan(config: &ExperimentConfig, det_checkpoint: &Path) -> Result<PathBuf> {
    config.validate()?;
    ensure!(
        det_checkpoint.is_file(),
        "checkpoint not found: {}",
        det_checkpoint.display()
    );
    let (det, stored_scaler) = load_model::<DeterministicModel>(det_checkpoint)
        .with_context(|| format!("cannot load {}", det_checkpoint.display()))?;
    let data = Prepared::load(config)?;
    let base = det.spec().clone();
    let f = data.n_features();
    if base.feature_count != f {
        return Err(mismatch(format!(
            "model has {} features, dataset has {f}",
            base.feature_count
        )));
    }
    if let Some(expected) = config.explicit_deterministic(f) {
        if expected != base {
            return Err(mismatch(format!(
                "checkpoint spec {base:?} differs from configured {expected:?}"
            )));
        }
    }
    if let Some(s) = &stored_scaler {
        if *s != data.scaler {
            return Err(mismatch("stored scaler does not match the configured dataset and split".into()));
        }
    }
    data.check_window(base.window_size)?;
    if let Some((g, d)) = config.explicit_adversarial(&base) {
        g.validate()?;
        d.validate()?;
    }
    let _lock = RunLock::acquire(&config.out)?;
    let mut dir = PhaseDir::start(config.out.join("gan"), "gan", config)?;

    let (gen_spec, disc_spec) = match config.explicit_adversarial(&base) {
        Some(specs) => specs,
        None => {
            let space = config.search_space();
            let ctx = DiscriminatorFitness {
                space: &space,
                deterministic: &det,
                conversion: config.conversion(),
                train: &data.train,
                valid: &data.valid,
                config: config.search_training(),
            };
            eprintln!("searching discriminator architectures");
            let outcome = run_search(&space.discriminator()?, &config.ga, |g, s| ctx.evaluate(g, s))?;
            outcome.history.save(dir.artifact("search_history", "search_history.json"))?;
            let (noise, disc) = space.decode_discriminator(&outcome.best.genome, &base)?;
            (GeneratorSpec::from_base(base.clone(), noise), disc)
        }
    };
    let (train, valid, test) = data.windows(base.window_size)?;
    let generator = convert_deterministic(
        &det,
        &gen_spec,
        derive_seed(config.seed, salt::GENERATOR),
        config.conversion(),
    )?;
    let discriminator = build_discriminator(&disc_spec, derive_seed(config.seed, salt::DISCRIMINATOR))?;
    eprintln!(
        "adversarial training (noise={}, disc layers={}, disc cells={})",
        gen_spec.noise_size, disc_spec.gru_layers, disc_spec.gru_cells
    );
    let outcome = train_gan(generator, discriminator, &train, &valid, &config.training)?;

    save_model(&outcome.generator, Some(&data.scaler), dir.checkpoint("generator", "generator.json"))?;
    save_model(
        &outcome.discriminator,
        Some(&data.scaler),
        dir.checkpoint("discriminator", "discriminator.json"),
    )?;
    outcome.report.save(dir.report("train", "train_report.json"))?;
    let report = ComparisonReport {
        deterministic: evaluate_point(&det, &test, Some(&data.scaler))?,
        probcast: evaluate_probabilistic(
            &outcome.generator,
            &test,
            config.evaluation_samples,
            derive_seed(config.seed, salt::TEST),
            Some(&data.scaler),
        )?,
    };
    probcast::io::write_json(&dir.report("metrics", "metrics.json"), &report)?;
    dir.finish()
}

/// Scores a deterministic or generator checkpoint on the configured test split.
pub fn cmd_evaluate(config: &ExperimentConfig, checkpoint: &Path, n_samples: Option<usize>) -> Result<MetricsReport> {
    config.validate()?;
    ensure!(checkpoint.is_file(), "checkpoint not found: {}", checkpoint.display());
    let (model, stored) = ModelHandle::load(checkpoint).with_context(|| format!("cannot load {}", checkpoint.display()))?;
    let data = Prepared::load(config)?;
    let scaler = stored.unwrap_or_else(|| data.scaler.clone());
    let test_raw = probcast::invert_scaler(&data.test, &data.scaler)?;
    let test_frame = apply_scaler(&test_raw, &scaler)?;
    let n = n_samples.unwrap_or(config.evaluation_samples);
    let seed = derive_seed(config.seed, salt::TEST);
    match model {
        ModelHandle::Deterministic(m) => {
            let windows = checked_windows(&test_frame, m.spec())?;
            Ok(evaluate_point(&m, &windows, Some(&scaler))?)
        }
        ModelHandle::Generator(g) => {
            let windows = checked_windows(&test_frame, &g.spec().base)?;
            Ok(evaluate_probabilistic(&g, &windows, n, seed, Some(&scaler))?)
        }
        ModelHandle::Discriminator(_) => bail!("cannot evaluate a discriminator checkpoint"),
    }
}

fn checked_windows(frame: &TimeSeriesFrame, spec: &DeterministicSpec) -> Result<WindowSet> {
    if frame.n_features() != spec.feature_count {
        return Err(mismatch(format!(
            "model has {} features, dataset has {}",
            spec.feature_count,
            frame.n_features()
        )));
    }
    Ok(WindowSet::new(frame, spec.window_size)?)
}

#[derive(Debug, Clone)]
pub struct ForecastRequest {
    pub checkpoint: PathBuf,
    /// CSV of consecutive observations in original units.
    pub windows: PathBuf,
    pub has_header: bool,
    pub n: usize,
    /// Rows between consecutive window starts; defaults to the window size.
    pub stride: Option<usize>,
    pub seed: u64,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForecastSummary {
    pub windows: usize,
    pub rows: usize,
}

fn write_samples(path: &Path, names: &[String], values: Array2<f64>) -> Result<()> {
    if values.nrows() == 0 {
        std::fs::write(path, format!("{}\n", names.join(",")))
            .with_context(|| format!("cannot write {}", path.display()))?;
        return Ok(());
    }
    probcast::dataset::write_csv(&TimeSeriesFrame::new(values, names.to_vec())?, path)?;
    Ok(())
}

fn default_names(f: usize) -> Vec<String> {
    (0..f).map(|j| format!("f{j}")).collect()
}

/// Draws `n` forecasts per window of the source file and writes them, in
/// original units, with `n` consecutive rows per window.
pub fn cmd_forecast(req: &ForecastRequest) -> Result<ForecastSummary> {
    ensure!(req.n >= 1, "n must be at least 1");
    ensure!(req.checkpoint.is_file(), "checkpoint not found: {}", req.checkpoint.display());
    let (model, scaler) =
        ModelHandle::load(&req.checkpoint).with_context(|| format!("cannot load {}", req.checkpoint.display()))?;
    let spec = match &model {
        ModelHandle::Deterministic(m) => m.spec().clone(),
        ModelHandle::Generator(g) => g.spec().base.clone(),
        ModelHandle::Discriminator(_) => bail!("cannot forecast with a discriminator checkpoint"),
    };
    let (w, f) = (spec.window_size, spec.feature_count);
    let file = std::fs::File::open(&req.windows)
        .with_context(|| format!("window source not found: {}", req.windows.display()))?;
    let source = match parse_csv(file, req.has_header) {
        Ok(frame) => frame,
        Err(Error::EmptyInput(_)) => {
            eprintln!("warning: window source {} is empty; writing no forecasts", req.windows.display());
            write_samples(&req.out, &default_names(f), Array2::zeros((0, f)))?;
            return Ok(ForecastSummary { windows: 0, rows: 0 });
        }
        Err(e) => return Err(e).with_context(|| format!("cannot read {}", req.windows.display())),
    };
    if source.n_features() != f {
        return Err(Error::shape(format!("{f} features"), source.n_features()).into());
    }
    if source.len() < w {
        return Err(Error::shape(format!("at least {w} rows (one window)"), source.len()).into());
    }
    let names = if req.has_header {
        source.feature_names().to_vec()
    } else {
        default_names(f)
    };
    let scaler = scaler.unwrap_or_else(|| {
        eprintln!("warning: checkpoint has no scaler; treating inputs as already scaled");
        ScalerState::identity(f)
    });
    let stride = req.stride.unwrap_or(w);
    ensure!(stride >= 1, "stride must be at least 1");
    let scaled = scaler.transform(source.values())?;
    let starts: Vec<usize> = (0..=source.len() - w).step_by(stride).collect();
    let used = starts.last().map_or(0, |s| s + w);
    if used < source.len() {
        eprintln!("warning: ignoring {} trailing rows that do not fill a window", source.len() - used);
    }
    let steps: Vec<Array2<f64>> = (0..w)
        .map(|t| scaled.select(Axis(0), &starts.iter().map(|s| s + t).collect::<Vec<_>>()))
        .collect();
    let mut rng = seeded(req.seed, stream::NOISE);
    let draws = match &model {
        ModelHandle::Generator(g) => g.sample_batch(&steps, req.n, &mut rng)?,
        ModelHandle::Deterministic(m) => {
            use probcast::evaluation::ProbabilisticForecaster;
            Degenerate(m).draw(&steps, req.n, &mut rng)?
        }
        ModelHandle::Discriminator(_) => unreachable!("rejected above"),
    };
    let draws = scaler.inverse(draws.view())?;
    let rows = draws.nrows();
    write_samples(&req.out, &names, draws)?;
    Ok(ForecastSummary {
        windows: starts.len(),
        rows,
    })
}
