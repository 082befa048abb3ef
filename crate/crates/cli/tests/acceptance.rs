//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Criterion 10 runs only when `PROBCAST_EXCHANGE_RATE` names the
//! exchange-rate file and never gates.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use ndarray::Array2;
use probcast::checkpoint::load_model;
use probcast::dataset::write_csv;
use probcast::evaluation::sample_spread;
use probcast::models::{build_discriminator, DiscriminatorSpec};
use probcast::nn::Parameters;
use probcast::rng::seeded;
use probcast::search::GeneRange;
use probcast::synthetic::{multivariate_fixture, GaussianAr};
use probcast::{
    build_deterministic, build_generator_from_deterministic, chronological_split, crps_empirical, crps_gaussian,
    ga_search, load_csv, make_windows, DeterministicSpec, GaConfig, Generator, MetricsReport, SearchSpace, SplitSpec,
    TimeSeriesFrame, WindowSet,
};
use probcast_cli::commands::Prepared;
use probcast_cli::{cmd_gan, cmd_train_det, ComparisonReport, ExperimentConfig};
use rand::Rng;
use rand_distr::StandardNormal;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn timed(limit: Duration, f: impl FnOnce() -> Verdict) -> Verdict {
    let start = Instant::now();
    let v = f();
    let took = start.elapsed();
    let in_time = took <= limit;
    verdict(
        v.pass && in_time,
        format!("{}; {:.1}s (limit {}s)", v.detail, took.as_secs_f64(), limit.as_secs()),
    )
}

// 1 ---------------------------------------------------------------------

fn crps_oracle() -> Verdict {
    const TRIALS: usize = 100;
    let mut worst = 0.0f64;
    for x in [-2.0, -1.0, 0.0, 1.0, 2.0] {
        let exact = crps_gaussian(0.0, 1.0, x).unwrap();
        let mut errors: Vec<f64> = (0..TRIALS as u64)
            .map(|trial| {
                let mut rng = seeded(trial, 0);
                let draws: Vec<f64> = (0..10_000).map(|_| rng.sample(StandardNormal)).collect();
                (crps_empirical(&draws, x).unwrap() - exact).abs()
            })
            .collect();
        errors.sort_by(f64::total_cmp);
        let median = 0.5 * (errors[TRIALS / 2 - 1] + errors[TRIALS / 2]);
        worst = worst.max(median);
    }
    verdict(worst <= 0.02, format!("worst median |error| {worst:.2e} (tol 0.02)"))
}

// 2 ---------------------------------------------------------------------

fn crps_reduction() -> Verdict {
    let mut rng = seeded(2, 0);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = 2 * rng.random_range(1..100);
        let c: f64 = rng.random_range(-1e3..1e3);
        let x: f64 = rng.random_range(-1e3..1e3);
        let err = (crps_empirical(&vec![c; n], x).unwrap() - (c - x).abs()).abs();
        worst = worst.max(err);
    }
    verdict(worst <= 1e-12, format!("max deviation from |c - x| {worst:.1e} (tol 1e-12)"))
}

// 3 ---------------------------------------------------------------------

/// Dyadic rational with few bits, so sums and differences of two are exact.
fn dyadic(rng: &mut impl Rng) -> f64 {
    rng.random_range(-4096i64..4096) as f64 / 64.0
}

fn crps_equivariance() -> Verdict {
    let mut rng = seeded(3, 0);
    let mut translation_exact = true;
    let mut worst_scale = 0.0f64;
    for _ in 0..1000 {
        let n = 2 * rng.random_range(1..50);
        let s: Vec<f64> = (0..n).map(|_| dyadic(&mut rng)).collect();
        let x = dyadic(&mut rng);
        let c = dyadic(&mut rng);
        let base = crps_empirical(&s, x).unwrap();
        let shifted: Vec<f64> = s.iter().map(|v| v + c).collect();
        translation_exact &= crps_empirical(&shifted, x + c).unwrap() == base;

        let s: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let x: f64 = rng.random_range(-10.0..10.0);
        let a: f64 = rng.random_range(0.01..100.0);
        let scaled: Vec<f64> = s.iter().map(|v| a * v).collect();
        let lhs = crps_empirical(&scaled, a * x).unwrap();
        let rhs = a * crps_empirical(&s, x).unwrap();
        let magnitude = s.iter().fold(x.abs(), |m, v| m.max(v.abs()));
        worst_scale = worst_scale.max((lhs - rhs).abs() / (a * magnitude));
    }
    verdict(
        translation_exact && worst_scale <= 1e-12,
        format!("translation exact: {translation_exact}; worst relative scale error {worst_scale:.1e} (tol 1e-12)"),
    )
}

// 4 ---------------------------------------------------------------------

const GW: usize = 3;
const GF: usize = 2;
const GCELLS: usize = 4;
const STEP: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;

fn random(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

/// Number of the 20 sampled coordinates whose analytic and central-difference
/// derivatives disagree.
fn mismatches<M: Parameters>(model: &mut M, grads: &M, loss: impl Fn(&M) -> f64, rng: &mut impl Rng) -> usize {
    let sizes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut bad = 0;
    for _ in 0..20 {
        let mut k = rng.random_range(0..total);
        let mut t = 0;
        while k >= sizes[t] {
            k -= sizes[t];
            t += 1;
        }
        let analytic = grads.params()[t].as_slice().unwrap()[k];
        let original = model.params()[t].as_slice().unwrap()[k];
        model.params_mut()[t].as_slice_mut().unwrap()[k] = original + STEP;
        let plus = loss(model);
        model.params_mut()[t].as_slice_mut().unwrap()[k] = original - STEP;
        let minus = loss(model);
        model.params_mut()[t].as_slice_mut().unwrap()[k] = original;
        let numeric = (plus - minus) / (2.0 * STEP);
        if (analytic - numeric).abs() > REL_TOL * analytic.abs().max(numeric.abs()) + 1e-9 {
            bad += 1;
        }
    }
    bad
}

fn gradients() -> Verdict {
    let mut rng = seeded(4, 0);
    let steps: Vec<Array2<f64>> = (0..GW).map(|_| random(5, GF, &mut rng)).collect();
    let weights = random(5, GF, &mut rng);

    let mut det = build_deterministic(&DeterministicSpec::new(GW, 1, GCELLS, GF), 1).unwrap();
    let mut g = det.zeros_like();
    let (_, cache) = det.forward(&steps).unwrap();
    det.backward(&cache, &weights, &mut g);
    let det_bad = mismatches(&mut det, &g, |m| (m.predict(&steps).unwrap() * &weights).sum(), &mut rng);

    let mut gen = build_generator_from_deterministic(&det, 3, 2).unwrap();
    let noise = random(5, 3, &mut rng);
    let mut g = gen.zeros_like();
    let (_, cache) = gen.forward(&steps, &noise).unwrap();
    gen.backward(&cache, &weights, &mut g);
    let gen_bad = mismatches(&mut gen, &g, |m| (m.generate(&steps, &noise).unwrap() * &weights).sum(), &mut rng);

    let mut disc = build_discriminator(&DiscriminatorSpec::new(GW, GF, 1, GCELLS), 3).unwrap();
    let cands = random(5, GF, &mut rng);
    let dw = random(5, 1, &mut rng);
    let mut g = disc.zeros_like();
    let (_, cache) = disc.forward(&steps, &cands).unwrap();
    disc.backward(&cache, &dw, &mut g);
    let disc_bad = mismatches(&mut disc, &g, |m| (m.logits(&steps, &cands).unwrap() * &dw).sum(), &mut rng);

    verdict(
        det_bad + gen_bad + disc_bad == 0,
        format!("mismatched coordinates of 20: deterministic {det_bad}, generator {gen_bad}, discriminator {disc_bad}"),
    )
}

// 5, 6, 8: full pipeline through the library commands ---------------------

/// Architecture and training settings shared by the synthetic tasks.
fn synthetic_config(data: &Path, out: &Path, seed: u64) -> ExperimentConfig {
    let text = format!(
        r#"
seed = {seed}
out = "{out}"
evaluation_samples = 200

[dataset]
path = "{data}"

[split]
train_frac = 0.75
valid_frac = 0.05
test_frac = 0.20

[deterministic.spec]
window_size = 8
gru_layers = 1
gru_cells = 16

[adversarial.spec]
noise_size = 4
disc_gru_layers = 1
disc_gru_cells = 32

[training]
batch_size = 64
max_epochs = 100
patience = 10
det_learning_rate = 3e-3
gen_learning_rate = 2e-3
disc_learning_rate = 2e-3
eval_samples_per_window = 200
"#,
        out = out.display(),
        data = data.display()
    );
    ExperimentConfig::from_toml(&text, Path::new("."), &[]).unwrap()
}

/// Adversarial phase: a fixed 60 epochs, keeping the best validation CRPS.
fn gan_phase(mut config: ExperimentConfig) -> ExperimentConfig {
    config.training.max_epochs = 60;
    config.training.patience = 60;
    config
}

struct Pipeline {
    det: MetricsReport,
    comparison: ComparisonReport,
    config: ExperimentConfig,
    gan_dir: PathBuf,
}

fn run_pipeline(frame: &TimeSeriesFrame, dir: &Path, seed: u64) -> anyhow::Result<Pipeline> {
    let data = dir.join("series.csv");
    write_csv(frame, &data)?;
    let config = synthetic_config(&data, &dir.join("run"), seed);
    let det_dir = cmd_train_det(&config)?;
    let det: MetricsReport = probcast::io::read_json(&det_dir.join("metrics.json"))?;
    let config = gan_phase(config);
    let gan_dir = cmd_gan(&config, &det_dir.join("checkpoint.json"))?;
    let comparison = probcast::io::read_json(&gan_dir.join("metrics.json"))?;
    Ok(Pipeline {
        det,
        comparison,
        config,
        gan_dir,
    })
}

/// Raw (unscaled) test windows of the configured split.
fn raw_test_windows(frame: &TimeSeriesFrame, config: &ExperimentConfig, w: usize) -> WindowSet {
    let splits = chronological_split(frame, &config.split).unwrap();
    WindowSet::new(&splits.test, w).unwrap()
}

fn synthetic_recovery() -> Verdict {
    let law = GaussianAr::ar1(0.8, 0.5);
    let frame = law.simulate(5000, 5);
    let dir = tempfile::tempdir().unwrap();
    let p = match run_pipeline(&frame, dir.path(), 5) {
        Ok(p) => p,
        Err(e) => return verdict(false, format!("pipeline failed: {e:#}")),
    };
    let mae_optimum = 0.5 * (2.0 / std::f64::consts::PI).sqrt();
    // oracle: the true conditional law scored on every test point
    let test = raw_test_windows(&frame, &p.config, 8);
    let oracle = (0..test.len())
        .map(|i| {
            let last = test.condition(i)[[7, 0]];
            crps_gaussian(law.conditional_mean(last), law.conditional_scale(last), test.target(i)[0]).unwrap()
        })
        .sum::<f64>()
        / test.len() as f64;
    let det_mae = p.det.mae_overall;
    let crps = p.comparison.probcast.crps_overall;
    let a = (det_mae - mae_optimum).abs() <= 0.15 * mae_optimum;
    let b = (crps - oracle).abs() <= 0.25 * oracle;
    let c = crps < det_mae;
    verdict(
        a && b && c,
        format!(
            "(a) det MAE {det_mae:.4} vs optimum {mae_optimum:.4} [{}]; (b) CRPS* {crps:.4} vs oracle {oracle:.4} [{}]; (c) CRPS* < MAE [{}]",
            ok(a),
            ok(b),
            ok(c)
        ),
    )
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = mid;
        }
        i = j + 1;
    }
    r
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&ranks(a), &ranks(b))
}

fn heteroscedastic() -> Verdict {
    let law = GaussianAr::heteroscedastic(0.3, 0.05, 0.7);
    let frame = law.simulate(5000, 6);
    let dir = tempfile::tempdir().unwrap();
    let p = match run_pipeline(&frame, dir.path(), 6) {
        Ok(p) => p,
        Err(e) => return verdict(false, format!("pipeline failed: {e:#}")),
    };
    let (generator, _) = load_model::<Generator>(p.gan_dir.join("generator.json")).unwrap();
    let (_, _, scaled_test) = Prepared::load(&p.config).unwrap().windows(8).unwrap();
    let spread = sample_spread(&generator, &scaled_test, 200, 6).unwrap();
    let raw = raw_test_windows(&frame, &p.config, 8);
    let truth: Vec<f64> = (0..raw.len())
        .map(|i| law.conditional_scale(raw.condition(i)[[7, 0]]))
        .collect();
    let rho = spearman(&spread.column(0).to_vec(), &truth);
    verdict(rho > 0.3, format!("Spearman rho {rho:.3} over {} test windows (need > 0.3)", truth.len()))
}

fn pipeline_determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("fixture.csv");
    write_csv(&multivariate_fixture(600, 3, 8), &data).unwrap();
    let mut config = synthetic_config(&data, &dir.path().join("a"), 8);
    config.training.max_epochs = 5;
    config.evaluation_samples = 50;
    let det_dir = cmd_train_det(&config).unwrap();
    let ckpt = det_dir.join("checkpoint.json");
    let first = cmd_gan(&config, &ckpt).unwrap();
    config.out = dir.path().join("b");
    let second = cmd_gan(&config, &ckpt).unwrap();
    let a = std::fs::read(first.join("metrics.json")).unwrap();
    let b = std::fs::read(second.join("metrics.json")).unwrap();
    verdict(a == b, format!("metrics.json identical across runs: {} ({} bytes)", a == b, a.len()))
}

// 7 ---------------------------------------------------------------------

fn ga_correctness() -> Verdict {
    let space = SearchSpace::new(vec![GeneRange::new("window_size", 1, 64)]).unwrap();
    let optimum = (1..=64i64).min_by_key(|w| (w - 12).abs()).unwrap();
    let mut hits = 0;
    let mut monotone = true;
    for seed in 0..100 {
        let config = GaConfig {
            population_size: 20,
            generations: 30,
            seed,
            ..GaConfig::default()
        };
        let out = ga_search(&space, |g, _| (g[0] - 12).abs() as f64, &config).unwrap();
        hits += usize::from(out.best.genome == vec![optimum]);
        monotone &= out.history.best_trajectory().windows(2).all(|p| p[1] <= p[0]);
    }
    verdict(
        hits >= 95 && monotone,
        format!("optimum found in {hits}/100 seeds (need 95); best trajectory monotone: {monotone}"),
    )
}

// 9 ---------------------------------------------------------------------

fn split_and_windows() -> Verdict {
    let frame = TimeSeriesFrame::from_values(Array2::zeros((7588, 1))).unwrap();
    let s = chronological_split(&frame, &SplitSpec::default()).unwrap();
    let lengths = (s.train.len(), s.valid.len(), s.test.len());
    let mut rng = seeded(9, 0);
    let mut window_errors = 0;
    for _ in 0..50 {
        let w = rng.random_range(1..100);
        let t = rng.random_range(w + 1..w + 500);
        let frame = TimeSeriesFrame::from_values(Array2::zeros((t, 2))).unwrap();
        window_errors += usize::from(make_windows(&frame, w).unwrap().len() != t - w);
    }
    verdict(
        lengths == (5691, 379, 1518) && window_errors == 0,
        format!("split {lengths:?} (expect (5691, 379, 1518)); window count errors {window_errors}/50"),
    )
}

// 10 --------------------------------------------------------------------

const EXCHANGE_VAR: &str = "PROBCAST_EXCHANGE_RATE";

fn exchange_rate(path: &Path) -> String {
    let config_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/exchange_rate.toml");
    let out = tempfile::tempdir().unwrap();
    let run = || -> anyhow::Result<String> {
        let mut config = ExperimentConfig::load(&config_path, &[])?;
        config.dataset.path = path.to_path_buf();
        config.out = out.path().to_path_buf();
        let frame = load_csv(path, false)?;
        let det_dir = cmd_train_det(&config)?;
        let gan_dir = cmd_gan(&config, &det_dir.join("checkpoint.json"))?;
        let r: ComparisonReport = probcast::io::read_json(&gan_dir.join("metrics.json"))?;
        Ok(format!(
            "T={} f={}: deterministic MAE {:.3e} (published 1.04e-2), CRPS* {:.3e} (published 8.66e-3), CRPS* <= MAE: {}",
            frame.len(),
            frame.n_features(),
            r.deterministic.mae_overall,
            r.probcast.crps_overall,
            r.probcast.crps_overall <= r.deterministic.mae_overall
        ))
    };
    run().unwrap_or_else(|e| format!("run failed: {e:#}"))
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "FAIL"
    }
}

fn main() -> ExitCode {
    type Criterion = (u32, &'static str, u64, fn() -> Verdict);
    let criteria: [Criterion; 9] = [
        (1, "CRPS matches the Gaussian closed form", 10, crps_oracle),
        (2, "CRPS of a degenerate set is the absolute error", 1, crps_reduction),
        (3, "CRPS translation invariance and scale equivariance", 60, crps_equivariance),
        (4, "finite-difference gradient checks", 30, gradients),
        (5, "synthetic AR(1) recovery", 900, synthetic_recovery),
        (6, "heteroscedastic spread tracks the true scale", 1200, heteroscedastic),
        (7, "GA finds the optimum with monotone elitism", 5, ga_correctness),
        (8, "cmd_gan metrics are byte-identical per seed", 600, pipeline_determinism),
        (9, "split lengths and window counts", 60, split_and_windows),
    ];
    let only: Option<Vec<u32>> = std::env::var("PROBCAST_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = 0;
    for (id, name, limit, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let v = match std::panic::catch_unwind(|| timed(Duration::from_secs(limit), run)) {
            Ok(v) => v,
            Err(_) => verdict(false, "panicked".into()),
        };
        failed += usize::from(!v.pass);
        println!("{} {id:>2} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    if only.as_ref().is_none_or(|o| o.contains(&10)) {
        match std::env::var_os(EXCHANGE_VAR) {
            Some(path) => println!("INFO 10 exchange-rate reproduction (not gating): {}", exchange_rate(Path::new(&path))),
            None => println!("SKIP 10 exchange-rate reproduction (not gating): set {EXCHANGE_VAR} to the data file"),
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
