use ndarray::Array2;
use probcast::search::{
    ga_resume, genome_seed, ArchitectureSearchSpace, DeterministicFitness, DiscriminatorFitness, GeneRange,
    SearchHistory,
};
use probcast::models::ConversionOptions;
use probcast::synthetic::GaussianAr;
use probcast::{
    apply_scaler, build_deterministic, chronological_split, fit_scaler, ga_search, DeterministicSpec, GaConfig,
    SearchSpace, SplitSpec, TimeSeriesFrame, TrainConfig,
};

fn line_space() -> SearchSpace {
    SearchSpace::new(vec![GeneRange::new("window_size", 1, 64)]).unwrap()
}

fn distance(genome: &[i64], _seed: u64) -> f64 {
    (genome[0] - 12).abs() as f64
}

fn line_config(seed: u64) -> GaConfig {
    GaConfig {
        population_size: 20,
        generations: 30,
        seed,
        ..GaConfig::default()
    }
}

#[test]
fn finds_the_enumerated_optimum() {
    let space = line_space();
    let brute = (1..=64).min_by_key(|w| (w - 12i64).abs()).unwrap();
    for seed in 0..10 {
        let out = ga_search(&space, distance, &line_config(seed)).unwrap();
        assert_eq!(out.best.genome, vec![brute], "seed {seed}");
        assert_eq!(out.best.fitness, Some(0.0));
    }
}

#[test]
fn elitism_makes_best_fitness_monotone() {
    let space = SearchSpace::new(vec![GeneRange::new("a", -20, 20), GeneRange::new("b", 0, 9)]).unwrap();
    let bumpy = |g: &[i64], _: u64| ((g[0] * 7 + g[1] * 13) % 11) as f64 + (g[0] - 3).abs() as f64 * 0.1;
    for seed in 0..20 {
        let out = ga_search(&space, bumpy, &GaConfig { seed, ..GaConfig::default() }).unwrap();
        let t = out.history.best_trajectory();
        assert!(t.windows(2).all(|p| p[1] <= p[0]), "seed {seed}: {t:?}");
    }
}

#[test]
fn evaluated_genomes_respect_bounds_and_budget() {
    let space = SearchSpace::new(vec![
        GeneRange::new("a", 1, 3),
        GeneRange::new("b", 10, 12),
        GeneRange::new("c", -5, 5),
    ])
    .unwrap();
    let config = GaConfig {
        mutation_rate: 0.9,
        generations: 15,
        ..GaConfig::default()
    };
    let out = ga_search(&space, |g, _| g.iter().sum::<i64>() as f64, &config).unwrap();
    for gen in &out.history.generations {
        for ind in &gen.individuals {
            assert!(space.contains(&ind.genome), "{:?}", ind.genome);
            assert!(ind.fitness.is_some());
        }
    }
    assert!(out.history.evaluations() <= config.population_size * config.generations);
    assert_eq!(out.best.genome, vec![1, 10, -5]);
}

#[test]
fn search_is_reproducible() {
    let space = line_space();
    let a = ga_search(&space, distance, &line_config(42)).unwrap();
    let b = ga_search(&space, distance, &line_config(42)).unwrap();
    assert_eq!(a.history, b.history);
    let c = ga_search(&space, distance, &line_config(43)).unwrap();
    assert_ne!(a.history, c.history);
}

#[test]
fn fitness_receives_genome_derived_seeds() {
    let space = line_space();
    let out = ga_search(&space, |g, s| (s % 1000) as f64 + g[0] as f64 * 0.0, &line_config(1)).unwrap();
    for gen in &out.history.generations {
        for ind in &gen.individuals {
            assert_eq!(ind.fitness, Some((genome_seed(1, &ind.genome) % 1000) as f64));
        }
    }
}

#[test]
fn resuming_reproduces_an_uninterrupted_run() {
    let space = line_space();
    let full = ga_search(&space, distance, &line_config(5)).unwrap();
    let partial = ga_search(&space, distance, &GaConfig { generations: 12, ..line_config(5) }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("history.json");
    partial.history.save(&path).unwrap();
    let resumed = ga_resume(&space, distance, &line_config(5), SearchHistory::load(&path).unwrap()).unwrap();
    assert_eq!(resumed.history, full.history);
    assert_eq!(resumed.best, full.best);
}

#[test]
fn resuming_over_a_different_space_fails() {
    let full = ga_search(&line_space(), distance, &line_config(5)).unwrap();
    let other = SearchSpace::new(vec![GeneRange::new("window_size", 1, 65)]).unwrap();
    assert!(ga_resume(&other, distance, &line_config(5), full.history).is_err());
}

fn scaled(frame: &TimeSeriesFrame) -> (TimeSeriesFrame, TimeSeriesFrame) {
    let s = chronological_split(frame, &SplitSpec::default()).unwrap();
    let scaler = fit_scaler(&s.train);
    (apply_scaler(&s.train, &scaler).unwrap(), apply_scaler(&s.valid, &scaler).unwrap())
}

fn short_training() -> TrainConfig {
    TrainConfig {
        max_epochs: 30,
        det_learning_rate: 1e-2,
        eval_samples_per_window: 20,
        ..TrainConfig::default()
    }
}

#[test]
fn constant_series_scores_near_zero_for_any_genome() {
    let frame = TimeSeriesFrame::from_values(Array2::from_elem((300, 1), -2.0)).unwrap();
    let (train, valid) = scaled(&frame);
    let space = ArchitectureSearchSpace {
        window_size: (1, 8),
        gru_cells: (1, 8),
        gru_layers: (1, 2),
        ..ArchitectureSearchSpace::default()
    };
    let ctx = DeterministicFitness {
        space: &space,
        train: &train,
        valid: &valid,
        config: short_training(),
    };
    for genome in [[1, 1, 1], [8, 2, 8], [4, 1, 3]] {
        let f = ctx.evaluate(&genome, 3).unwrap();
        assert!(f < 0.05, "{genome:?}: {f}");
    }
    assert!(matches!(
        ctx.evaluate(&[9, 1, 1], 3),
        Err(probcast::Error::InvalidSpace(_))
    ));
}

#[test]
fn discriminator_fitness_is_seeded() {
    let frame = GaussianAr::ar1(0.8, 0.5).simulate(400, 1);
    let (train, valid) = scaled(&frame);
    let space = ArchitectureSearchSpace::default();
    let det = build_deterministic(&DeterministicSpec::new(4, 1, 6, 1), 2).unwrap();
    let ctx = DiscriminatorFitness {
        space: &space,
        deterministic: &det,
        conversion: ConversionOptions::default(),
        train: &train,
        valid: &valid,
        config: TrainConfig {
            max_epochs: 2,
            ..short_training()
        },
    };
    let a = ctx.evaluate(&[3, 1, 5], 11).unwrap();
    let b = ctx.evaluate(&[3, 1, 5], 11).unwrap();
    assert!(a.is_finite());
    assert_eq!(a, b);
}
