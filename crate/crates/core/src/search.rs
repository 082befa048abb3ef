//! Genetic search over integer architecture hyperparameters.
//!
//! Phase one searches the deterministic forecaster (window, GRU layers,
//! GRU cells) by validation MAE. Phase two freezes that topology and
//! searches the noise size and discriminator GRU shape by validation CRPS.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{TimeSeriesFrame, WindowSet};
use crate::error::{Error, Result};
use crate::models::{
    build_deterministic, build_discriminator, convert_deterministic, ConversionOptions, DeterministicModel,
    DeterministicSpec, DiscriminatorSpec, GeneratorSpec,
};
use crate::rng::{derive_seed, seeded, stream};
use crate::training::{train_deterministic, train_gan, TrainConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneRange {
    pub name: String,
    pub low: i64,
    pub high: i64,
}

impl GeneRange {
    pub fn new(name: &str, low: i64, high: i64) -> Self {
        Self {
            name: name.to_owned(),
            low,
            high,
        }
    }
}

/// Ordered gene ranges; a genome holds one integer per range.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub genes: Vec<GeneRange>,
}

impl SearchSpace {
    pub fn new(genes: Vec<GeneRange>) -> Result<Self> {
        let space = Self { genes };
        space.validate()?;
        Ok(space)
    }

    pub fn validate(&self) -> Result<()> {
        if self.genes.is_empty() {
            return Err(Error::InvalidSpace("no genes".into()));
        }
        for g in &self.genes {
            if g.low > g.high {
                return Err(Error::InvalidSpace(format!("{}: low {} > high {}", g.name, g.low, g.high)));
            }
        }
        Ok(())
    }

    pub fn contains(&self, genome: &[i64]) -> bool {
        genome.len() == self.genes.len()
            && genome.iter().zip(&self.genes).all(|(v, g)| (g.low..=g.high).contains(v))
    }

    pub fn check(&self, genome: &[i64]) -> Result<()> {
        if self.contains(genome) {
            Ok(())
        } else {
            Err(Error::InvalidSpace(format!("genome {genome:?} outside {:?}", self.genes)))
        }
    }

    /// Number of distinct genomes, saturating.
    pub fn cardinality(&self) -> u128 {
        self.genes
            .iter()
            .fold(1u128, |acc, g| acc.saturating_mul((g.high - g.low + 1) as u128))
    }

    fn random_gene<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> i64 {
        let g = &self.genes[i];
        rng.random_range(g.low..=g.high)
    }

    fn random_genome<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<i64> {
        (0..self.genes.len()).map(|i| self.random_gene(i, rng)).collect()
    }
}

/// Ranges for every searched architecture hyperparameter. Defaults contain
/// the published optima for both benchmark datasets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchitectureSearchSpace {
    pub window_size: (i64, i64),
    pub noise_size: (i64, i64),
    pub gru_layers: (i64, i64),
    pub gru_cells: (i64, i64),
    pub disc_gru_layers: (i64, i64),
    pub disc_gru_cells: (i64, i64),
}

impl Default for ArchitectureSearchSpace {
    fn default() -> Self {
        Self {
            window_size: (1, 256),
            noise_size: (1, 512),
            gru_layers: (1, 4),
            gru_cells: (1, 256),
            disc_gru_layers: (1, 4),
            disc_gru_cells: (1, 256),
        }
    }
}

impl ArchitectureSearchSpace {
    /// Genes `[window_size, gru_layers, gru_cells]`.
    pub fn deterministic(&self) -> Result<SearchSpace> {
        SearchSpace::new(vec![
            GeneRange::new("window_size", self.window_size.0.max(1), self.window_size.1),
            GeneRange::new("gru_layers", self.gru_layers.0.max(1), self.gru_layers.1),
            GeneRange::new("gru_cells", self.gru_cells.0.max(1), self.gru_cells.1),
        ])
    }

    /// Genes `[noise_size, disc_gru_layers, disc_gru_cells]`.
    pub fn discriminator(&self) -> Result<SearchSpace> {
        SearchSpace::new(vec![
            GeneRange::new("noise_size", self.noise_size.0.max(1), self.noise_size.1),
            GeneRange::new("disc_gru_layers", self.disc_gru_layers.0.max(1), self.disc_gru_layers.1),
            GeneRange::new("disc_gru_cells", self.disc_gru_cells.0.max(1), self.disc_gru_cells.1),
        ])
    }

    pub fn decode_deterministic(&self, genome: &[i64], feature_count: usize) -> Result<DeterministicSpec> {
        self.deterministic()?.check(genome)?;
        Ok(DeterministicSpec::new(
            genome[0] as usize,
            genome[1] as usize,
            genome[2] as usize,
            feature_count,
        ))
    }

    /// Noise size and discriminator spec for a frozen generator topology.
    pub fn decode_discriminator(&self, genome: &[i64], base: &DeterministicSpec) -> Result<(usize, DiscriminatorSpec)> {
        self.discriminator()?.check(genome)?;
        Ok((
            genome[0] as usize,
            DiscriminatorSpec::new(base.window_size, base.feature_count, genome[1] as usize, genome[2] as usize),
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaConfig {
    pub population_size: usize,
    pub generations: usize,
    pub tournament_size: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub elitism_count: usize,
    pub seed: u64,
    pub fitness_budget: Option<usize>,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population_size: 16,
            generations: 10,
            tournament_size: 3,
            crossover_rate: 0.7,
            mutation_rate: 0.15,
            elitism_count: 1,
            seed: 0,
            fitness_budget: None,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.population_size == 0 || self.generations == 0 || self.tournament_size == 0 {
            return bad("population_size, generations and tournament_size must be at least 1".into());
        }
        if self.elitism_count >= self.population_size && self.population_size > 1 {
            return bad(format!(
                "elitism_count {} must be below population_size {}",
                self.elitism_count, self.population_size
            ));
        }
        for (name, r) in [("crossover_rate", self.crossover_rate), ("mutation_rate", self.mutation_rate)] {
            if !(0.0..=1.0).contains(&r) {
                return bad(format!("{name} {r} outside [0, 1]"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mutation {
    pub gene: usize,
    pub from: i64,
    pub to: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub id: u64,
    pub genome: Vec<i64>,
    /// Lower is better; `None` until evaluated.
    pub fitness: Option<f64>,
    pub parents: Vec<u64>,
    pub mutations: Vec<Mutation>,
}

impl Individual {
    fn score(&self) -> f64 {
        match self.fitness {
            Some(f) if !f.is_nan() => f,
            _ => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    pub individuals: Vec<Individual>,
    pub best: Individual,
    pub best_fitness: f64,
    pub mean_fitness: f64,
    /// Cumulative fitness evaluations at the end of this generation.
    pub evaluations: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchHistory {
    pub space: Option<SearchSpace>,
    pub generations: Vec<GenerationRecord>,
}

impl SearchHistory {
    pub fn evaluations(&self) -> usize {
        self.generations.last().map_or(0, |g| g.evaluations)
    }

    pub fn best_trajectory(&self) -> Vec<f64> {
        self.generations.iter().map(|g| g.best_fitness).collect()
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        crate::io::write_json(path.as_ref(), self)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        crate::io::read_json(path.as_ref())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    /// Lowest-fitness individual ever evaluated.
    pub best: Individual,
    pub history: SearchHistory,
    /// The evaluation budget ran out before all generations completed.
    pub budget_exhausted: bool,
}

/// Fitness seed for a genome: equal genomes get equal seeds regardless of
/// when or where they are evaluated.
pub fn genome_seed(seed: u64, genome: &[i64]) -> u64 {
    genome
        .iter()
        .fold(derive_seed(seed, stream::SEARCH), |acc, &g| derive_seed(acc, g as u64))
}

struct Ga<'a, F> {
    space: &'a SearchSpace,
    fitness: F,
    config: &'a GaConfig,
    cache: HashMap<Vec<i64>, f64>,
    evaluations: usize,
    next_id: u64,
    best: Option<Individual>,
}

impl<F> Ga<'_, F>
where
    F: Fn(&[i64], u64) -> f64 + Sync,
{
    fn remaining(&self) -> usize {
        self.config
            .fitness_budget
            .map_or(usize::MAX, |b| b.saturating_sub(self.evaluations))
    }

    /// Evaluates unscored individuals in parallel; returns false when the
    /// budget prevented scoring all of them.
    fn evaluate(&mut self, population: &mut [Individual]) -> bool {
        let mut pending: Vec<Vec<i64>> = Vec::new();
        for ind in population.iter() {
            if ind.fitness.is_none() && !self.cache.contains_key(&ind.genome) && !pending.contains(&ind.genome) {
                pending.push(ind.genome.clone());
            }
        }
        let complete = pending.len() <= self.remaining();
        pending.truncate(self.remaining());
        let seed = self.config.seed;
        let results: Vec<f64> = pending
            .par_iter()
            .map(|g| {
                debug_assert!(self.space.contains(g));
                let f = (self.fitness)(g, genome_seed(seed, g));
                if f.is_nan() {
                    f64::INFINITY
                } else {
                    f
                }
            })
            .collect();
        self.evaluations += pending.len();
        for (g, f) in pending.into_iter().zip(results) {
            self.cache.insert(g, f);
        }
        for ind in population.iter_mut() {
            if ind.fitness.is_none() {
                ind.fitness = self.cache.get(&ind.genome).copied();
            }
            if ind.fitness.is_some() && self.best.as_ref().is_none_or(|b| ind.score() < b.score()) {
                self.best = Some(ind.clone());
            }
        }
        complete
    }

    fn fresh(&mut self, genome: Vec<i64>, parents: Vec<u64>, mutations: Vec<Mutation>) -> Individual {
        let id = self.next_id;
        self.next_id += 1;
        Individual {
            id,
            genome,
            fitness: None,
            parents,
            mutations,
        }
    }

    fn tournament<'p>(&self, population: &'p [Individual], rng: &mut ChaCha8Rng) -> &'p Individual {
        let mut winner = &population[rng.random_range(0..population.len())];
        for _ in 1..self.config.tournament_size {
            let c = &population[rng.random_range(0..population.len())];
            if c.score() < winner.score() {
                winner = c;
            }
        }
        winner
    }

    fn breed(&mut self, previous: &[Individual], generation: usize) -> Vec<Individual> {
        let mut rng = seeded(derive_seed(self.config.seed, generation as u64), stream::SEARCH);
        let mut ranked: Vec<&Individual> = previous.iter().collect();
        ranked.sort_by(|a, b| a.score().total_cmp(&b.score()).then(a.id.cmp(&b.id)));
        let mut next: Vec<Individual> = ranked
            .iter()
            .take(self.config.elitism_count.min(self.config.population_size))
            .map(|&i| i.clone())
            .collect();
        while next.len() < self.config.population_size {
            let a = self.tournament(previous, &mut rng).clone();
            let b = self.tournament(previous, &mut rng).clone();
            let (mut genome, parents) = if rng.random::<f64>() < self.config.crossover_rate {
                let g = a
                    .genome
                    .iter()
                    .zip(&b.genome)
                    .map(|(&x, &y)| if rng.random::<bool>() { x } else { y })
                    .collect();
                (g, vec![a.id, b.id])
            } else {
                (a.genome.clone(), vec![a.id])
            };
            let mut mutations = Vec::new();
            for (i, gene) in genome.iter_mut().enumerate() {
                if rng.random::<f64>() < self.config.mutation_rate {
                    let to = self.space.random_gene(i, &mut rng);
                    mutations.push(Mutation { gene: i, from: *gene, to });
                    *gene = to;
                }
            }
            debug_assert!(self.space.contains(&genome));
            next.push(self.fresh(genome, parents, mutations));
        }
        next
    }

    fn record(&self, generation: usize, population: &[Individual]) -> GenerationRecord {
        let scored: Vec<f64> = population.iter().filter_map(|i| i.fitness).collect();
        let best = population
            .iter()
            .filter(|i| i.fitness.is_some())
            .min_by(|a, b| a.score().total_cmp(&b.score()).then(a.id.cmp(&b.id)))
            .or(population.first())
            .cloned()
            .expect("non-empty population");
        GenerationRecord {
            generation,
            individuals: population.to_vec(),
            best_fitness: best.score(),
            best,
            mean_fitness: scored.iter().sum::<f64>() / scored.len().max(1) as f64,
            evaluations: self.evaluations,
        }
    }

    fn run(mut self, mut history: SearchHistory) -> Result<SearchOutcome> {
        let mut population: Vec<Individual>;
        let start;
        if let Some(last) = history.generations.last() {
            population = last.individuals.clone();
            start = last.generation + 1;
            self.evaluations = last.evaluations;
            for g in &history.generations {
                for ind in &g.individuals {
                    self.next_id = self.next_id.max(ind.id + 1);
                    if let Some(f) = ind.fitness {
                        self.cache.insert(ind.genome.clone(), f);
                        if self.best.as_ref().is_none_or(|b| ind.score() < b.score()) {
                            self.best = Some(ind.clone());
                        }
                    }
                }
            }
        } else {
            let mut rng = seeded(derive_seed(self.config.seed, 0), stream::SEARCH);
            population = Vec::with_capacity(self.config.population_size);
            for _ in 0..self.config.population_size {
                let genome = self.space.random_genome(&mut rng);
                let ind = self.fresh(genome, Vec::new(), Vec::new());
                population.push(ind);
            }
            start = 0;
        }
        history.space = Some(self.space.clone());

        let mut exhausted = false;
        for generation in start..self.config.generations {
            if generation > 0 {
                population = self.breed(&population, generation);
            }
            if !self.evaluate(&mut population) {
                exhausted = true;
            }
            history.generations.push(self.record(generation, &population));
            if exhausted || (self.remaining() == 0 && generation + 1 < self.config.generations) {
                exhausted = true;
                break;
            }
        }
        let best = self
            .best
            .ok_or_else(|| Error::InvalidConfig("fitness budget allowed no evaluations".into()))?;
        Ok(SearchOutcome {
            best,
            history,
            budget_exhausted: exhausted,
        })
    }
}

/// Generational GA with tournament selection, uniform crossover, uniform
/// reset mutation and elitism. `fitness(genome, seed)` must be finite and
/// deterministic given its seed; lower is better.
pub fn ga_search<F>(space: &SearchSpace, fitness: F, config: &GaConfig) -> Result<SearchOutcome>
where
    F: Fn(&[i64], u64) -> f64 + Sync,
{
    ga_resume(space, fitness, config, SearchHistory::default())
}

/// Continues a search from the last completed generation in `history`.
pub fn ga_resume<F>(space: &SearchSpace, fitness: F, config: &GaConfig, history: SearchHistory) -> Result<SearchOutcome>
where
    F: Fn(&[i64], u64) -> f64 + Sync,
{
    space.validate()?;
    config.validate()?;
    if let Some(s) = &history.space {
        if s != space {
            return Err(Error::InvalidSpace("history was recorded over a different space".into()));
        }
    }
    let ga = Ga {
        space,
        fitness,
        config,
        cache: HashMap::new(),
        evaluations: 0,
        next_id: 0,
        best: None,
    };
    ga.run(history)
}

/// Data and budget for scoring deterministic architectures.
#[derive(Debug, Clone)]
pub struct DeterministicFitness<'a> {
    pub space: &'a ArchitectureSearchSpace,
    /// Scaled training and validation splits.
    pub train: &'a TimeSeriesFrame,
    pub valid: &'a TimeSeriesFrame,
    /// Usually a reduced-epoch copy of the full training config.
    pub config: TrainConfig,
}

impl DeterministicFitness<'_> {
    /// Best validation MAE (scaled units) after a short fit. Divergence or a
    /// window too long for the splits scores `+inf`.
    pub fn evaluate(&self, genome: &[i64], seed: u64) -> Result<f64> {
        let spec = self.space.decode_deterministic(genome, self.train.n_features())?;
        let (train, valid) = match (
            WindowSet::new(self.train, spec.window_size),
            WindowSet::new(self.valid, spec.window_size),
        ) {
            (Ok(t), Ok(v)) => (t, v),
            _ => return Ok(f64::INFINITY),
        };
        let model = build_deterministic(&spec, seed)?;
        let config = TrainConfig {
            seed,
            ..self.config.clone()
        };
        match train_deterministic(model, &train, &valid, &config) {
            Ok((_, report)) => Ok(report.best_validation.unwrap_or(f64::INFINITY)),
            Err(Error::Diverged { .. }) => Ok(f64::INFINITY),
            Err(e) => Err(e),
        }
    }
}

pub fn fitness_deterministic(ctx: &DeterministicFitness<'_>, genome: &[i64], seed: u64) -> Result<f64> {
    ctx.evaluate(genome, seed)
}

/// Scores discriminator architectures against a frozen generator topology.
#[derive(Debug, Clone)]
pub struct DiscriminatorFitness<'a> {
    pub space: &'a ArchitectureSearchSpace,
    pub deterministic: &'a DeterministicModel,
    pub conversion: ConversionOptions,
    pub train: &'a TimeSeriesFrame,
    pub valid: &'a TimeSeriesFrame,
    pub config: TrainConfig,
}

impl DiscriminatorFitness<'_> {
    pub fn evaluate(&self, genome: &[i64], seed: u64) -> Result<f64> {
        let base = self.deterministic.spec();
        let (noise, disc_spec) = self.space.decode_discriminator(genome, base)?;
        let train = WindowSet::new(self.train, base.window_size)?;
        let valid = WindowSet::new(self.valid, base.window_size)?;
        let gen_spec = GeneratorSpec::from_base(base.clone(), noise);
        let generator = convert_deterministic(self.deterministic, &gen_spec, seed, self.conversion)?;
        let discriminator = build_discriminator(&disc_spec, derive_seed(seed, 1))?;
        let config = TrainConfig {
            seed,
            ..self.config.clone()
        };
        match train_gan(generator, discriminator, &train, &valid, &config) {
            Ok(out) => Ok(out.report.best_validation.unwrap_or(f64::INFINITY)),
            Err(Error::Diverged { .. }) => Ok(f64::INFINITY),
            Err(e) => Err(e),
        }
    }
}

pub fn fitness_discriminator(ctx: &DiscriminatorFitness<'_>, genome: &[i64], seed: u64) -> Result<f64> {
    ctx.evaluate(genome, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_space() -> SearchSpace {
        SearchSpace::new(vec![GeneRange::new("window_size", 1, 64)]).unwrap()
    }

    #[test]
    fn single_individual() {
        let space = line_space();
        let config = GaConfig {
            population_size: 1,
            generations: 1,
            crossover_rate: 0.0,
            mutation_rate: 0.0,
            elitism_count: 0,
            ..GaConfig::default()
        };
        let out = ga_search(&space, |g, _| g[0] as f64, &config).unwrap();
        let only = &out.history.generations[0].individuals[0];
        assert_eq!(out.best.genome, only.genome);
        assert_eq!(out.best.fitness, Some(only.genome[0] as f64));
    }

    #[test]
    fn invalid_space_and_config() {
        assert!(matches!(
            SearchSpace::new(vec![GeneRange::new("x", 3, 2)]),
            Err(Error::InvalidSpace(_))
        ));
        let bad = GaConfig {
            elitism_count: 16,
            ..GaConfig::default()
        };
        assert!(ga_search(&line_space(), |_, _| 0.0, &bad).is_err());
    }

    #[test]
    fn budget_caps_evaluations() {
        let config = GaConfig {
            population_size: 10,
            generations: 20,
            fitness_budget: Some(25),
            ..GaConfig::default()
        };
        let space = SearchSpace::new(vec![GeneRange::new("a", 0, 1000), GeneRange::new("b", 0, 1000)]).unwrap();
        let out = ga_search(&space, |g, _| (g[0] - 500).abs() as f64 + g[1] as f64, &config).unwrap();
        assert!(out.budget_exhausted);
        assert!(out.history.evaluations() <= 25);
    }

    #[test]
    fn decoding_table_optima() {
        let space = ArchitectureSearchSpace::default();
        let spec = space.decode_deterministic(&[174, 1, 119], 321).unwrap();
        assert_eq!((spec.window_size, spec.gru_layers, spec.gru_cells), (174, 1, 119));
        let (noise, d) = space.decode_discriminator(&[303, 3, 146], &spec).unwrap();
        assert_eq!((noise, d.gru_layers, d.gru_cells), (303, 3, 146));
        let fx = space.decode_deterministic(&[170, 1, 119], 8).unwrap();
        let (noise, d) = space.decode_discriminator(&[183, 1, 149], &fx).unwrap();
        assert_eq!((noise, d.gru_layers, d.gru_cells), (183, 1, 149));
        assert!(matches!(
            space.decode_deterministic(&[0, 1, 119], 8),
            Err(Error::InvalidSpace(_))
        ));
        assert!(matches!(
            space.decode_deterministic(&[10, 9, 119], 8),
            Err(Error::InvalidSpace(_))
        ));
    }
}
