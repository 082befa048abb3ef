//! The three networks: deterministic forecaster, noise-conditioned generator
//! built from it, and the sequence discriminator.

use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{sigmoid, GruStack, GruStackCache, Mlp, MlpCache, Parameters};
use crate::rng::{seeded, stream};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeterministicSpec {
    pub window_size: usize,
    pub gru_layers: usize,
    pub gru_cells: usize,
    /// Widths of the dense block; the last entry is the forecast width.
    pub dense_widths: Vec<usize>,
    pub feature_count: usize,
}

impl DeterministicSpec {
    /// Two dense layers: a rectified hidden layer as wide as the GRU
    /// representation, then the linear forecast layer.
    pub fn new(window_size: usize, gru_layers: usize, gru_cells: usize, feature_count: usize) -> Self {
        Self {
            window_size,
            gru_layers,
            gru_cells,
            dense_widths: vec![gru_cells, feature_count],
            feature_count,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_counts(&[
            ("window_size", self.window_size),
            ("gru_layers", self.gru_layers),
            ("gru_cells", self.gru_cells),
            ("feature_count", self.feature_count),
        ])?;
        check_widths(&self.dense_widths, self.feature_count, "dense_widths")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseDistribution {
    #[default]
    StandardNormal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub base: DeterministicSpec,
    pub noise_size: usize,
    #[serde(default)]
    pub noise_distribution: NoiseDistribution,
    /// Dense block applied to `[representation | z]`; last entry is the
    /// forecast width.
    pub mlp_extension_widths: Vec<usize>,
}

impl GeneratorSpec {
    /// Extension widths default to `[2 * gru_cells, f]`.
    pub fn from_base(base: DeterministicSpec, noise_size: usize) -> Self {
        let mlp_extension_widths = vec![2 * base.gru_cells, base.feature_count];
        Self {
            base,
            noise_size,
            noise_distribution: NoiseDistribution::StandardNormal,
            mlp_extension_widths,
        }
    }

    /// Width of the dense block's input: representation plus noise.
    pub fn head_input_width(&self) -> usize {
        self.base.gru_cells + self.noise_size
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        check_counts(&[("noise_size", self.noise_size)])?;
        check_widths(&self.mlp_extension_widths, self.base.feature_count, "mlp_extension_widths")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    pub window_size: usize,
    pub feature_count: usize,
    pub gru_layers: usize,
    pub gru_cells: usize,
    /// Widths of the dense block; the last entry must be 1.
    pub dense_widths: Vec<usize>,
}

impl DiscriminatorSpec {
    pub fn new(window_size: usize, feature_count: usize, gru_layers: usize, gru_cells: usize) -> Self {
        Self {
            window_size,
            feature_count,
            gru_layers,
            gru_cells,
            dense_widths: vec![gru_cells, 1],
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_counts(&[
            ("window_size", self.window_size),
            ("gru_layers", self.gru_layers),
            ("gru_cells", self.gru_cells),
            ("feature_count", self.feature_count),
        ])?;
        check_widths(&self.dense_widths, 1, "dense_widths")
    }
}

fn check_counts(fields: &[(&str, usize)]) -> Result<()> {
    for (name, v) in fields {
        if *v == 0 {
            return Err(Error::InvalidSpec(format!("{name} must be at least 1")));
        }
    }
    Ok(())
}

fn check_widths(widths: &[usize], out: usize, name: &str) -> Result<()> {
    match widths.last() {
        None => Err(Error::InvalidSpec(format!("{name} is empty"))),
        Some(&last) if last != out => Err(Error::InvalidSpec(format!(
            "{name} must end with output width {out}, got {last}"
        ))),
        _ if widths.contains(&0) => Err(Error::InvalidSpec(format!("{name} contains a zero width"))),
        _ => Ok(()),
    }
}

/// Any of the three architectures, tagged by kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArchitectureSpec {
    Deterministic(DeterministicSpec),
    Generator(GeneratorSpec),
    Discriminator(DiscriminatorSpec),
}

impl ArchitectureSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            ArchitectureSpec::Deterministic(_) => "deterministic",
            ArchitectureSpec::Generator(_) => "generator",
            ArchitectureSpec::Discriminator(_) => "discriminator",
        }
    }
}

fn check_window(window: &ArrayView2<'_, f64>, w: usize, f: usize) -> Result<()> {
    if window.dim() != (w, f) {
        return Err(Error::shape(format!("[{w} x {f}] window"), format!("{:?}", window.dim())));
    }
    Ok(())
}

fn check_steps(steps: &[Array2<f64>], w: usize, f: usize) -> Result<()> {
    if steps.len() != w {
        return Err(Error::shape(format!("{w} steps"), steps.len()));
    }
    let b = steps[0].nrows();
    if let Some(bad) = steps.iter().find(|s| s.dim() != (b, f)) {
        return Err(Error::shape(format!("[{b} x {f}] step"), format!("{:?}", bad.dim())));
    }
    Ok(())
}

/// Single `[w x f]` window as a time-major batch of one.
pub fn window_to_steps(window: ArrayView2<'_, f64>) -> Vec<Array2<f64>> {
    window
        .rows()
        .into_iter()
        .map(|r| r.to_owned().insert_axis(Axis(0)))
        .collect()
}

/// GRU encoder followed by a dense head mapping the representation to the
/// next observation.
#[derive(Debug, Clone)]
pub struct DeterministicModel {
    spec: DeterministicSpec,
    seed: u64,
    pub(crate) encoder: GruStack,
    pub(crate) head: Mlp,
}

#[derive(Debug, Clone)]
pub struct DeterministicCache {
    encoder: GruStackCache,
    head: MlpCache,
}

pub fn build_deterministic(spec: &DeterministicSpec, seed: u64) -> Result<DeterministicModel> {
    spec.validate()?;
    let mut rng = seeded(seed, stream::INIT);
    let encoder = GruStack::new(spec.feature_count, spec.gru_cells, spec.gru_layers, &mut rng);
    let head = Mlp::new(spec.gru_cells, &spec.dense_widths, &mut rng);
    Ok(DeterministicModel {
        spec: spec.clone(),
        seed,
        encoder,
        head,
    })
}

impl DeterministicModel {
    pub fn spec(&self) -> &DeterministicSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            spec: self.spec.clone(),
            seed: self.seed,
            encoder: self.encoder.zeros_like(),
            head: self.head.zeros_like(),
        }
    }

    /// `[batch x w x f]` (time-major steps) to `[batch x f]`.
    pub fn predict(&self, steps: &[Array2<f64>]) -> Result<Array2<f64>> {
        check_steps(steps, self.spec.window_size, self.spec.feature_count)?;
        Ok(self.head.infer(&self.encoder.infer(steps)))
    }

    pub fn forward(&self, steps: &[Array2<f64>]) -> Result<(Array2<f64>, DeterministicCache)> {
        check_steps(steps, self.spec.window_size, self.spec.feature_count)?;
        let (rep, encoder) = self.encoder.forward(steps);
        let (out, head) = self.head.forward(&rep);
        Ok((out, DeterministicCache { encoder, head }))
    }

    pub fn backward(&self, cache: &DeterministicCache, d_out: &Array2<f64>, grad: &mut Self) {
        let d_rep = self.head.backward(&cache.head, d_out, &mut grad.head);
        self.encoder.backward(&cache.encoder, &d_rep, &mut grad.encoder);
    }

    pub fn forecast_point(&self, window: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        check_window(&window, self.spec.window_size, self.spec.feature_count)?;
        let out = self.predict(&window_to_steps(window))?;
        Ok(out.row(0).to_owned())
    }
}

impl Parameters for DeterministicModel {
    fn params(&self) -> Vec<&Array2<f64>> {
        let mut p = self.encoder.params();
        p.extend(self.head.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut p = self.encoder.params_mut();
        p.extend(self.head.params_mut());
        p
    }
}

/// Deterministic encoder whose representation is concatenated with a noise
/// vector before a widened dense head.
#[derive(Debug, Clone)]
pub struct Generator {
    spec: GeneratorSpec,
    seed: u64,
    pub(crate) encoder: GruStack,
    pub(crate) head: Mlp,
}

#[derive(Debug, Clone)]
pub struct GeneratorCache {
    encoder: GruStackCache,
    head: MlpCache,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConversionOptions {
    /// Copy the trained GRU weights of the deterministic model.
    pub copy_encoder: bool,
}

impl Default for ConversionOptions {
    fn default() -> Self {
        Self { copy_encoder: true }
    }
}

pub fn build_generator(spec: &GeneratorSpec, seed: u64) -> Result<Generator> {
    spec.validate()?;
    let mut rng = seeded(seed, stream::INIT);
    let base = &spec.base;
    let encoder = GruStack::new(base.feature_count, base.gru_cells, base.gru_layers, &mut rng);
    let head = Mlp::new(spec.head_input_width(), &spec.mlp_extension_widths, &mut rng);
    Ok(Generator {
        spec: spec.clone(),
        seed,
        encoder,
        head,
    })
}

pub fn build_generator_from_deterministic(
    det: &DeterministicModel,
    noise_size: usize,
    seed: u64,
) -> Result<Generator> {
    let spec = GeneratorSpec::from_base(det.spec().clone(), noise_size);
    convert_deterministic(det, &spec, seed, ConversionOptions::default())
}

/// Builds a generator whose encoder has the deterministic model's shape,
/// optionally warm-started from its trained weights.
pub fn convert_deterministic(
    det: &DeterministicModel,
    spec: &GeneratorSpec,
    seed: u64,
    options: ConversionOptions,
) -> Result<Generator> {
    if spec.base != *det.spec() {
        return Err(Error::InvalidSpec(
            "generator base spec differs from the deterministic model".into(),
        ));
    }
    let mut gen = build_generator(spec, seed)?;
    if options.copy_encoder {
        gen.encoder.copy_from(&det.encoder);
    }
    Ok(gen)
}

impl Generator {
    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn noise_size(&self) -> usize {
        self.spec.noise_size
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            spec: self.spec.clone(),
            seed: self.seed,
            encoder: self.encoder.zeros_like(),
            head: self.head.zeros_like(),
        }
    }

    pub fn sample_noise<R: Rng + ?Sized>(&self, rows: usize, rng: &mut R) -> Array2<f64> {
        match self.spec.noise_distribution {
            NoiseDistribution::StandardNormal => {
                Array2::from_shape_simple_fn((rows, self.spec.noise_size), || rng.sample(StandardNormal))
            }
        }
    }

    fn check_noise(&self, noise: &Array2<f64>, batch: usize) -> Result<()> {
        if noise.dim() != (batch, self.spec.noise_size) {
            return Err(Error::shape(
                format!("[{batch} x {}] noise", self.spec.noise_size),
                format!("{:?}", noise.dim()),
            ));
        }
        Ok(())
    }

    /// GRU representation of each window, `[batch x gru_cells]`.
    pub fn represent(&self, steps: &[Array2<f64>]) -> Result<Array2<f64>> {
        let base = &self.spec.base;
        check_steps(steps, base.window_size, base.feature_count)?;
        Ok(self.encoder.infer(steps))
    }

    pub fn generate(&self, steps: &[Array2<f64>], noise: &Array2<f64>) -> Result<Array2<f64>> {
        let rep = self.represent(steps)?;
        self.check_noise(noise, rep.nrows())?;
        let input = concatenate![Axis(1), rep, *noise];
        Ok(self.head.infer(&input))
    }

    pub fn forward(&self, steps: &[Array2<f64>], noise: &Array2<f64>) -> Result<(Array2<f64>, GeneratorCache)> {
        let base = &self.spec.base;
        check_steps(steps, base.window_size, base.feature_count)?;
        let (rep, encoder) = self.encoder.forward(steps);
        self.check_noise(noise, rep.nrows())?;
        let input = concatenate![Axis(1), rep, *noise];
        let (out, head) = self.head.forward(&input);
        Ok((out, GeneratorCache { encoder, head }))
    }

    pub fn backward(&self, cache: &GeneratorCache, d_out: &Array2<f64>, grad: &mut Self) {
        let d_input = self.head.backward(&cache.head, d_out, &mut grad.head);
        let d_rep = d_input
            .slice(ndarray::s![.., ..self.spec.base.gru_cells])
            .to_owned();
        self.encoder.backward(&cache.encoder, &d_rep, &mut grad.encoder);
    }

    /// `n` draws per window for a batch of windows. Row `i * n + j` is draw
    /// `j` of window `i`; noise is consumed from `rng` in that order.
    pub fn sample_batch<R: Rng + ?Sized>(
        &self,
        steps: &[Array2<f64>],
        n: usize,
        rng: &mut R,
    ) -> Result<Array2<f64>> {
        let rep = self.represent(steps)?;
        let b = rep.nrows();
        let cells = self.spec.base.gru_cells;
        let mut input = Array2::zeros((b * n, self.spec.head_input_width()));
        let noise = self.sample_noise(b * n, rng);
        for i in 0..b {
            for j in 0..n {
                let mut row = input.row_mut(i * n + j);
                row.slice_mut(ndarray::s![..cells]).assign(&rep.row(i));
                row.slice_mut(ndarray::s![cells..]).assign(&noise.row(i * n + j));
            }
        }
        Ok(self.head.infer(&input))
    }

    /// `n` forecasts for one `[w x f]` window, each from an independent
    /// standard-normal `z`.
    pub fn sample_forecasts(&self, window: ArrayView2<'_, f64>, n: usize, seed: u64) -> Result<Array2<f64>> {
        let base = &self.spec.base;
        check_window(&window, base.window_size, base.feature_count)?;
        if n == 0 {
            return Err(Error::Domain("sample count must be at least 1".into()));
        }
        let mut rng = seeded(seed, stream::NOISE);
        self.sample_batch(&window_to_steps(window), n, &mut rng)
    }
}

impl Parameters for Generator {
    fn params(&self) -> Vec<&Array2<f64>> {
        let mut p = self.encoder.params();
        p.extend(self.head.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut p = self.encoder.params_mut();
        p.extend(self.head.params_mut());
        p
    }
}

/// Scores a `[w + 1 x f]` sequence formed by appending the candidate row
/// after the condition window.
#[derive(Debug, Clone)]
pub struct Discriminator {
    spec: DiscriminatorSpec,
    seed: u64,
    pub(crate) encoder: GruStack,
    pub(crate) head: Mlp,
}

#[derive(Debug, Clone)]
pub struct DiscriminatorCache {
    encoder: GruStackCache,
    head: MlpCache,
}

pub fn build_discriminator(spec: &DiscriminatorSpec, seed: u64) -> Result<Discriminator> {
    spec.validate()?;
    let mut rng = seeded(seed, stream::INIT);
    let encoder = GruStack::new(spec.feature_count, spec.gru_cells, spec.gru_layers, &mut rng);
    let head = Mlp::new(spec.gru_cells, &spec.dense_widths, &mut rng);
    Ok(Discriminator {
        spec: spec.clone(),
        seed,
        encoder,
        head,
    })
}

impl Discriminator {
    pub fn spec(&self) -> &DiscriminatorSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            spec: self.spec.clone(),
            seed: self.seed,
            encoder: self.encoder.zeros_like(),
            head: self.head.zeros_like(),
        }
    }

    fn sequence(&self, steps: &[Array2<f64>], candidates: &Array2<f64>) -> Result<Vec<Array2<f64>>> {
        check_steps(steps, self.spec.window_size, self.spec.feature_count)?;
        let b = steps[0].nrows();
        if candidates.dim() != (b, self.spec.feature_count) {
            return Err(Error::shape(
                format!("[{b} x {}] candidates", self.spec.feature_count),
                format!("{:?}", candidates.dim()),
            ));
        }
        let mut seq = steps.to_vec();
        seq.push(candidates.clone());
        Ok(seq)
    }

    /// Pre-sigmoid scores, `[batch x 1]`.
    pub fn logits(&self, steps: &[Array2<f64>], candidates: &Array2<f64>) -> Result<Array2<f64>> {
        let seq = self.sequence(steps, candidates)?;
        Ok(self.head.infer(&self.encoder.infer(&seq)))
    }

    pub fn forward(
        &self,
        steps: &[Array2<f64>],
        candidates: &Array2<f64>,
    ) -> Result<(Array2<f64>, DiscriminatorCache)> {
        let seq = self.sequence(steps, candidates)?;
        let (rep, encoder) = self.encoder.forward(&seq);
        let (out, head) = self.head.forward(&rep);
        Ok((out, DiscriminatorCache { encoder, head }))
    }

    /// Accumulates parameter gradients and returns the gradient with respect
    /// to the candidate rows.
    pub fn backward(&self, cache: &DiscriminatorCache, d_logits: &Array2<f64>, grad: &mut Self) -> Array2<f64> {
        let d_rep = self.head.backward(&cache.head, d_logits, &mut grad.head);
        let mut d_seq = self.encoder.backward(&cache.encoder, &d_rep, &mut grad.encoder);
        d_seq.pop().expect("candidate step")
    }

    /// Probabilities for a batch of (window, candidate) pairs.
    pub fn score_batch(&self, steps: &[Array2<f64>], candidates: &Array2<f64>) -> Result<Array1<f64>> {
        Ok(self.logits(steps, candidates)?.column(0).mapv(sigmoid))
    }

    pub fn discriminator_score(&self, window: ArrayView2<'_, f64>, candidate: &Array1<f64>) -> Result<f64> {
        check_window(&window, self.spec.window_size, self.spec.feature_count)?;
        if candidate.len() != self.spec.feature_count {
            return Err(Error::shape(
                format!("candidate of width {}", self.spec.feature_count),
                candidate.len(),
            ));
        }
        let cand = candidate.clone().insert_axis(Axis(0));
        Ok(self.score_batch(&window_to_steps(window), &cand)?[0])
    }
}

impl Parameters for Discriminator {
    fn params(&self) -> Vec<&Array2<f64>> {
        let mut p = self.encoder.params();
        p.extend(self.head.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut p = self.encoder.params_mut();
        p.extend(self.head.params_mut());
        p
    }
}
