//! Experiment configuration: a TOML file plus `key=value` overrides.
//!
//! Relative paths inside the file resolve against the file's directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use probcast::models::{ConversionOptions, GeneratorSpec};
use probcast::search::ArchitectureSearchSpace;
use probcast::{DeterministicSpec, DiscriminatorSpec, GaConfig, SplitSpec, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Single source of randomness; overrides `training.seed` and `ga.seed`.
    #[serde(default)]
    pub seed: u64,
    pub out: PathBuf,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub split: SplitSpec,
    pub deterministic: DeterministicPhase,
    pub adversarial: AdversarialPhase,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub ga: GaConfig,
    /// Epoch budget of each fitness evaluation during search.
    #[serde(default = "default_search_epochs")]
    pub search_max_epochs: usize,
    /// Draws per test window in reported CRPS.
    #[serde(default = "default_samples")]
    pub evaluation_samples: usize,
}

fn default_search_epochs() -> usize {
    10
}

fn default_samples() -> usize {
    200
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: PathBuf,
    #[serde(default = "default_true")]
    pub has_header: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeterministicArch {
    pub window_size: usize,
    pub gru_layers: usize,
    pub gru_cells: usize,
    /// Every dense layer width; the last must equal the feature count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dense_widths: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeterministicRanges {
    pub window_size: (i64, i64),
    pub gru_layers: (i64, i64),
    pub gru_cells: (i64, i64),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeterministicPhase {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<DeterministicArch>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search: Option<DeterministicRanges>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarialArch {
    pub noise_size: usize,
    pub disc_gru_layers: usize,
    pub disc_gru_cells: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disc_dense_widths: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator_widths: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarialRanges {
    pub noise_size: (i64, i64),
    pub disc_gru_layers: (i64, i64),
    pub disc_gru_cells: (i64, i64),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarialPhase {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<AdversarialArch>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search: Option<AdversarialRanges>,
    /// Warm-start the generator's GRU encoder from the deterministic model.
    #[serde(default = "default_true")]
    pub copy_encoder: bool,
}

/// How a phase obtains its architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseMode {
    Explicit,
    Search,
}

impl ExperimentConfig {
    /// Reads `path`, applies `overrides` (`dotted.key=value`) and resolves
    /// relative paths against the file's directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("config not found: {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base, overrides).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn from_toml(text: &str, base: &Path, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text)?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut config: Self = table.try_into()?;
        config.dataset.path = base.join(&config.dataset.path);
        config.out = base.join(&config.out);
        config.sync_seed();
        Ok(config)
    }

    pub fn sync_seed(&mut self) {
        self.training.seed = self.seed;
        self.ga.seed = self.seed;
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.sync_seed();
    }

    pub fn deterministic_mode(&self) -> Result<PhaseMode> {
        mode("deterministic", self.deterministic.spec.is_some(), self.deterministic.search.is_some())
    }

    pub fn adversarial_mode(&self) -> Result<PhaseMode> {
        mode("adversarial", self.adversarial.spec.is_some(), self.adversarial.search.is_some())
    }

    /// Checks everything that can be checked without reading the dataset.
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.dataset.path.is_file(),
            "dataset not found: {}",
            self.dataset.path.display()
        );
        ensure!(
            !self.out.is_file(),
            "output path {} is a file, expected a directory",
            self.out.display()
        );
        self.split.validate()?;
        self.training.validate()?;
        self.ga.validate()?;
        ensure!(self.search_max_epochs >= 1, "search_max_epochs must be at least 1");
        ensure!(
            self.evaluation_samples >= 2 && self.evaluation_samples.is_multiple_of(2),
            "evaluation_samples must be even and at least 2, got {}",
            self.evaluation_samples
        );
        match self.deterministic_mode()? {
            PhaseMode::Explicit => {
                let a = self.deterministic.spec.as_ref().expect("explicit");
                ensure!(
                    a.window_size >= 1 && a.gru_layers >= 1 && a.gru_cells >= 1,
                    "deterministic.spec: window_size, gru_layers and gru_cells must be at least 1"
                );
            }
            PhaseMode::Search => {
                self.search_space().deterministic()?;
            }
        }
        match self.adversarial_mode()? {
            PhaseMode::Explicit => {
                let a = self.adversarial.spec.as_ref().expect("explicit");
                ensure!(
                    a.noise_size >= 1 && a.disc_gru_layers >= 1 && a.disc_gru_cells >= 1,
                    "adversarial.spec: noise_size, disc_gru_layers and disc_gru_cells must be at least 1"
                );
            }
            PhaseMode::Search => {
                self.search_space().discriminator()?;
            }
        }
        Ok(())
    }

    /// Search ranges of both phases; unsearched genes keep their defaults.
    pub fn search_space(&self) -> ArchitectureSearchSpace {
        let mut space = ArchitectureSearchSpace::default();
        if let Some(r) = &self.deterministic.search {
            space.window_size = r.window_size;
            space.gru_layers = r.gru_layers;
            space.gru_cells = r.gru_cells;
        }
        if let Some(r) = &self.adversarial.search {
            space.noise_size = r.noise_size;
            space.disc_gru_layers = r.disc_gru_layers;
            space.disc_gru_cells = r.disc_gru_cells;
        }
        space
    }

    /// The explicit deterministic spec for `f` features, if one is configured.
    pub fn explicit_deterministic(&self, f: usize) -> Option<DeterministicSpec> {
        self.deterministic.spec.as_ref().map(|a| {
            let mut spec = DeterministicSpec::new(a.window_size, a.gru_layers, a.gru_cells, f);
            if let Some(w) = &a.dense_widths {
                spec.dense_widths = w.clone();
            }
            spec
        })
    }

    /// Explicit generator and discriminator specs on top of `base`.
    pub fn explicit_adversarial(&self, base: &DeterministicSpec) -> Option<(GeneratorSpec, DiscriminatorSpec)> {
        self.adversarial.spec.as_ref().map(|a| {
            let mut gen = GeneratorSpec::from_base(base.clone(), a.noise_size);
            if let Some(w) = &a.generator_widths {
                gen.mlp_extension_widths = w.clone();
            }
            let mut disc = DiscriminatorSpec::new(base.window_size, base.feature_count, a.disc_gru_layers, a.disc_gru_cells);
            if let Some(w) = &a.disc_dense_widths {
                disc.dense_widths = w.clone();
            }
            (gen, disc)
        })
    }

    pub fn conversion(&self) -> ConversionOptions {
        ConversionOptions {
            copy_encoder: self.adversarial.copy_encoder,
        }
    }

    /// Training config for fitness evaluations.
    pub fn search_training(&self) -> TrainConfig {
        TrainConfig {
            max_epochs: self.search_max_epochs,
            patience: self.training.patience.min(self.search_max_epochs),
            ..self.training.clone()
        }
    }
}

fn mode(phase: &str, spec: bool, search: bool) -> Result<PhaseMode> {
    match (spec, search) {
        (true, false) => Ok(PhaseMode::Explicit),
        (false, true) => Ok(PhaseMode::Search),
        (true, true) => bail!("{phase}: give either [{phase}.spec] or [{phase}.search], not both"),
        (false, false) => bail!("{phase}: one of [{phase}.spec] or [{phase}.search] is required"),
    }
}

/// Sets `dotted.key` in `table`. The value is parsed as a TOML value and
/// falls back to a plain string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .with_context(|| format!("override {assignment:?} is not of the form key=value"))?;
    let key = key.trim();
    let raw = raw.trim();
    ensure!(!key.is_empty(), "override {assignment:?} has an empty key");
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed"),
        Err(_) => toml::Value::String(raw.to_owned()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    let (last, parents) = parts.split_last().expect("non-empty key");
    let mut cursor = table;
    for p in parents {
        let entry = cursor
            .entry((*p).to_owned())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cursor = match entry {
            toml::Value::Table(t) => t,
            _ => bail!("override {key}: {p} is not a table"),
        };
    }
    cursor.insert((*last).to_owned(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
seed = 3
out = "runs/a"

[dataset]
path = "data.csv"

[deterministic.spec]
window_size = 8
gru_layers = 1
gru_cells = 16

[adversarial.spec]
noise_size = 4
disc_gru_layers = 1
disc_gru_cells = 8
"#;

    #[test]
    fn parses_with_defaults() {
        let c = ExperimentConfig::from_toml(BASE, Path::new("/x"), &[]).unwrap();
        assert_eq!(c.dataset.path, PathBuf::from("/x/data.csv"));
        assert_eq!(c.out, PathBuf::from("/x/runs/a"));
        assert!(c.dataset.has_header);
        assert_eq!(c.split, SplitSpec::default());
        assert_eq!(c.training.seed, 3);
        assert_eq!(c.ga.seed, 3);
        assert_eq!(c.deterministic_mode().unwrap(), PhaseMode::Explicit);
        assert!(c.adversarial.copy_encoder);
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let c = ExperimentConfig::from_toml(
            BASE,
            Path::new("."),
            &[
                "training.batch_size=8".into(),
                "seed = 11".into(),
                "deterministic.spec.gru_cells=5".into(),
                "dataset.path=other.csv".into(),
                "training.generator_loss=\"saturating\"".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.training.batch_size, 8);
        assert_eq!(c.training.seed, 11);
        assert_eq!(c.deterministic.spec.unwrap().gru_cells, 5);
        assert_eq!(c.dataset.path, PathBuf::from("./other.csv"));
        assert_eq!(c.training.generator_loss, probcast::loss::GeneratorLoss::Saturating);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_overrides() {
        assert!(ExperimentConfig::from_toml(&format!("{BASE}\nbogus = 1\n"), Path::new("."), &[]).is_err());
        assert!(ExperimentConfig::from_toml(BASE, Path::new("."), &["nokey".into()]).is_err());
        assert!(ExperimentConfig::from_toml(BASE, Path::new("."), &["seed.x=1".into()]).is_err());
    }

    #[test]
    fn phase_needs_exactly_one_mode() {
        let both = format!("{BASE}\n[deterministic.search]\nwindow_size=[1,4]\ngru_layers=[1,1]\ngru_cells=[1,4]\n");
        let c = ExperimentConfig::from_toml(&both, Path::new("."), &[]).unwrap();
        assert!(c.deterministic_mode().is_err());
        let none = BASE.replace("[adversarial.spec]\nnoise_size = 4\ndisc_gru_layers = 1\ndisc_gru_cells = 8\n", "[adversarial]\n");
        let c = ExperimentConfig::from_toml(&none, Path::new("."), &[]).unwrap();
        assert!(c.adversarial_mode().is_err());
    }

    #[test]
    fn missing_dataset_is_reported() {
        let c = ExperimentConfig::from_toml(BASE, Path::new("/definitely/not/here"), &[]).unwrap();
        let err = c.validate().unwrap_err().to_string();
        assert!(err.starts_with("dataset not found"), "{err}");
    }
}
