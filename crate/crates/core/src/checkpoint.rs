//! Self-describing JSON checkpoints: architecture spec, seed, optional
//! scaler and the parameter tensors in a fixed order.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::ScalerState;
use crate::error::{Error, Result};
use crate::models::{
    build_deterministic, build_discriminator, build_generator, ArchitectureSpec, DeterministicModel, Discriminator,
    Generator,
};
use crate::nn::Parameters;

pub const FORMAT: &str = "probcast-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub spec: ArchitectureSpec,
    pub seed: u64,
    pub parameter_count: usize,
    pub scaler: Option<ScalerState>,
    pub tensors: Vec<Tensor>,
}

/// A network that can be rebuilt from its spec and seed.
pub trait Checkpointable: Parameters + Sized {
    fn architecture(&self) -> ArchitectureSpec;
    fn model_seed(&self) -> u64;
    fn rebuild(spec: &ArchitectureSpec, seed: u64) -> Result<Self>;
}

impl Checkpointable for DeterministicModel {
    fn architecture(&self) -> ArchitectureSpec {
        ArchitectureSpec::Deterministic(self.spec().clone())
    }

    fn model_seed(&self) -> u64 {
        self.seed()
    }

    fn rebuild(spec: &ArchitectureSpec, seed: u64) -> Result<Self> {
        match spec {
            ArchitectureSpec::Deterministic(s) => build_deterministic(s, seed),
            other => Err(kind_mismatch("deterministic", other)),
        }
    }
}

impl Checkpointable for Generator {
    fn architecture(&self) -> ArchitectureSpec {
        ArchitectureSpec::Generator(self.spec().clone())
    }

    fn model_seed(&self) -> u64 {
        self.seed()
    }

    fn rebuild(spec: &ArchitectureSpec, seed: u64) -> Result<Self> {
        match spec {
            ArchitectureSpec::Generator(s) => build_generator(s, seed),
            other => Err(kind_mismatch("generator", other)),
        }
    }
}

impl Checkpointable for Discriminator {
    fn architecture(&self) -> ArchitectureSpec {
        ArchitectureSpec::Discriminator(self.spec().clone())
    }

    fn model_seed(&self) -> u64 {
        self.seed()
    }

    fn rebuild(spec: &ArchitectureSpec, seed: u64) -> Result<Self> {
        match spec {
            ArchitectureSpec::Discriminator(s) => build_discriminator(s, seed),
            other => Err(kind_mismatch("discriminator", other)),
        }
    }
}

fn kind_mismatch(expected: &str, found: &ArchitectureSpec) -> Error {
    Error::CheckpointMismatch(format!("expected a {expected} model, found {}", found.kind()))
}

impl Checkpoint {
    pub fn from_model<M: Checkpointable>(model: &M, scaler: Option<&ScalerState>) -> Self {
        let tensors = model
            .params()
            .into_iter()
            .map(|p| Tensor {
                shape: [p.nrows(), p.ncols()],
                data: p.iter().copied().collect(),
            })
            .collect();
        Self {
            format: FORMAT.into(),
            version: VERSION,
            spec: model.architecture(),
            seed: model.model_seed(),
            parameter_count: model.param_count(),
            scaler: scaler.cloned(),
            tensors,
        }
    }

    pub fn into_model<M: Checkpointable>(&self) -> Result<M> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(Error::CheckpointMismatch(format!(
                "unsupported format {} v{}",
                self.format, self.version
            )));
        }
        let mut model = M::rebuild(&self.spec, self.seed).map_err(|e| match e {
            Error::InvalidSpec(m) => Error::CheckpointMismatch(format!("invalid spec: {m}")),
            other => other,
        })?;
        let mut params = model.params_mut();
        if params.len() != self.tensors.len() {
            return Err(Error::CheckpointMismatch(format!(
                "spec expects {} tensors, checkpoint has {}",
                params.len(),
                self.tensors.len()
            )));
        }
        for (i, (dst, t)) in params.iter_mut().zip(&self.tensors).enumerate() {
            let expected = [dst.nrows(), dst.ncols()];
            if t.shape != expected || t.data.len() != expected[0] * expected[1] {
                return Err(Error::CheckpointMismatch(format!(
                    "tensor {i}: spec expects {expected:?}, checkpoint has {:?} ({} values)",
                    t.shape,
                    t.data.len()
                )));
            }
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::CheckpointMismatch(format!("tensor {i} has non-finite values")));
            }
            dst.assign(&Array2::from_shape_vec((t.shape[0], t.shape[1]), t.data.clone()).expect("shape checked"));
        }
        drop(params);
        if model.param_count() != self.parameter_count {
            return Err(Error::CheckpointMismatch(format!(
                "parameter count {} != recorded {}",
                model.param_count(),
                self.parameter_count
            )));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_json(path.as_ref(), self)
    }

    /// Any unreadable or malformed file is reported as a checkpoint mismatch.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::CheckpointMismatch(format!("unreadable checkpoint {}: {e}", path.display())))
    }
}

pub fn save_model<M: Checkpointable>(model: &M, scaler: Option<&ScalerState>, path: impl AsRef<Path>) -> Result<()> {
    Checkpoint::from_model(model, scaler).save(path)
}

pub fn load_model<M: Checkpointable>(path: impl AsRef<Path>) -> Result<(M, Option<ScalerState>)> {
    let ckpt = Checkpoint::load(path)?;
    let model = ckpt.into_model()?;
    Ok((model, ckpt.scaler))
}

/// A loaded model of any kind.
#[derive(Debug, Clone)]
pub enum ModelHandle {
    Deterministic(DeterministicModel),
    Generator(Generator),
    Discriminator(Discriminator),
}

impl ModelHandle {
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Option<ScalerState>)> {
        let ckpt = Checkpoint::load(path)?;
        let handle = match &ckpt.spec {
            ArchitectureSpec::Deterministic(_) => ModelHandle::Deterministic(ckpt.into_model()?),
            ArchitectureSpec::Generator(_) => ModelHandle::Generator(ckpt.into_model()?),
            ArchitectureSpec::Discriminator(_) => ModelHandle::Discriminator(ckpt.into_model()?),
        };
        Ok((handle, ckpt.scaler))
    }

    pub fn spec(&self) -> ArchitectureSpec {
        match self {
            ModelHandle::Deterministic(m) => m.architecture(),
            ModelHandle::Generator(m) => m.architecture(),
            ModelHandle::Discriminator(m) => m.architecture(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        match self {
            ModelHandle::Deterministic(m) => m.param_count(),
            ModelHandle::Generator(m) => m.param_count(),
            ModelHandle::Discriminator(m) => m.param_count(),
        }
    }
}
