//! Minimal dense/GRU building blocks with hand-derived reverse-mode gradients.
//!
//! Every layer keeps its parameters as `Array2<f64>` fields. Gradients are
//! accumulated into a structurally identical value (`zeros_like`), so an
//! optimizer only has to zip `params_mut()` with `params()`.

mod adam;
mod dense;
mod gru;

pub use adam::{Adam, AdamConfig};
pub use dense::{Dense, Mlp, MlpCache};
pub use gru::{GruCache, GruLayer, GruStack, GruStackCache};

use ndarray::Array2;

pub trait Parameters {
    fn params(&self) -> Vec<&Array2<f64>>;
    fn params_mut(&mut self) -> Vec<&mut Array2<f64>>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn zero(&mut self) {
        for p in self.params_mut() {
            p.fill(0.0);
        }
    }

    fn copy_from(&mut self, other: &Self)
    where
        Self: Sized,
    {
        for (dst, src) in self.params_mut().into_iter().zip(other.params()) {
            dst.assign(src);
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}
