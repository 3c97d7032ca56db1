//! Dense layers, an LSTM cell, Adam, and a finite-difference oracle, all in `f64`.

mod adam;
mod dense;
mod gradcheck;
mod lstm;
mod matrix;

pub use adam::{Adam, AdamConfig};
pub use dense::{Activation, DenseGrads, DenseLayer, Mlp};
pub use gradcheck::{finite_diff_grad, GradCheck};
pub use lstm::{LstmCell, LstmStepCache};
pub use matrix::{all_finite, concat, dot, sigmoid, Matrix};

use crate::error::{check_dim, Result};

/// Read-only view of one named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamView<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

impl<'a> ParamView<'a> {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: &'a [f64]) -> Self {
        Self {
            name: name.into(),
            shape,
            data,
        }
    }

    pub fn prefixed(self, prefix: &str) -> Self {
        Self {
            name: format!("{prefix}.{}", self.name),
            ..self
        }
    }
}

/// Anything that owns a fixed, ordered set of real parameter tensors.
///
/// Gradients, optimizer state and target copies all use the flat order given
/// by `tensors`/`tensors_mut`, which must agree.
pub trait Parameterized {
    fn tensors(&self) -> Vec<ParamView<'_>>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for t in self.tensors() {
            out.extend_from_slice(t.data);
        }
        out
    }

    fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        check_dim("set_flat_params", self.num_params(), flat.len())?;
        let mut off = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }
}
