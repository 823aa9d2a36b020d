//! Reverse-mode differentiation, neural building blocks and the optimizer.

mod adam;
mod matrix;
mod mlp;
mod nice;
mod tape;

pub use adam::AdamState;
pub use matrix::Matrix;
pub use mlp::{FinalTransform, MlpSpec};
pub use nice::NiceFlowSpec;
pub use tape::{logsumexp, Gradients, RowVjp, Tape, Var};

use crate::error::Result;

/// Record a scalar expression of `params` and return its value and gradient.
pub fn record_and_backward<F>(params: &[f64], f: F) -> Result<(f64, Vec<f64>)>
where
    F: FnOnce(&Tape, Var) -> Result<Var>,
{
    let tape = Tape::new();
    let p = tape.param(Matrix::row_vector(params.to_vec()), 0);
    let out = f(&tape, p)?;
    let grads = tape.backward(out)?;
    Ok((tape.scalar_value(out), grads.flat_params(params.len())))
}
