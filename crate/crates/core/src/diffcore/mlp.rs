use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::tape::{Tape, Var};
use crate::error::{config_err, shape_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalTransform {
    Identity,
    Exp,
    Softmax,
}

/// Fully connected ReLU network. Parameters are laid out layer by layer as a
/// row-major `fan_in × fan_out` weight block followed by the bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub hidden_layers: usize,
    pub output_dim: usize,
    pub final_transform: FinalTransform,
}

impl MlpSpec {
    pub fn new(
        input_dim: usize,
        hidden_dim: usize,
        hidden_layers: usize,
        output_dim: usize,
        final_transform: FinalTransform,
    ) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 || (hidden_layers > 0 && hidden_dim == 0) {
            return Err(config_err(format!(
                "mlp dimensions must be positive (in {input_dim}, hidden {hidden_dim}, out {output_dim})"
            )));
        }
        Ok(Self { input_dim, hidden_dim, hidden_layers, output_dim, final_transform })
    }

    /// (fan_in, fan_out) of every affine layer.
    pub fn layers(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim];
        dims.extend(std::iter::repeat_n(self.hidden_dim, self.hidden_layers));
        dims.push(self.output_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn n_params(&self) -> usize {
        self.layers().iter().map(|(i, o)| i * o + o).sum()
    }

    /// Uniform(−s, s) weights and biases with s = fan_in^(−1/2). With
    /// `zero_final` the output layer starts at zero.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R, zero_final: bool) -> Vec<f64> {
        let layers = self.layers();
        let mut out = Vec::with_capacity(self.n_params());
        for (k, &(fan_in, fan_out)) in layers.iter().enumerate() {
            let n = fan_in * fan_out + fan_out;
            if zero_final && k + 1 == layers.len() {
                out.extend(std::iter::repeat_n(0.0, n));
            } else {
                let s = (fan_in as f64).powf(-0.5);
                out.extend((0..n).map(|_| rng.random_range(-s..=s)));
            }
        }
        out
    }

    /// Record the forward pass on `tape`. `params` is the full flat vector of
    /// the owning model and this network's block starts at `offset`.
    pub fn record(&self, tape: &Tape, params: &[f64], offset: usize, input: Var) -> Result<Var> {
        let (_, cols) = tape.shape(input);
        if cols != self.input_dim {
            return Err(shape_err(format!("mlp expects {} inputs, got {cols}", self.input_dim)));
        }
        if params.len() < offset + self.n_params() {
            return Err(shape_err(format!(
                "mlp needs {} parameters at offset {offset}, vector has {}",
                self.n_params(),
                params.len()
            )));
        }
        let layers = self.layers();
        let mut h = input;
        let mut off = offset;
        for (k, &(fan_in, fan_out)) in layers.iter().enumerate() {
            let nw = fan_in * fan_out;
            let w = tape.param(Matrix::new(fan_in, fan_out, params[off..off + nw].to_vec()), off);
            let b = tape.param(Matrix::row_vector(params[off + nw..off + nw + fan_out].to_vec()), off + nw);
            off += nw + fan_out;
            let z = tape.add(tape.matmul(h, w), b);
            h = if k + 1 < layers.len() { tape.relu(z) } else { z };
        }
        Ok(match self.final_transform {
            FinalTransform::Identity => h,
            FinalTransform::Exp => tape.exp(h),
            FinalTransform::Softmax => {
                let lse = tape.logsumexp_rows(h);
                tape.exp(tape.sub(h, lse))
            }
        })
    }

    /// Plain forward pass of a single input vector.
    pub fn apply(&self, params: &[f64], input: &[f64]) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let x = tape.constant(Matrix::row_vector(input.to_vec()));
        let y = self.record(&tape, params, 0, x)?;
        tape.status()?;
        let out = tape.value(y).data.clone();
        Ok(out)
    }
}
