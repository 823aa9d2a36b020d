use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{FinalTransform, MlpSpec};
use super::tape::{Tape, Var};
use crate::error::{config_err, Result};

/// Stack of additive coupling layers. Even layers shift the second half of the
/// coordinates by a function of the first half; odd layers do the reverse.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NiceFlowSpec {
    pub dim: usize,
    pub coupling_layers: usize,
    pub coupling_net: MlpSpec,
}

impl NiceFlowSpec {
    pub fn new(dim: usize, coupling_layers: usize, hidden_dim: usize, hidden_layers: usize) -> Result<Self> {
        if dim == 0 || dim % 2 != 0 {
            return Err(config_err(format!("NICE flow dimension must be even and positive, got {dim}")));
        }
        if coupling_layers == 0 {
            return Err(config_err("NICE flow needs at least one coupling layer"));
        }
        let half = dim / 2;
        let coupling_net = MlpSpec::new(half, hidden_dim, hidden_layers, half, FinalTransform::Identity)?;
        Ok(Self { dim, coupling_layers, coupling_net })
    }

    pub fn n_params(&self) -> usize {
        self.coupling_layers * self.coupling_net.n_params()
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R, zero_final: bool) -> Vec<f64> {
        (0..self.coupling_layers).flat_map(|_| self.coupling_net.init(rng, zero_final)).collect()
    }

    fn layer(&self, tape: &Tape, params: &[f64], offset: usize, l: usize, z: Var, sign: f64) -> Result<Var> {
        let half = self.dim / 2;
        let a = tape.slice_cols(z, 0, half);
        let b = tape.slice_cols(z, half, half);
        let off = offset + l * self.coupling_net.n_params();
        let (cond, moved) = if l % 2 == 0 { (a, b) } else { (b, a) };
        let m = self.coupling_net.record(tape, params, off, cond)?;
        let shifted = if sign > 0.0 { tape.add(moved, m) } else { tape.sub(moved, m) };
        Ok(if l % 2 == 0 { tape.concat_cols(&[cond, shifted]) } else { tape.concat_cols(&[shifted, cond]) })
    }

    /// x = T(z), applied row-wise. The log-determinant is identically zero.
    pub fn forward(&self, tape: &Tape, params: &[f64], offset: usize, z: Var) -> Result<(Var, f64)> {
        let mut h = z;
        for l in 0..self.coupling_layers {
            h = self.layer(tape, params, offset, l, h, 1.0)?;
        }
        Ok((h, 0.0))
    }

    /// z = T⁻¹(x).
    pub fn inverse(&self, tape: &Tape, params: &[f64], offset: usize, x: Var) -> Result<Var> {
        let mut h = x;
        for l in (0..self.coupling_layers).rev() {
            h = self.layer(tape, params, offset, l, h, -1.0)?;
        }
        Ok(h)
    }
}
