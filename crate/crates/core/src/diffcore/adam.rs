use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(n_params: usize, step_size: f64) -> Self {
        Self {
            step_size,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
            step_count: 0,
        }
    }

    /// One bias-corrected descent step. Leaves everything untouched if any
    /// gradient entry is non-finite.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return Err(Error::Shape(format!(
                "adam: {} params, {} grads, state for {}",
                params.len(),
                grads.len(),
                self.first_moment.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Training(format!("non-finite gradient {} at parameter {i}", grads[i])));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let mhat = *m / c1;
            let vhat = *v / c2;
            *p -= self.step_size * mhat / (vhat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}
