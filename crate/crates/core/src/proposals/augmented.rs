use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Proposal;
use crate::error::{config_err, Result};
use crate::targets::Target;

/// A proposal over (x, aux) whose auxiliary coordinates are redrawn from
/// N(0, I) before every Metropolis-Hastings proposal.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedProposal {
    pub inner: Proposal,
    pub aux: usize,
}

impl AugmentedProposal {
    pub fn new(inner: Proposal, aux: usize) -> Result<Self> {
        if aux == 0 || aux >= inner.dim {
            return Err(config_err(format!("auxiliary count {aux} must be in 1..{}", inner.dim)));
        }
        Ok(Self { inner, aux })
    }

    pub fn base_dim(&self) -> usize {
        self.inner.dim - self.aux
    }

    /// Joint target π(x)·N(aux; 0, I) matching this proposal.
    pub fn joint_target(&self, base: Target) -> Result<Target> {
        if base.dim() != self.base_dim() {
            return Err(config_err(format!("base target has dimension {}, expected {}", base.dim(), self.base_dim())));
        }
        Target::augmented(base, self.aux)
    }

    /// Overwrite the auxiliary tail of a joint state with fresh normals.
    pub fn refresh<R: Rng + ?Sized>(&self, state: &mut [f64], rng: &mut R) {
        let d = self.base_dim();
        for v in &mut state[d..] {
            *v = StandardNormal.sample(rng);
        }
    }
}
