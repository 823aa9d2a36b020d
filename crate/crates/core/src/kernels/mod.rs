//! Metropolis-Hastings stepping, chain execution and a tuned HMC reference
//! sampler.

mod hmc;
mod trace_io;

pub use hmc::{hmc_reference_chain, max_energy_error, HmcResult, HmcSpec};
pub use trace_io::{read_trace, sha256_hex, sidecar_path, write_trace, TraceSidecar};

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};

use crate::diffcore::Matrix;
use crate::error::{Error, Result};
use crate::proposals::Proposal;
use crate::targets::Target;
use crate::SeededRng;
use rayon::prelude::*;

/// Ordered chain states with the outcome of every proposal.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainTrace {
    /// `(n_steps + 1) × d`
    pub states: Matrix,
    pub accept_flags: Vec<bool>,
    pub proposal_log_alphas: Vec<f64>,
    /// Squared jump ‖x′ − x‖² of every proposal over the original coordinates,
    /// whether or not it was accepted.
    pub proposed_sq_jumps: Vec<f64>,
    pub seed: u64,
}

impl ChainTrace {
    pub fn n_steps(&self) -> usize {
        self.accept_flags.len()
    }

    pub fn n_accepted(&self) -> usize {
        self.accept_flags.iter().filter(|&&a| a).count()
    }

    /// The first `d` coordinates of every state.
    pub fn restrict(&self, d: usize) -> ChainTrace {
        let mut states = Matrix::zeros(self.states.rows, d);
        for i in 0..self.states.rows {
            states.row_mut(i).copy_from_slice(&self.states.row(i)[..d]);
        }
        ChainTrace { states, ..self.clone() }
    }
}

/// Target, proposal and the number of auxiliary coordinates to refresh
/// before each proposal (0 for none).
#[derive(Clone, Copy, Debug)]
pub struct MhKernel<'a> {
    pub target: &'a Target,
    pub proposal: &'a Proposal,
    pub aux: usize,
}

impl<'a> MhKernel<'a> {
    pub fn new(target: &'a Target, proposal: &'a Proposal) -> Self {
        Self { target, proposal, aux: 0 }
    }

    pub fn augmented(target: &'a Target, proposal: &'a Proposal, aux: usize) -> Self {
        Self { target, proposal, aux }
    }

    fn base_dim(&self) -> usize {
        self.target.dim() - self.aux
    }
}

/// min(0, log π(x′) + log g(x|x′) − log π(x) − log g(x′|x)).
pub fn log_acceptance(target: &Target, x: &[f64], x_prime: &[f64], log_g_forward: f64, log_g_reverse: f64) -> Result<f64> {
    let lp = target.log_density(x)?;
    let lpp = target.log_density(x_prime)?;
    log_acceptance_from(lp, lpp, log_g_forward, log_g_reverse)
}

pub fn log_acceptance_from(log_pi_x: f64, log_pi_xp: f64, log_g_forward: f64, log_g_reverse: f64) -> Result<f64> {
    let terms = [log_pi_x, log_pi_xp, log_g_forward, log_g_reverse];
    if terms.iter().any(|t| !t.is_finite()) {
        return Err(Error::Kernel(format!(
            "non-finite acceptance input (log π(x) {log_pi_x}, log π(x') {log_pi_xp}, log g fwd {log_g_forward}, rev {log_g_reverse})"
        )));
    }
    Ok((log_pi_xp + log_g_reverse - log_pi_x - log_g_forward).min(0.0))
}

/// One Metropolis-Hastings transition.
pub fn mh_step<R: Rng + ?Sized>(kernel: &MhKernel, state: &[f64], rng: &mut R) -> Result<(Vec<f64>, bool, f64)> {
    let mut traces = step_many(kernel, &Matrix::row_vector(state.to_vec()), rng)?;
    let (s, acc, la, _) = traces.pop().expect("one chain");
    Ok((s, acc, la))
}

/// Advance every row of `states` by one transition; returns per chain
/// (new state, accepted, log α, squared jump of the proposal).
fn step_many<R: Rng + ?Sized>(kernel: &MhKernel, states: &Matrix, rng: &mut R) -> Result<Vec<(Vec<f64>, bool, f64, f64)>> {
    let mut current = states.clone();
    if kernel.aux > 0 {
        let d = kernel.base_dim();
        for i in 0..current.rows {
            for v in &mut current.row_mut(i)[d..] {
                *v = StandardNormal.sample(rng);
            }
        }
    }
    let draws = kernel.proposal.propose_batch(kernel.target, &current, rng)?;
    let d = kernel.base_dim();
    let mut out = Vec::with_capacity(current.rows);
    for i in 0..current.rows {
        let x = current.row(i);
        let xp = draws.x_prime.row(i);
        let la = log_acceptance(kernel.target, x, xp, draws.log_fwd[i], draws.log_rev[i])?;
        let u: f64 = rng.random();
        let accepted = u.ln() < la;
        let sq: f64 = x[..d].iter().zip(&xp[..d]).map(|(a, b)| (a - b).powi(2)).sum();
        let next = if accepted { xp.to_vec() } else { x.to_vec() };
        out.push((next, accepted, la, sq));
    }
    Ok(out)
}

/// Run independent chains from each row of `starts` in lockstep, sharing one
/// proposal evaluation per step.
pub fn run_chains<R: Rng + ?Sized>(kernel: &MhKernel, starts: &Matrix, n_steps: usize, seed: u64, rng: &mut R) -> Result<Vec<ChainTrace>> {
    let c = starts.rows;
    let d = starts.cols;
    let mut traces: Vec<ChainTrace> = (0..c)
        .map(|i| {
            let mut states = Matrix::zeros(n_steps + 1, d);
            states.row_mut(0).copy_from_slice(starts.row(i));
            ChainTrace {
                states,
                accept_flags: Vec::with_capacity(n_steps),
                proposal_log_alphas: Vec::with_capacity(n_steps),
                proposed_sq_jumps: Vec::with_capacity(n_steps),
                seed,
            }
        })
        .collect();
    let mut current = starts.clone();
    for k in 0..n_steps {
        let results = step_many(kernel, &current, rng)?;
        for (i, (s, acc, la, sq)) in results.into_iter().enumerate() {
            current.row_mut(i).copy_from_slice(&s);
            let t = &mut traces[i];
            t.states.row_mut(k + 1).copy_from_slice(&s);
            t.accept_flags.push(acc);
            t.proposal_log_alphas.push(la);
            t.proposed_sq_jumps.push(sq);
        }
    }
    Ok(traces)
}

/// Run one chain per row of `starts` concurrently, chain `i` owning the
/// generator seeded with `base_seed + i`.
pub fn run_independent_chains(kernel: &MhKernel, starts: &Matrix, n_steps: usize, base_seed: u64) -> Result<Vec<ChainTrace>> {
    (0..starts.rows)
        .into_par_iter()
        .map(|i| {
            let seed = base_seed.wrapping_add(i as u64);
            let mut rng = SeededRng::seed_from_u64(seed);
            run_chain(kernel, starts.row(i), n_steps, seed, &mut rng)
        })
        .collect()
}

pub fn run_chain<R: Rng + ?Sized>(kernel: &MhKernel, start: &[f64], n_steps: usize, seed: u64, rng: &mut R) -> Result<ChainTrace> {
    let mut v = run_chains(kernel, &Matrix::row_vector(start.to_vec()), n_steps, seed, rng)?;
    Ok(v.pop().expect("one chain"))
}
