use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::ChainTrace;
use crate::diffcore::Matrix;
use crate::error::{Error, Result};
use crate::targets::Target;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HmcSpec {
    pub leapfrog_steps: usize,
    /// Initial step size; tuned during burn-in.
    pub step_size: f64,
    pub target_accept: f64,
}

impl Default for HmcSpec {
    fn default() -> Self {
        Self { leapfrog_steps: 10, step_size: 0.1, target_accept: 0.65 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HmcResult {
    /// Retained post-burn-in states.
    pub trace: ChainTrace,
    /// Frozen step size after tuning.
    pub step_size: f64,
    /// Mean acceptance probability over the second half of burn-in.
    pub tuning_acceptance: f64,
}

const MAX_ENERGY_ERROR: f64 = 1000.0;
const MAX_HALVINGS: usize = 30;

struct Leap {
    x: Vec<f64>,
    log_alpha: f64,
}

fn hamiltonian(target: &Target, x: &[f64], p: &[f64]) -> Result<f64> {
    Ok(-target.log_density(x)? + 0.5 * p.iter().map(|v| v * v).sum::<f64>())
}

fn trajectory(target: &Target, x0: &[f64], p0: &[f64], eps: f64, steps: usize) -> Result<(Leap, f64)> {
    let h0 = hamiltonian(target, x0, p0)?;
    let mut x = x0.to_vec();
    let mut p = p0.to_vec();
    let mut g = target.grad_log_density(&x)?;
    for _ in 0..steps {
        for (pi, gi) in p.iter_mut().zip(&g) {
            *pi += 0.5 * eps * gi;
        }
        for (xi, pi) in x.iter_mut().zip(&p) {
            *xi += eps * pi;
        }
        g = target.grad_log_density(&x)?;
        for (pi, gi) in p.iter_mut().zip(&g) {
            *pi += 0.5 * eps * gi;
        }
    }
    let h1 = hamiltonian(target, &x, &p)?;
    let dh = h1 - h0;
    let log_alpha = if dh.is_finite() { (-dh).min(0.0) } else { f64::NEG_INFINITY };
    Ok((Leap { x, log_alpha }, dh))
}

/// One HMC transition; returns (state, accepted, log α, |ΔH|).
fn hmc_step<R: Rng + ?Sized>(
    target: &Target,
    x: &[f64],
    eps: f64,
    steps: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, bool, f64, f64)> {
    let p0: Vec<f64> = (0..x.len()).map(|_| StandardNormal.sample(rng)).collect();
    let mut e = eps;
    for _ in 0..MAX_HALVINGS {
        let (leap, dh) = trajectory(target, x, &p0, e, steps)?;
        if dh.is_finite() && dh.abs() <= MAX_ENERGY_ERROR {
            let u: f64 = rng.random();
            let accepted = u.ln() < leap.log_alpha;
            let next = if accepted { leap.x } else { x.to_vec() };
            return Ok((next, accepted, leap.log_alpha, dh.abs()));
        }
        e *= 0.5;
    }
    Err(Error::Kernel(format!("HMC trajectory diverged after {MAX_HALVINGS} step-size halvings from step {eps}")))
}

/// Tune the step size toward `target_accept` during `burn_in` steps with a
/// Robbins-Monro update on log ε, freeze it, then record `n_steps` states.
pub fn hmc_reference_chain<R: Rng + ?Sized>(
    target: &Target,
    spec: &HmcSpec,
    start: &[f64],
    n_steps: usize,
    burn_in: usize,
    seed: u64,
    rng: &mut R,
) -> Result<HmcResult> {
    if !(spec.step_size > 0.0) || spec.leapfrog_steps == 0 {
        return Err(Error::Config("HMC needs a positive step size and at least one leapfrog step".into()));
    }
    let mut x = start.to_vec();
    let mut log_eps = spec.step_size.ln();
    let mut avg_log_eps = log_eps;
    let mut avg_n = 0.0;
    let mut late_alpha = 0.0;
    let mut late_n = 0usize;
    for t in 0..burn_in {
        let (next, _, la, _) = hmc_step(target, &x, log_eps.exp(), spec.leapfrog_steps, rng)?;
        x = next;
        let alpha = la.exp();
        let gain = ((t + 10) as f64).powf(-0.6);
        log_eps += gain * (alpha - spec.target_accept);
        if 2 * t >= burn_in {
            late_alpha += alpha;
            late_n += 1;
            avg_n += 1.0;
            avg_log_eps += (log_eps - avg_log_eps) / avg_n;
        }
    }
    let step_size = if avg_n > 0.0 { avg_log_eps.exp() } else { log_eps.exp() };

    let d = x.len();
    let mut states = Matrix::zeros(n_steps + 1, d);
    states.row_mut(0).copy_from_slice(&x);
    let mut trace = ChainTrace {
        states,
        accept_flags: Vec::with_capacity(n_steps),
        proposal_log_alphas: Vec::with_capacity(n_steps),
        proposed_sq_jumps: Vec::with_capacity(n_steps),
        seed,
    };
    for k in 0..n_steps {
        let (next, acc, la, _) = hmc_step(target, &x, step_size, spec.leapfrog_steps, rng)?;
        let sq: f64 = x.iter().zip(&next).map(|(a, b)| (a - b).powi(2)).sum();
        trace.proposed_sq_jumps.push(if acc { sq } else { f64::NAN });
        x = next;
        trace.states.row_mut(k + 1).copy_from_slice(&x);
        trace.accept_flags.push(acc);
        trace.proposal_log_alphas.push(la);
    }
    let tuning_acceptance = if late_n > 0 { late_alpha / late_n as f64 } else { f64::NAN };
    Ok(HmcResult { trace, step_size, tuning_acceptance })
}

/// Largest |ΔH| over `n` consecutive transitions at a fixed step size.
pub fn max_energy_error<R: Rng + ?Sized>(target: &Target, x: &[f64], eps: f64, steps: usize, n: usize, rng: &mut R) -> Result<f64> {
    let mut worst = 0.0f64;
    let mut cur = x.to_vec();
    for _ in 0..n {
        let (next, _, _, dh) = hmc_step(target, &cur, eps, steps, rng)?;
        worst = worst.max(dh);
        cur = next;
    }
    Ok(worst)
}
