//! Gradient-update steps, optimization loops and coefficient fitting.

mod fit;

pub use fit::{fit_coefficient, FitMethod, FitOutcome, FitProbe, FitReference, FitSpec};

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffcore::{AdamState, Matrix};
use crate::error::{config_err, Error, Result};
use crate::kernels::{log_acceptance, run_chains, MhKernel};
use crate::objectives::{estimate, gsm_beta_update, Objective};
use crate::proposals::Proposal;
use crate::targets::{Target, TargetKind};
use crate::SeededRng;

pub const DEFAULT_LEARNING_RATE: f64 = 3e-4;
pub const LOSS_LOG_INTERVAL: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Fresh starts drawn from π every step.
    OfflineSampling,
    /// Starts are M persistent chains advanced after every update.
    OnlineAdaptation,
}

/// Retrain a replicate with a new seed when its final loss exceeds the best
/// replicate's by more than `threshold` (relative).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestartPolicy {
    pub threshold: f64,
    pub max_restarts: usize,
}

impl Default for RestartPolicy {
    fn default() -> Self {
        Self { threshold: 0.25, max_restarts: 3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub algorithm: Algorithm,
    pub n_steps: usize,
    pub m_starts: usize,
    pub n_draws: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub restart: Option<RestartPolicy>,
}

impl TrainSpec {
    /// Algorithm 1 with M=1, N=50 and Adam at 3e-4.
    pub fn verification(n_steps: usize, seed: u64) -> Self {
        Self {
            algorithm: Algorithm::OfflineSampling,
            n_steps,
            m_starts: 1,
            n_draws: 50,
            learning_rate: DEFAULT_LEARNING_RATE,
            seed,
            restart: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_starts == 0 || self.n_draws == 0 {
            return Err(config_err("training needs M ≥ 1 and N ≥ 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(config_err(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        Ok(())
    }
}

/// Adam step size for a target: 3e-4, reduced to 3e-3/d for the stabilized
/// uniform (3e-5, 3e-6, 3e-7 at d = 100, 1000, 10000).
pub fn default_learning_rate(target: &Target) -> f64 {
    let base = match target.kind() {
        TargetKind::Augmented { base, .. } => base.as_ref(),
        _ => target,
    };
    match base.kind() {
        TargetKind::StabilizedUniform => DEFAULT_LEARNING_RATE.min(3e-3 / base.dim() as f64),
        _ => DEFAULT_LEARNING_RATE,
    }
}

/// Where training and evaluation starts come from.
#[derive(Clone, Debug)]
pub enum StartSource {
    /// Exact draws from the target.
    Direct,
    /// Rows drawn uniformly from a stored chain over the base coordinates;
    /// any remaining target coordinates are filled with standard normals.
    Trace(Arc<Matrix>),
}

impl StartSource {
    pub fn for_target(target: &Target) -> Result<Self> {
        if target.can_sample() {
            Ok(Self::Direct)
        } else {
            Err(Error::Capability(format!("{} cannot be sampled directly; supply a reference trace", target.name())))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, target: &Target, m: usize, rng: &mut R) -> Result<Matrix> {
        let d = target.dim();
        let mut out = Matrix::zeros(m, d);
        for i in 0..m {
            match self {
                StartSource::Direct => out.row_mut(i).copy_from_slice(&target.direct_sample(rng)?),
                StartSource::Trace(states) => {
                    if states.rows == 0 || states.cols > d {
                        return Err(config_err(format!(
                            "reference trace of shape {:?} cannot seed a target of dimension {d}",
                            states.shape()
                        )));
                    }
                    let k = rng.random_range(0..states.rows);
                    let row = out.row_mut(i);
                    row[..states.cols].copy_from_slice(states.row(k));
                    for v in &mut row[states.cols..] {
                        *v = StandardNormal.sample(rng);
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub loss: f64,
    pub mean_alpha: f64,
    pub mean_log_alpha: f64,
    /// Reason the update was skipped, if it was.
    pub rejected: Option<String>,
}

fn recoverable(e: &Error) -> bool {
    matches!(e, Error::Training(_) | Error::Domain { .. } | Error::Proposal { .. })
}

fn update_on_starts<R: Rng + ?Sized>(
    objective: &mut Objective,
    target: &Target,
    proposal: &mut Proposal,
    starts: &Matrix,
    n: usize,
    adam: &mut AdamState,
    rng: &mut R,
) -> Result<StepReport> {
    let est = match estimate(objective, target, proposal, starts, n, rng) {
        Ok(e) => e,
        Err(e) if recoverable(&e) => {
            return Ok(StepReport { loss: f64::NAN, mean_alpha: f64::NAN, mean_log_alpha: f64::NAN, rejected: Some(e.to_string()) })
        }
        Err(e) => return Err(e),
    };
    let mut report = StepReport { loss: est.loss, mean_alpha: est.mean_alpha, mean_log_alpha: est.mean_log_alpha, rejected: None };
    if let Err(e) = adam.step(&mut proposal.params, &est.gradient) {
        report.rejected = Some(e.to_string());
        return Ok(report);
    }
    if let Objective::Gsm(g) = objective {
        *g = gsm_beta_update(*g, est.mean_alpha);
    }
    Ok(report)
}

/// One update from M fresh starts × N draws.
#[allow(clippy::too_many_arguments)]
pub fn algorithm1_step<R: Rng + ?Sized>(
    objective: &mut Objective,
    target: &Target,
    proposal: &mut Proposal,
    m: usize,
    n: usize,
    source: &StartSource,
    adam: &mut AdamState,
    rng: &mut R,
) -> Result<StepReport> {
    let starts = source.sample(target, m, rng)?;
    update_on_starts(objective, target, proposal, &starts, n, adam, rng)
}

/// One update from the persistent chain states, after which every chain
/// advances one Metropolis-Hastings step under the updated proposal.
#[allow(clippy::too_many_arguments)]
pub fn algorithm2_step<R: Rng + ?Sized>(
    objective: &mut Objective,
    target: &Target,
    proposal: &mut Proposal,
    states: &mut Matrix,
    n: usize,
    aux: usize,
    adam: &mut AdamState,
    rng: &mut R,
) -> Result<StepReport> {
    let report = update_on_starts(objective, target, proposal, states, n, adam, rng)?;
    let kernel = MhKernel::augmented(target, proposal, aux);
    let traces = run_chains(&kernel, states, 1, 0, rng)?;
    for (i, t) in traces.iter().enumerate() {
        states.row_mut(i).copy_from_slice(t.states.row(1));
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub proposal: Proposal,
    /// Objective after training (carries the adapted GSM β).
    pub objective: Objective,
    /// (step, mean loss over the preceding interval).
    pub loss_curve: Vec<(usize, f64)>,
    pub final_loss: f64,
    pub rejected_steps: usize,
    pub seed: u64,
}

/// Run `spec.n_steps` updates and record the mean loss every 100 steps.
pub fn optimize(
    spec: &TrainSpec,
    objective: &Objective,
    target: &Target,
    proposal: &Proposal,
    source: &StartSource,
    aux: usize,
) -> Result<TrainOutcome> {
    spec.validate()?;
    objective.validate()?;
    let mut rng = SeededRng::seed_from_u64(spec.seed);
    let mut objective = objective.clone();
    let mut proposal = proposal.clone();
    let mut adam = AdamState::new(proposal.n_params(), spec.learning_rate);
    let mut states = match spec.algorithm {
        Algorithm::OnlineAdaptation => Some(source.sample(target, spec.m_starts, &mut rng)?),
        Algorithm::OfflineSampling => None,
    };
    let mut loss_curve = Vec::with_capacity(spec.n_steps / LOSS_LOG_INTERVAL + 1);
    let mut window = Vec::with_capacity(LOSS_LOG_INTERVAL);
    let mut rejected_steps = 0;
    for step in 1..=spec.n_steps {
        let r = match states.as_mut() {
            None => algorithm1_step(&mut objective, target, &mut proposal, spec.m_starts, spec.n_draws, source, &mut adam, &mut rng)?,
            Some(s) => algorithm2_step(&mut objective, target, &mut proposal, s, spec.n_draws, aux, &mut adam, &mut rng)?,
        };
        if r.rejected.is_some() {
            rejected_steps += 1;
        }
        if r.loss.is_finite() {
            window.push(r.loss);
        }
        if step % LOSS_LOG_INTERVAL == 0 || step == spec.n_steps {
            if !window.is_empty() {
                loss_curve.push((step, window.iter().sum::<f64>() / window.len() as f64));
            }
            window.clear();
        }
    }
    if rejected_steps == spec.n_steps && spec.n_steps > 0 {
        return Err(Error::Training(format!("all {rejected_steps} updates were rejected")));
    }
    let final_loss = loss_curve.last().map(|&(_, l)| l).unwrap_or(f64::NAN);
    Ok(TrainOutcome { proposal, objective, loss_curve, final_loss, rejected_steps, seed: spec.seed })
}

/// Seed for replicate `r` (and restart `k`) derived from a base seed.
pub fn replicate_seed(base: u64, replicate: usize, restart: usize) -> u64 {
    let mut z = base ^ ((replicate as u64) << 32) ^ (restart as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Train `replicates` independent runs concurrently. `train(seed)` runs one
/// replicate; with a restart policy, outliers are retrained with new seeds.
pub fn train_replicates<F>(replicates: usize, base_seed: u64, policy: Option<RestartPolicy>, train: F) -> Result<Vec<TrainOutcome>>
where
    F: Fn(u64) -> Result<TrainOutcome> + Sync,
{
    let mut outcomes: Vec<TrainOutcome> =
        (0..replicates).into_par_iter().map(|r| train(replicate_seed(base_seed, r, 0))).collect::<Result<_>>()?;
    let Some(policy) = policy else { return Ok(outcomes) };
    for k in 1..=policy.max_restarts {
        let best = outcomes.iter().map(|o| o.final_loss).fold(f64::INFINITY, f64::min);
        let limit = best + policy.threshold * best.abs();
        let redo: Vec<usize> = (0..outcomes.len()).filter(|&i| !(outcomes[i].final_loss <= limit)).collect();
        if redo.is_empty() {
            break;
        }
        let fresh: Vec<(usize, TrainOutcome)> = redo
            .into_par_iter()
            .map(|i| train(replicate_seed(base_seed, i, k)).map(|o| (i, o)))
            .collect::<Result<_>>()?;
        for (i, o) in fresh {
            outcomes[i] = o;
        }
    }
    Ok(outcomes)
}

/// Mean acceptance probability E[α] of single proposals from `n` starts.
pub fn expected_acceptance<R: Rng + ?Sized>(
    target: &Target,
    proposal: &Proposal,
    source: &StartSource,
    n: usize,
    rng: &mut R,
) -> Result<f64> {
    const CHUNK: usize = 5000;
    let mut total = 0.0;
    let mut done = 0;
    while done < n {
        let rows = CHUNK.min(n - done);
        let starts = source.sample(target, rows, rng)?;
        let draws = proposal.propose_batch(target, &starts, rng)?;
        for i in 0..rows {
            total += log_acceptance(target, starts.row(i), draws.x_prime.row(i), draws.log_fwd[i], draws.log_rev[i])?.exp();
        }
        done += rows;
    }
    Ok(total / n as f64)
}
