//! Objective functions for proposal optimization, estimated over batches of
//! (start, draw) pairs and differentiable through the reparameterized draws.
//!
//! Every objective is reduced to a per-pair loss t(x, x′) to be minimized;
//! maximized objectives are negated. The estimate is the mean of t over the
//! M·N pairs of a batch.
//!
//! Targets may be unnormalized (the logistic posterior): log π then enters
//! the KL term shifted by a constant that does not depend on the proposal, so
//! gradients and minimizers are unchanged, and it cancels from log α.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Matrix, Tape, Var};
use crate::error::{config_err, Error, Result};
use crate::proposals::{Noise, PairBatch, Proposal};
use crate::targets::Target;

/// Default Ab Initio coefficient.
pub const DEFAULT_A: f64 = 0.18125;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    /// C(d) = A·d
    LinearD,
    /// C(d) = A·d·log d
    DLogD,
}

impl Scaling {
    pub fn coefficient(self, a: f64, d: usize) -> f64 {
        let d = d as f64;
        match self {
            Scaling::LinearD => a * d,
            Scaling::DLogD => a * d * d.ln(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gsm {
    pub beta: f64,
    #[serde(default = "default_rho")]
    pub rho_beta: f64,
    pub target_alpha: f64,
}

fn default_rho() -> f64 {
    0.02
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Minimize,
    Maximize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Objective {
    /// mean[log g(x′|x) − log π(x′)] − C(d)·mean[log α]
    AbInitio { a: f64, scaling: Scaling },
    /// Expected squared jump, mean[α·‖x′−x‖²] (maximized).
    Msjd,
    /// mean[σ²/δ − δ/σ²] with δ = α·‖x′−x‖².
    L2hmc { sigma_min_sq: f64 },
    /// mean[−β log g(x′|x) + log α] (maximized).
    Gsm(Gsm),
    /// mean[−log g(x)] over the starts, for unconditional proposals.
    Nll,
    /// mean[log g(x′|x) − log π(x′)]
    KlTerm,
    /// −mean[log α]
    NegLogAlpha,
    WeightedCombo { components: Vec<Objective>, weights: Vec<f64> },
}

/// Result of one batch estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchEstimate {
    /// Objective value in its natural direction.
    pub value: f64,
    /// Value to minimize (−value for maximized objectives).
    pub loss: f64,
    /// Standard error of `loss`, from per-start means when M ≥ 2.
    pub loss_se: f64,
    /// Gradient of `loss` with respect to the proposal parameters.
    pub gradient: Vec<f64>,
    pub m_starts: usize,
    pub n_draws: usize,
    pub mean_log_alpha: f64,
    pub mean_kl_term: f64,
    /// mean[min(1, ratio)]
    pub mean_alpha: f64,
    /// mean[α·‖x′−x‖²]
    pub mean_sq_jump: f64,
}

struct Terms {
    log_alpha: Var,
    alpha: Var,
    kl: Var,
    sq_jump: Var,
}

impl Objective {
    pub fn ab_initio() -> Self {
        Objective::AbInitio { a: DEFAULT_A, scaling: Scaling::LinearD }
    }

    pub fn direction(&self) -> Direction {
        match self {
            Objective::Msjd | Objective::Gsm(_) => Direction::Maximize,
            _ => Direction::Minimize,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Objective::AbInitio { a, .. } if !(*a > 0.0) => Err(config_err(format!("Ab Initio coefficient must be positive, got {a}"))),
            Objective::L2hmc { sigma_min_sq } if !(*sigma_min_sq > 0.0) => {
                Err(config_err(format!("sigma_min_sq must be positive, got {sigma_min_sq}")))
            }
            Objective::Gsm(g) if !(g.beta > 0.0) || !(g.target_alpha > 0.0 && g.target_alpha < 1.0) => Err(config_err(format!(
                "GSM needs beta > 0 and target_alpha in (0, 1), got {} and {}",
                g.beta, g.target_alpha
            ))),
            Objective::WeightedCombo { components, weights } => {
                if components.is_empty() || components.len() != weights.len() {
                    return Err(config_err("weighted combination needs one positive weight per component"));
                }
                if let Some(w) = weights.iter().find(|w| !(**w > 0.0)) {
                    return Err(config_err(format!("combination weights must be positive, got {w}")));
                }
                components.iter().try_for_each(Objective::validate)
            }
            _ => Ok(()),
        }
    }
}

/// β ← β·(1 + ρ_β·(α_current − α_target)).
///
/// Raising β rewards proposal entropy and so lowers acceptance, hence β
/// shrinks while acceptance is below target.
pub fn gsm_beta_update(gsm: Gsm, current_alpha: f64) -> Gsm {
    let factor = 1.0 + gsm.rho_beta * (current_alpha - gsm.target_alpha);
    Gsm { beta: gsm.beta * factor.max(f64::MIN_POSITIVE), ..gsm }
}

/// Positive weighted combination Σ wᵢ·Lᵢ of sign-normalized objectives.
pub fn combine(components: Vec<Objective>, weights: Vec<f64>) -> Result<Objective> {
    let o = Objective::WeightedCombo { components, weights };
    o.validate()?;
    Ok(o)
}

/// Draw fresh randomness and estimate the objective on `n` draws per start.
pub fn estimate<R: Rng + ?Sized>(
    objective: &Objective,
    target: &Target,
    proposal: &Proposal,
    starts: &Matrix,
    n: usize,
    rng: &mut R,
) -> Result<BatchEstimate> {
    let noise = proposal.sample_noise(target, starts.rows * n, rng)?;
    estimate_with_noise(objective, target, proposal, starts, n, &noise)
}

/// Estimate with given randomness (common random numbers across calls).
pub fn estimate_with_noise(
    objective: &Objective,
    target: &Target,
    proposal: &Proposal,
    starts: &Matrix,
    n: usize,
    noise: &Noise,
) -> Result<BatchEstimate> {
    objective.validate()?;
    if starts.rows == 0 || n == 0 {
        return Err(config_err("estimate needs at least one start and one draw"));
    }
    let tape = Tape::new();
    let pairs = proposal.record_batch(&tape, target, starts, n, noise)?;
    let terms = record_terms(&tape, target, &pairs)?;
    let nll = if objective_uses_nll(objective) {
        let s = tape.repeat_rows(tape.constant(starts.clone()), n);
        Some(tape.neg(proposal.record_log_density(&tape, target, s, s)?))
    } else {
        None
    };
    let rows = record_objective_rows(objective, &tape, &terms, &pairs, nll, target.dim())?;
    tape.status()?;

    let row_vals = tape.value(rows).data.clone();
    if let Some(i) = row_vals.iter().position(|v| !v.is_finite()) {
        let x = tape.value(pairs.x).row(i).to_vec();
        let xp = tape.value(pairs.x_prime).row(i).to_vec();
        return Err(Error::Training(format!("non-finite objective term at x = {x:?}, x' = {xp:?}")));
    }
    let loss_var = tape.mean(rows);
    let grads = tape.backward(loss_var)?;
    let loss = tape.scalar_value(loss_var);
    let sign = match objective.direction() {
        Direction::Minimize => 1.0,
        Direction::Maximize => -1.0,
    };
    let mean = |v: Var| {
        let m = tape.value(v);
        m.data.iter().sum::<f64>() / m.len() as f64
    };
    let alpha_jump = {
        let a = tape.value(terms.alpha);
        let s = tape.value(terms.sq_jump);
        a.data.iter().zip(&s.data).map(|(a, s)| a * s).sum::<f64>() / a.len() as f64
    };
    Ok(BatchEstimate {
        value: sign * loss,
        loss,
        loss_se: standard_error(&row_vals, starts.rows, n),
        gradient: grads.flat_params(proposal.n_params()),
        m_starts: starts.rows,
        n_draws: n,
        mean_log_alpha: mean(terms.log_alpha),
        mean_kl_term: mean(terms.kl),
        mean_alpha: mean(terms.alpha),
        mean_sq_jump: alpha_jump,
    })
}

fn objective_uses_nll(o: &Objective) -> bool {
    match o {
        Objective::Nll => true,
        Objective::WeightedCombo { components, .. } => components.iter().any(objective_uses_nll),
        _ => false,
    }
}

fn record_terms(tape: &Tape, target: &Target, pairs: &PairBatch) -> Result<Terms> {
    let lp_x = target.record_log_density(tape, pairs.x)?;
    let lp_xp = target.record_log_density(tape, pairs.x_prime)?;
    let ratio = tape.sub(tape.add(lp_xp, pairs.log_rev), tape.add(lp_x, pairs.log_fwd));
    let log_alpha = tape.min0(ratio);
    let alpha = tape.exp(log_alpha);
    let kl = tape.sub(pairs.log_fwd, lp_xp);
    let sq_jump = tape.sum_rows(tape.square(tape.sub(pairs.x_prime, pairs.x)));
    Ok(Terms { log_alpha, alpha, kl, sq_jump })
}

/// Per-row loss contributions, `rows × 1`.
fn record_objective_rows(
    objective: &Objective,
    tape: &Tape,
    terms: &Terms,
    pairs: &PairBatch,
    nll: Option<Var>,
    dim: usize,
) -> Result<Var> {
    Ok(match objective {
        Objective::AbInitio { a, scaling } => {
            let c = scaling.coefficient(*a, dim);
            tape.sub(terms.kl, tape.scale(terms.log_alpha, c))
        }
        Objective::Msjd => tape.neg(tape.mul(terms.alpha, terms.sq_jump)),
        Objective::L2hmc { sigma_min_sq } => {
            // a tiny floor keeps σ²/δ finite when every draw is rejected
            let delta = tape.shift(tape.mul(terms.alpha, terms.sq_jump), 1e-12);
            let inv = tape.div(tape.constant(Matrix::scalar(*sigma_min_sq)), delta);
            tape.sub(inv, tape.scale(delta, 1.0 / sigma_min_sq))
        }
        Objective::Gsm(g) => tape.sub(tape.scale(pairs.log_fwd, g.beta), terms.log_alpha),
        Objective::Nll => nll.ok_or_else(|| Error::Training("NLL requires start densities".into()))?,
        Objective::KlTerm => terms.kl,
        Objective::NegLogAlpha => tape.neg(terms.log_alpha),
        Objective::WeightedCombo { components, weights } => {
            let mut acc: Option<Var> = None;
            for (c, w) in components.iter().zip(weights) {
                let r = tape.scale(record_objective_rows(c, tape, terms, pairs, nll, dim)?, *w);
                acc = Some(match acc {
                    None => r,
                    Some(a) => tape.add(a, r),
                });
            }
            acc.expect("validated non-empty")
        }
    })
}

fn standard_error(rows: &[f64], m: usize, n: usize) -> f64 {
    let groups: Vec<f64> = if m >= 2 {
        rows.chunks(n).map(|c| c.iter().sum::<f64>() / n as f64).collect()
    } else {
        rows.to_vec()
    };
    let k = groups.len() as f64;
    if k < 2.0 {
        return f64::NAN;
    }
    let mean = groups.iter().sum::<f64>() / k;
    let var = groups.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (var / k).sqrt()
}
