//! Parameterized conditional proposals g_θ(x′|x) with reparameterized sampling
//! and exact conditional log-densities.
//!
//! Every proposal is evaluated on a [`Tape`] over batches: `starts` holds M
//! distinct current states and each is paired with N draws, giving M·N rows.
//! State-dependent networks are evaluated once per start and broadcast to
//! their N draws. The randomness of a batch lives in a [`Noise`] value so that
//! the same draws can be replayed under different parameters.

mod augmented;
mod checkpoint;

pub use augmented::AugmentedProposal;
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointHeader};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffcore::{FinalTransform, Matrix, MlpSpec, NiceFlowSpec, Tape, Var};
use crate::error::{config_err, shape_err, Error, Result};
use crate::targets::{Target, TargetKind, HALF_LN_2PI};

/// How the data-space location μ_D of the multi-scheme proposal is formed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum DataShift {
    /// μ_D(x) = x + net(x)
    Residual,
    /// μ_D(x) = net(x)
    Absolute,
    /// μ_D(x) = x + τ∇log π(x); the network is unused.
    Langevin { tau: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiSchemeSpec {
    pub mu_l: MlpSpec,
    pub log_sigma_l: MlpSpec,
    pub mu_d: MlpSpec,
    pub log_sigma_d: MlpSpec,
    pub flow: NiceFlowSpec,
    pub data_shift: DataShift,
}

/// Parameter offsets of the multi-scheme networks inside the flat vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MultiSchemeLayout {
    pub mu_l: usize,
    pub log_sigma_l: usize,
    pub mu_d: usize,
    pub log_sigma_d: usize,
    pub flow: usize,
    pub total: usize,
}

impl MultiSchemeSpec {
    pub fn layout(&self) -> MultiSchemeLayout {
        let mu_l = 0;
        let log_sigma_l = mu_l + self.mu_l.n_params();
        let mu_d = log_sigma_l + self.log_sigma_l.n_params();
        let log_sigma_d = mu_d + self.mu_d.n_params();
        let flow = log_sigma_d + self.log_sigma_d.n_params();
        let total = flow + self.flow.n_params();
        MultiSchemeLayout { mu_l, log_sigma_l, mu_d, log_sigma_d, flow, total }
    }
}

/// Network sizes for [`Proposal::multischeme`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiSchemeNets {
    pub hidden: usize,
    pub depth: usize,
    pub coupling_layers: usize,
    pub coupling_hidden: usize,
    pub coupling_depth: usize,
}

impl MultiSchemeNets {
    /// Sizes used on the two-dimensional cross mixture.
    pub fn cross(coupling_layers: usize) -> Self {
        Self { hidden: 16, depth: 4, coupling_layers, coupling_hidden: 6, coupling_depth: 3 }
    }

    /// Sizes used on logistic posteriors with `total_dim` = original plus auxiliary coordinates.
    pub fn logistic(total_dim: usize) -> Self {
        Self {
            hidden: 3 * total_dim,
            depth: 4,
            coupling_layers: 5,
            coupling_hidden: 3 * total_dim,
            coupling_depth: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ProposalKind {
    /// x′ ~ N(x, τ²I); θ = log τ.
    IsoRwm,
    /// x′ ~ N(x + τ∇log π(x), 2τI); θ = log τ.
    IsoMala,
    /// x′ ~ N(x, diag v); θ = log v.
    PrecondRwm,
    /// x′ ~ N(x + (v/2)⊙∇log π(x), diag v); θ = log v.
    PrecondMala,
    /// Position-independent gaussian components with weights from a softmax network.
    PositionMixture { components: usize, weights: MlpSpec },
    MultiScheme(MultiSchemeSpec),
    /// Unconditional flow x′ = T(m + s⊙n).
    ResamplingFlow { flow: NiceFlowSpec },
    /// x′ = c·y with y ~ π; θ = log c. At c = 1 this is exact i.i.d. resampling.
    ExactResampler,
    /// The inner proposal transported through the affine map of an affine-pushforward target.
    Pushforward { inner: Box<ProposalKind> },
}

/// A proposal family together with its trainable parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Proposal {
    pub kind: ProposalKind,
    pub dim: usize,
    pub params: Vec<f64>,
}

/// Randomness consumed by one batch of draws.
#[derive(Clone, Debug, PartialEq)]
pub struct Noise {
    pub normals: Matrix,
    pub uniforms: Vec<f64>,
    pub base: Option<Matrix>,
}

impl Noise {
    pub fn rows(&self) -> usize {
        self.normals.rows
    }
}

/// Tape nodes of a batch of proposal pairs; all are `M·N`-row matrices.
#[derive(Clone, Copy, Debug)]
pub struct PairBatch {
    pub x: Var,
    pub x_prime: Var,
    pub log_fwd: Var,
    pub log_rev: Var,
}

/// One concrete draw from g(·|x).
#[derive(Clone, Debug, PartialEq)]
pub struct ProposalDraw {
    pub value: Vec<f64>,
    pub log_density: f64,
    pub pathwise: bool,
}

/// Values of a batch of draws without gradient information.
#[derive(Clone, Debug, PartialEq)]
pub struct DrawValues {
    pub x_prime: Matrix,
    pub log_fwd: Vec<f64>,
    pub log_rev: Vec<f64>,
}

fn log_std_normal_rows(tape: &Tape, n: Var) -> Var {
    let d = tape.shape(n).1 as f64;
    tape.shift(tape.scale(tape.sum_rows(tape.square(n)), -0.5), -d * HALF_LN_2PI)
}

fn const_rows(tape: &Tape, m: &Matrix) -> Var {
    tape.constant(m.clone())
}

impl Proposal {
    fn with_params(kind: ProposalKind, dim: usize, params: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(config_err("proposal dimension must be positive"));
        }
        let p = Self { kind, dim, params };
        let need = p.kind.n_params(dim);
        if p.params.len() != need {
            return Err(shape_err(format!("proposal expects {need} parameters, got {}", p.params.len())));
        }
        Ok(p)
    }

    pub fn iso_rwm(dim: usize, tau: f64) -> Result<Self> {
        Self::with_params(ProposalKind::IsoRwm, dim, vec![tau.ln()])
    }

    pub fn iso_mala(dim: usize, tau: f64) -> Result<Self> {
        Self::with_params(ProposalKind::IsoMala, dim, vec![tau.ln()])
    }

    pub fn precond_rwm(dim: usize, variance: f64) -> Result<Self> {
        Self::with_params(ProposalKind::PrecondRwm, dim, vec![variance.ln(); dim])
    }

    pub fn precond_mala(dim: usize, variance: f64) -> Result<Self> {
        Self::with_params(ProposalKind::PrecondMala, dim, vec![variance.ln(); dim])
    }

    /// Mixture with weights from an MLP `dim → hidden×depth → components`.
    /// Components start at `means` with unit scale and the weight network's
    /// output layer starts at zero, so the initial weights are uniform.
    pub fn position_mixture<R: Rng + ?Sized>(
        dim: usize,
        hidden: usize,
        depth: usize,
        means: &[Vec<f64>],
        rng: &mut R,
    ) -> Result<Self> {
        let components = means.len();
        if components == 0 || means.iter().any(|m| m.len() != dim) {
            return Err(config_err("mixture needs at least one component mean of the proposal dimension"));
        }
        let weights = MlpSpec::new(dim, hidden, depth, components, FinalTransform::Softmax)?;
        let mut params = weights.init(rng, true);
        params.extend(means.iter().flatten());
        params.extend(std::iter::repeat_n(0.0, components * dim));
        Self::with_params(ProposalKind::PositionMixture { components, weights }, dim, params)
    }

    /// Multi-scheme proposal. Location networks and log-scale networks start
    /// with zero output layers, so the initial proposal is x′ = x + T(n) with
    /// a residual shift and the independence proposal x′ = T(n) with an
    /// absolute one.
    pub fn multischeme<R: Rng + ?Sized>(dim: usize, nets: MultiSchemeNets, data_shift: DataShift, rng: &mut R) -> Result<Self> {
        if dim % 2 != 0 {
            return Err(config_err(format!(
                "multi-scheme proposals need an even dimension, got {dim}; augment with one auxiliary coordinate"
            )));
        }
        let net = |t| MlpSpec::new(dim, nets.hidden, nets.depth, dim, t);
        let spec = MultiSchemeSpec {
            mu_l: net(FinalTransform::Identity)?,
            log_sigma_l: net(FinalTransform::Identity)?,
            mu_d: net(FinalTransform::Identity)?,
            log_sigma_d: net(FinalTransform::Identity)?,
            flow: NiceFlowSpec::new(dim, nets.coupling_layers, nets.coupling_hidden, nets.coupling_depth)?,
            data_shift,
        };
        let mut params = Vec::with_capacity(spec.layout().total);
        params.extend(spec.mu_l.init(rng, true));
        params.extend(spec.log_sigma_l.init(rng, true));
        params.extend(spec.mu_d.init(rng, true));
        params.extend(spec.log_sigma_d.init(rng, true));
        params.extend(spec.flow.init(rng, false));
        Self::with_params(ProposalKind::MultiScheme(spec), dim, params)
    }

    /// Unconditional flow proposal with a standard latent.
    pub fn resampling_flow<R: Rng + ?Sized>(dim: usize, coupling_layers: usize, hidden: usize, depth: usize, rng: &mut R) -> Result<Self> {
        let flow = NiceFlowSpec::new(dim, coupling_layers, hidden, depth)?;
        let mut params = vec![0.0; 2 * dim];
        params.extend(flow.init(rng, false));
        Self::with_params(ProposalKind::ResamplingFlow { flow }, dim, params)
    }

    pub fn exact_resampler(dim: usize) -> Result<Self> {
        Self::with_params(ProposalKind::ExactResampler, dim, vec![0.0])
    }

    /// `inner` transported through the affine map of the target it is used with.
    pub fn pushforward(inner: Proposal) -> Self {
        Self { kind: ProposalKind::Pushforward { inner: Box::new(inner.kind) }, dim: inner.dim, params: inner.params }
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Step size τ of the isotropic kinds.
    pub fn step_size(&self) -> Option<f64> {
        match self.kind {
            ProposalKind::IsoRwm | ProposalKind::IsoMala => Some(self.params[0].exp()),
            _ => None,
        }
    }

    /// True when the proposal evaluates ∇log π.
    pub fn uses_gradient(&self) -> bool {
        self.kind.uses_gradient()
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    fn check_target(&self, target: &Target) -> Result<()> {
        if target.dim() != self.dim {
            return Err(shape_err(format!("proposal dimension {} does not match target dimension {}", self.dim, target.dim())));
        }
        Ok(())
    }

    /// Draw the randomness for `rows` proposals.
    pub fn sample_noise<R: Rng + ?Sized>(&self, target: &Target, rows: usize, rng: &mut R) -> Result<Noise> {
        self.check_target(target)?;
        self.kind.sample_noise(target, self.dim, rows, rng)
    }

    /// Record `n` draws from each of the `starts` rows together with forward
    /// and reverse log-densities.
    pub fn record_batch(&self, tape: &Tape, target: &Target, starts: &Matrix, n: usize, noise: &Noise) -> Result<PairBatch> {
        self.check_target(target)?;
        if starts.cols != self.dim {
            return Err(shape_err(format!("starts have {} columns, proposal dimension is {}", starts.cols, self.dim)));
        }
        if noise.rows() != starts.rows * n {
            return Err(shape_err(format!("noise has {} rows, batch needs {}", noise.rows(), starts.rows * n)));
        }
        let (x, x_prime, log_fwd) = self.kind.record_forward(tape, &self.params, target, starts, n, noise)?;
        let xp = tape.value(x_prime);
        if let Some(bad) = xp.data.iter().position(|v| !v.is_finite()) {
            let row = bad / xp.cols / n;
            return Err(Error::Proposal { x: starts.row(row).to_vec(), detail: "non-finite proposal output".into() });
        }
        drop(xp);
        let log_rev = self.kind.record_log_density(tape, &self.params, target, x_prime, x)?;
        Ok(PairBatch { x, x_prime, log_fwd, log_rev })
    }

    /// Row-wise log g(to | from) for two equally shaped batches.
    pub fn record_log_density(&self, tape: &Tape, target: &Target, from: Var, to: Var) -> Result<Var> {
        self.check_target(target)?;
        self.kind.record_log_density(tape, &self.params, target, from, to)
    }

    /// One draw per row of `states`, without gradients.
    pub fn propose_batch<R: Rng + ?Sized>(&self, target: &Target, states: &Matrix, rng: &mut R) -> Result<DrawValues> {
        let noise = self.sample_noise(target, states.rows, rng)?;
        let tape = Tape::new();
        let b = self.record_batch(&tape, target, states, 1, &noise)?;
        tape.status()?;
        let x_prime = tape.value(b.x_prime).clone();
        let log_fwd = tape.value(b.log_fwd).data.clone();
        let log_rev = tape.value(b.log_rev).data.clone();
        Ok(DrawValues { x_prime, log_fwd, log_rev })
    }

    pub fn sample<R: Rng + ?Sized>(&self, target: &Target, x: &[f64], rng: &mut R) -> Result<ProposalDraw> {
        let v = self.propose_batch(target, &Matrix::row_vector(x.to_vec()), rng)?;
        Ok(ProposalDraw { value: v.x_prime.data, log_density: v.log_fwd[0], pathwise: true })
    }

    pub fn log_density(&self, target: &Target, x: &[f64], x_prime: &[f64]) -> Result<f64> {
        if x.len() != self.dim || x_prime.len() != self.dim {
            return Err(shape_err(format!("both points must have dimension {}", self.dim)));
        }
        let tape = Tape::new();
        let from = tape.constant(Matrix::row_vector(x.to_vec()));
        let to = tape.constant(Matrix::row_vector(x_prime.to_vec()));
        let v = self.record_log_density(&tape, target, from, to)?;
        tape.status()?;
        let out = tape.value(v).data[0];
        Ok(out)
    }
}

fn param_row(tape: &Tape, params: &[f64], off: usize, len: usize) -> Var {
    tape.param(Matrix::row_vector(params[off..off + len].to_vec()), off)
}

fn score_rows(target: &Target, m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(m.rows, m.cols);
    for i in 0..m.rows {
        out.row_mut(i).copy_from_slice(&target.grad_log_density(m.row(i)).expect("dimension checked"));
    }
    out
}

fn identity_logits(spec: &MlpSpec) -> MlpSpec {
    MlpSpec { final_transform: FinalTransform::Identity, ..spec.clone() }
}

fn affine_of(target: &Target) -> Result<&crate::targets::Affine> {
    match target.kind() {
        TargetKind::AffinePushforward(aff) => Ok(aff),
        _ => Err(config_err("a pushforward proposal must be used with an affine-pushforward target")),
    }
}

impl ProposalKind {
    pub fn n_params(&self, dim: usize) -> usize {
        match self {
            ProposalKind::IsoRwm | ProposalKind::IsoMala | ProposalKind::ExactResampler => 1,
            ProposalKind::PrecondRwm | ProposalKind::PrecondMala => dim,
            ProposalKind::PositionMixture { components, weights } => weights.n_params() + 2 * components * dim,
            ProposalKind::MultiScheme(spec) => spec.layout().total,
            ProposalKind::ResamplingFlow { flow } => 2 * dim + flow.n_params(),
            ProposalKind::Pushforward { inner } => inner.n_params(dim),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ProposalKind::IsoRwm => "iso_rwm",
            ProposalKind::IsoMala => "iso_mala",
            ProposalKind::PrecondRwm => "precond_rwm",
            ProposalKind::PrecondMala => "precond_mala",
            ProposalKind::PositionMixture { .. } => "position_mixture",
            ProposalKind::MultiScheme(_) => "multi_scheme",
            ProposalKind::ResamplingFlow { .. } => "resampling_flow",
            ProposalKind::ExactResampler => "exact_resampler",
            ProposalKind::Pushforward { .. } => "pushforward",
        }
    }

    fn uses_gradient(&self) -> bool {
        match self {
            ProposalKind::IsoMala | ProposalKind::PrecondMala => true,
            ProposalKind::MultiScheme(s) => matches!(s.data_shift, DataShift::Langevin { .. }),
            ProposalKind::Pushforward { inner } => inner.uses_gradient(),
            _ => false,
        }
    }

    fn sample_noise<R: Rng + ?Sized>(&self, target: &Target, dim: usize, rows: usize, rng: &mut R) -> Result<Noise> {
        let normals = Matrix::new(rows, dim, (0..rows * dim).map(|_| StandardNormal.sample(rng)).collect());
        let mut noise = Noise { normals, uniforms: Vec::new(), base: None };
        match self {
            ProposalKind::PositionMixture { .. } => noise.uniforms = (0..rows).map(|_| rng.random::<f64>()).collect(),
            ProposalKind::ExactResampler => {
                let mut base = Matrix::zeros(rows, dim);
                for i in 0..rows {
                    base.row_mut(i).copy_from_slice(&target.direct_sample(rng)?);
                }
                noise.base = Some(base);
            }
            ProposalKind::Pushforward { inner } => {
                let aff = affine_of(target)?;
                return inner.sample_noise(&aff.base, dim, rows, rng);
            }
            _ => {}
        }
        Ok(noise)
    }

    /// Returns (x repeated to M·N rows, x′, log g(x′|x)).
    fn record_forward(
        &self,
        tape: &Tape,
        params: &[f64],
        target: &Target,
        starts: &Matrix,
        n: usize,
        noise: &Noise,
    ) -> Result<(Var, Var, Var)> {
        let d = starts.cols;
        let s = const_rows(tape, starts);
        let x = tape.repeat_rows(s, n);
        let eps = tape.constant(noise.normals.clone());
        match self {
            ProposalKind::IsoRwm => {
                let lt = param_row(tape, params, 0, 1);
                let xp = tape.add(x, tape.mul(tape.exp(lt), eps));
                let lf = tape.sub(log_std_normal_rows(tape, eps), tape.scale(lt, d as f64));
                Ok((x, xp, lf))
            }
            ProposalKind::IsoMala => {
                let lt = param_row(tape, params, 0, 1);
                let tau = tape.exp(lt);
                let g = tape.repeat_rows(tape.constant(score_rows(target, starts)), n);
                // log √(2τ)
                let lsd = tape.shift(tape.scale(lt, 0.5), 0.5 * 2f64.ln());
                let xp = tape.add(tape.add(x, tape.mul(tau, g)), tape.mul(tape.exp(lsd), eps));
                let lf = tape.sub(log_std_normal_rows(tape, eps), tape.scale(lsd, d as f64));
                Ok((x, xp, lf))
            }
            ProposalKind::PrecondRwm | ProposalKind::PrecondMala => {
                let lv = param_row(tape, params, 0, d);
                let sd = tape.exp(tape.scale(lv, 0.5));
                let mut mean = x;
                if matches!(self, ProposalKind::PrecondMala) {
                    let g = tape.repeat_rows(tape.constant(score_rows(target, starts)), n);
                    mean = tape.add(x, tape.mul(tape.scale(tape.exp(lv), 0.5), g));
                }
                let xp = tape.add(mean, tape.mul(sd, eps));
                let lf = tape.sub(log_std_normal_rows(tape, eps), tape.scale(tape.sum(lv), 0.5));
                Ok((x, xp, lf))
            }
            ProposalKind::PositionMixture { components, weights } => {
                let k = *components;
                let wn = weights.n_params();
                let logits = identity_logits(weights).record(tape, params, 0, s)?;
                let probs = {
                    let l = tape.value(logits);
                    let mut p = Matrix::zeros(l.rows, k);
                    for i in 0..l.rows {
                        let lse = crate::diffcore::logsumexp(l.row(i));
                        for j in 0..k {
                            p.set(i, j, (l.get(i, j) - lse).exp());
                        }
                    }
                    p
                };
                let choice: Vec<usize> = (0..starts.rows * n)
                    .map(|r| {
                        let row = probs.row(r / n);
                        let u = noise.uniforms[r];
                        let mut acc = 0.0;
                        for (j, p) in row.iter().enumerate() {
                            acc += p;
                            if u < acc {
                                return j;
                            }
                        }
                        k - 1
                    })
                    .collect();
                let means = tape.param(Matrix::new(k, d, params[wn..wn + k * d].to_vec()), wn);
                let lsd = tape.param(Matrix::new(k, d, params[wn + k * d..wn + 2 * k * d].to_vec()), wn + k * d);
                let mu = tape.gather_rows(means, choice.clone());
                let sd = tape.exp(tape.gather_rows(lsd, choice));
                let xp = tape.add(mu, tape.mul(sd, eps));
                let lf = self.record_log_density(tape, params, target, x, xp)?;
                Ok((x, xp, lf))
            }
            ProposalKind::MultiScheme(spec) => {
                let lay = spec.layout();
                let u = spec.flow.inverse(tape, params, lay.flow, s)?;
                let ml = tape.repeat_rows(spec.mu_l.record(tape, params, lay.mu_l, u)?, n);
                let lsl = tape.repeat_rows(spec.log_sigma_l.record(tape, params, lay.log_sigma_l, u)?, n);
                let md = tape.repeat_rows(data_shift(spec, tape, params, target, s)?, n);
                let lsd = tape.repeat_rows(spec.log_sigma_d.record(tape, params, lay.log_sigma_d, s)?, n);
                let z = tape.add(ml, tape.mul(tape.exp(lsl), eps));
                let (y, _) = spec.flow.forward(tape, params, lay.flow, z)?;
                let xp = tape.add(md, tape.mul(tape.exp(lsd), y));
                let lf = tape.sub(
                    tape.sub(log_std_normal_rows(tape, eps), tape.sum_rows(lsl)),
                    tape.sum_rows(lsd),
                );
                Ok((x, xp, lf))
            }
            ProposalKind::ResamplingFlow { flow } => {
                let m = param_row(tape, params, 0, d);
                let ls = param_row(tape, params, d, d);
                let z = tape.add(m, tape.mul(tape.exp(ls), eps));
                let (xp, _) = flow.forward(tape, params, 2 * d, z)?;
                let lf = tape.sub(log_std_normal_rows(tape, eps), tape.sum(ls));
                Ok((x, xp, lf))
            }
            ProposalKind::ExactResampler => {
                let base = noise.base.as_ref().ok_or_else(|| Error::Capability("resampler noise lacks target draws".into()))?;
                let lc = param_row(tape, params, 0, 1);
                let xp = tape.mul(tape.constant(base.clone()), tape.exp(lc));
                let lf = self.record_log_density(tape, params, target, x, xp)?;
                Ok((x, xp, lf))
            }
            ProposalKind::Pushforward { inner } => {
                let aff = affine_of(target)?;
                let starts_base = pull_back_values(aff, starts);
                let (_, xpb, lfb) = inner.record_forward(tape, params, &aff.base, &starts_base, n, noise)?;
                let xp = tape.add(tape.matmul(xpb, tape.constant(aff.a.transpose())), tape.constant(Matrix::row_vector(aff.b.clone())));
                let lf = tape.shift(lfb, -aff.log_abs_det);
                Ok((x, xp, lf))
            }
        }
    }

    fn record_log_density(&self, tape: &Tape, params: &[f64], target: &Target, from: Var, to: Var) -> Result<Var> {
        let d = tape.shape(from).1;
        match self {
            ProposalKind::IsoRwm => {
                let lt = param_row(tape, params, 0, 1);
                let r = tape.div(tape.sub(to, from), tape.exp(lt));
                Ok(tape.sub(log_std_normal_rows(tape, r), tape.scale(lt, d as f64)))
            }
            ProposalKind::IsoMala => {
                let lt = param_row(tape, params, 0, 1);
                let tau = tape.exp(lt);
                let g = target.record_score(tape, from)?;
                let mean = tape.add(from, tape.mul(tau, g));
                let lsd = tape.shift(tape.scale(lt, 0.5), 0.5 * 2f64.ln());
                let r = tape.div(tape.sub(to, mean), tape.exp(lsd));
                Ok(tape.sub(log_std_normal_rows(tape, r), tape.scale(lsd, d as f64)))
            }
            ProposalKind::PrecondRwm | ProposalKind::PrecondMala => {
                let lv = param_row(tape, params, 0, d);
                let mut mean = from;
                if matches!(self, ProposalKind::PrecondMala) {
                    let g = target.record_score(tape, from)?;
                    mean = tape.add(from, tape.mul(tape.scale(tape.exp(lv), 0.5), g));
                }
                let r = tape.div(tape.sub(to, mean), tape.exp(tape.scale(lv, 0.5)));
                Ok(tape.sub(log_std_normal_rows(tape, r), tape.scale(tape.sum(lv), 0.5)))
            }
            ProposalKind::PositionMixture { components, weights } => {
                let k = *components;
                let wn = weights.n_params();
                let logits = identity_logits(weights).record(tape, params, 0, from)?;
                let logw = tape.sub(logits, tape.logsumexp_rows(logits));
                let mut comps = Vec::with_capacity(k);
                for j in 0..k {
                    let mu = param_row(tape, params, wn + j * d, d);
                    let lsd = param_row(tape, params, wn + k * d + j * d, d);
                    let r = tape.div(tape.sub(to, mu), tape.exp(lsd));
                    comps.push(tape.sub(log_std_normal_rows(tape, r), tape.sum(lsd)));
                }
                let joint = tape.add(logw, tape.concat_cols(&comps));
                Ok(tape.logsumexp_rows(joint))
            }
            ProposalKind::MultiScheme(spec) => {
                let lay = spec.layout();
                let md = data_shift(spec, tape, params, target, from)?;
                let lsd = spec.log_sigma_d.record(tape, params, lay.log_sigma_d, from)?;
                let y = tape.div(tape.sub(to, md), tape.exp(lsd));
                let z = spec.flow.inverse(tape, params, lay.flow, y)?;
                let u = spec.flow.inverse(tape, params, lay.flow, from)?;
                let ml = spec.mu_l.record(tape, params, lay.mu_l, u)?;
                let lsl = spec.log_sigma_l.record(tape, params, lay.log_sigma_l, u)?;
                let nr = tape.div(tape.sub(z, ml), tape.exp(lsl));
                Ok(tape.sub(tape.sub(log_std_normal_rows(tape, nr), tape.sum_rows(lsl)), tape.sum_rows(lsd)))
            }
            ProposalKind::ResamplingFlow { flow } => {
                let m = param_row(tape, params, 0, d);
                let ls = param_row(tape, params, d, d);
                let z = flow.inverse(tape, params, 2 * d, to)?;
                let nr = tape.div(tape.sub(z, m), tape.exp(ls));
                Ok(tape.sub(log_std_normal_rows(tape, nr), tape.sum(ls)))
            }
            ProposalKind::ExactResampler => {
                let lc = param_row(tape, params, 0, 1);
                let y = tape.div(to, tape.exp(lc));
                let lp = target.record_log_density(tape, y)?;
                Ok(tape.sub(lp, tape.scale(lc, d as f64)))
            }
            ProposalKind::Pushforward { inner } => {
                let aff = affine_of(target)?;
                let a_inv_t = tape.constant(aff.a_inv.transpose());
                let b = tape.constant(Matrix::row_vector(aff.b.clone()));
                let fb = tape.matmul(tape.sub(from, b), a_inv_t);
                let tb = tape.matmul(tape.sub(to, b), a_inv_t);
                let lb = inner.record_log_density(tape, params, &aff.base, fb, tb)?;
                Ok(tape.shift(lb, -aff.log_abs_det))
            }
        }
    }
}

fn pull_back_values(aff: &crate::targets::Affine, z: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(z.rows, z.cols);
    for i in 0..z.rows {
        let shifted: Vec<f64> = z.row(i).iter().zip(&aff.b).map(|(a, b)| a - b).collect();
        out.row_mut(i).copy_from_slice(&aff.a_inv.matvec(&shifted));
    }
    out
}

fn data_shift(spec: &MultiSchemeSpec, tape: &Tape, params: &[f64], target: &Target, x: Var) -> Result<Var> {
    let lay = spec.layout();
    Ok(match spec.data_shift {
        DataShift::Residual => tape.add(x, spec.mu_d.record(tape, params, lay.mu_d, x)?),
        DataShift::Absolute => spec.mu_d.record(tape, params, lay.mu_d, x)?,
        DataShift::Langevin { tau } => tape.add(x, tape.scale(target.record_score(tape, x)?, tau)),
    })
}
