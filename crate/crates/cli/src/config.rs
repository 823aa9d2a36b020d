//! Experiment configuration: one TOML file per experiment.

use std::path::{Path, PathBuf};

use abinitio_core::kernels::HmcSpec;
use abinitio_core::objectives::{combine, Gsm, Objective, Scaling, DEFAULT_A};
use abinitio_core::proposals::{load_checkpoint, DataShift, MultiSchemeNets, Proposal};
use abinitio_core::targets::{LogisticDataset, Target, TargetKind};
use abinitio_core::training::{default_learning_rate, Algorithm, FitMethod, RestartPolicy, TrainSpec};
use abinitio_core::SeededRng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// A config that failed to parse or validate, with the offending key path.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.path.is_empty() {
            write!(f, "invalid config: {}", self.message)
        } else {
            write!(f, "invalid config at `{}`: {}", self.path, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

fn err(path: &str, message: impl std::fmt::Display) -> ConfigError {
    ConfigError { path: path.to_string(), message: message.to_string() }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    FitCoefficient,
    Verify,
    Optimize,
    Evaluate,
    DensityGrid,
    SchemeCompare,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::FitCoefficient => "fit-coefficient",
            Self::Verify => "verify",
            Self::Optimize => "optimize",
            Self::Evaluate => "evaluate",
            Self::DensityGrid => "density-grid",
            Self::SchemeCompare => "scheme-compare",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default = "one")]
    pub workers: usize,
    /// Auxiliary gaussian coordinates appended to the target.
    #[serde(default)]
    pub aux: usize,
    pub target: TargetConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposal: Option<ProposalConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<ObjectiveConfig>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub reference: ReferenceConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub schemes: Vec<SchemeConfig>,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetConfig {
    IsoGaussian { dim: usize },
    IsoLaplace { dim: usize },
    IsoCauchy { dim: usize },
    StabilizedUniform { dim: usize },
    Cross,
    Logistic { data: LogisticData },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum LogisticData {
    /// Header row, feature columns, label column last (0/1).
    Csv(PathBuf),
    Synthetic { rows: usize, features: usize, seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shift {
    Residual,
    Absolute,
    Langevin,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProposalConfig {
    /// Step size defaults to 1/√d.
    Rwm {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        step_size: Option<f64>,
    },
    Mala {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        step_size: Option<f64>,
    },
    /// Per-coordinate variance defaults to 1/d.
    PrecondRwm {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        variance: Option<f64>,
    },
    PrecondMala {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        variance: Option<f64>,
    },
    /// Network sizes default to the cross or logistic presets by target.
    Multischeme {
        #[serde(default = "default_coupling_layers")]
        coupling_layers: usize,
        #[serde(default = "default_shift")]
        shift: Shift,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        langevin_tau: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        hidden: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        depth: Option<usize>,
    },
    /// Component means default to the cross centers on the cross target.
    Mixture {
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        means: Vec<Vec<f64>>,
        #[serde(default = "default_mixture_hidden")]
        hidden: usize,
        #[serde(default = "default_mixture_depth")]
        depth: usize,
    },
    ResamplingFlow {
        #[serde(default = "default_coupling_layers")]
        coupling_layers: usize,
        #[serde(default = "default_flow_hidden")]
        hidden: usize,
        #[serde(default = "default_flow_depth")]
        depth: usize,
    },
    ExactResampler,
    Checkpoint { path: PathBuf },
}

fn default_coupling_layers() -> usize {
    8
}
fn default_shift() -> Shift {
    Shift::Residual
}
fn default_mixture_hidden() -> usize {
    16
}
fn default_mixture_depth() -> usize {
    2
}
fn default_flow_hidden() -> usize {
    6
}
fn default_flow_depth() -> usize {
    3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveConfig {
    AbInitio {
        #[serde(default = "default_a")]
        a: f64,
        #[serde(default = "default_scaling")]
        scaling: Scaling,
    },
    Msjd,
    /// σ²_min defaults to the target's smallest marginal variance.
    L2hmc {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sigma_min_sq: Option<f64>,
    },
    /// β defaults to 1/d.
    Gsm {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        beta: Option<f64>,
        #[serde(default = "default_rho")]
        rho_beta: f64,
        target_alpha: f64,
    },
    Nll,
    Combo { components: Vec<ObjectiveConfig>, weights: Vec<f64> },
}

fn default_a() -> f64 {
    DEFAULT_A
}
fn default_scaling() -> Scaling {
    Scaling::LinearD
}
fn default_rho() -> f64 {
    0.02
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_algorithm")]
    pub algorithm: Algorithm,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "one")]
    pub m_starts: usize,
    #[serde(default = "default_draws")]
    pub n_draws: usize,
    /// Defaults to 3e-4, or 3e-3/d on the stabilized uniform.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    /// Retrain replicates stuck in local optima.
    #[serde(default)]
    pub restart: bool,
}

fn default_algorithm() -> Algorithm {
    Algorithm::OfflineSampling
}
fn default_steps() -> usize {
    20_000
}
fn default_draws() -> usize {
    50
}
fn default_replicates() -> usize {
    5
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            algorithm: default_algorithm(),
            steps: default_steps(),
            m_starts: 1,
            n_draws: default_draws(),
            learning_rate: None,
            replicates: default_replicates(),
            restart: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "default_chains")]
    pub chains: usize,
    #[serde(default = "default_proposals_per_chain")]
    pub proposals_per_chain: usize,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    /// Single proposals from fresh starts used by `verify`.
    #[serde(default = "default_single")]
    pub single_proposals: usize,
    #[serde(default = "default_score_starts")]
    pub score_starts: usize,
    #[serde(default = "default_score_draws")]
    pub score_draws: usize,
}

fn default_chains() -> usize {
    5
}
fn default_proposals_per_chain() -> usize {
    1000
}
fn default_single() -> usize {
    25_000
}
fn default_score_starts() -> usize {
    1000
}
fn default_score_draws() -> usize {
    20
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            chains: default_chains(),
            proposals_per_chain: default_proposals_per_chain(),
            replicates: default_replicates(),
            single_proposals: default_single(),
            score_starts: default_score_starts(),
            score_draws: default_score_draws(),
        }
    }
}

/// HMC reference chain used for starts when the target has no direct sampler.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceConfig {
    #[serde(default = "default_reference_steps")]
    pub steps: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default = "default_leapfrog")]
    pub leapfrog_steps: usize,
}

fn default_reference_steps() -> usize {
    100_000
}
fn default_burn_in() -> usize {
    2000
}
fn default_leapfrog() -> usize {
    10
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self { steps: default_reference_steps(), burn_in: default_burn_in(), leapfrog_steps: default_leapfrog() }
    }
}

impl ReferenceConfig {
    pub fn hmc(&self) -> HmcSpec {
        HmcSpec { leapfrog_steps: self.leapfrog_steps, ..HmcSpec::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    #[serde(default = "default_target_acceptance")]
    pub target_acceptance: f64,
    #[serde(default = "default_initial_a")]
    pub initial_a: f64,
    #[serde(default = "default_fit_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_scaling")]
    pub scaling: Scaling,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    /// Probe values of A; a non-empty list selects the linear fit instead of the secant.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub probes: Vec<f64>,
}

fn default_target_acceptance() -> f64 {
    0.234
}
fn default_initial_a() -> f64 {
    0.25
}
fn default_fit_tolerance() -> f64 {
    0.005
}
fn default_max_iterations() -> usize {
    12
}

impl FitConfig {
    pub fn method(&self) -> FitMethod {
        if self.probes.is_empty() {
            FitMethod::NewtonRaphsonSecant
        } else {
            FitMethod::LinearAlphaFit { probes: self.probes.clone() }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// [x_min, x_max, y_min, y_max]
    pub bounds: [f64; 4],
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    pub anchors: Vec<[f64; 2]>,
}

fn default_resolution() -> usize {
    200
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeConfig {
    pub name: String,
    pub proposal: ProposalConfig,
    /// Trained with the `[train]` block when present, used as given otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<ObjectiveConfig>,
    /// Must match the experiment target when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<TargetConfig>,
}

/// Parse TOML text, reporting the key path of the first error.
pub fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let de = toml::Deserializer::new(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        err(if path == "." { "" } else { &path }, inner.message())
    })
}

pub fn load(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| err("", format!("cannot read {}: {e}", path.display())))?;
    parse(&text)
}

impl ExperimentConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs always serialize")
    }

    /// First 12 hex digits of the SHA-256 of the normalized config, with the
    /// seed and output location excluded.
    pub fn hash(&self) -> String {
        let normalized = ExperimentConfig { seed: 0, out: None, workers: 1, ..self.clone() };
        let digest = Sha256::digest(normalized.to_toml().as_bytes());
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }

    /// Check every block the experiment uses before any compute starts.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.workers == 0 {
            return Err(err("workers", "must be at least 1"));
        }
        if self.seed > i64::MAX as u64 {
            return Err(err("seed", "must be at most 2^63 - 1"));
        }
        let target = self.build_target()?;
        let train = &self.train;
        if train.steps == 0 || train.m_starts == 0 || train.n_draws == 0 || train.replicates == 0 {
            return Err(err("train", "steps, m_starts, n_draws and replicates must be positive"));
        }
        if let Some(lr) = train.learning_rate {
            if !(lr > 0.0) {
                return Err(err("train.learning_rate", "must be positive"));
            }
        }
        let e = &self.eval;
        if e.chains == 0 || e.proposals_per_chain < 4 || e.replicates == 0 || e.single_proposals == 0 || e.score_starts == 0 || e.score_draws == 0 {
            return Err(err("eval", "chains, replicates and sample counts must be positive, with at least 4 proposals per chain"));
        }
        if !target.can_sample() && (self.reference.steps == 0 || self.reference.leapfrog_steps == 0) {
            return Err(err("reference", "steps and leapfrog_steps must be positive"));
        }
        let needs_objective = matches!(self.experiment, ExperimentKind::Verify | ExperimentKind::Optimize);
        let needs_proposal = !matches!(self.experiment, ExperimentKind::SchemeCompare);
        if needs_proposal {
            let p = self.proposal.as_ref().ok_or_else(|| err("proposal", "this experiment needs a [proposal] block"))?;
            self.build_proposal(p, &target, "proposal")?;
        }
        if needs_objective {
            let o = self.objective.as_ref().ok_or_else(|| err("objective", "this experiment needs an [objective] block"))?;
            build_objective(o, &target, "objective")?;
        }
        match self.experiment {
            ExperimentKind::FitCoefficient => {
                let f = self.fit.as_ref().ok_or_else(|| err("fit", "fit-coefficient needs a [fit] block"))?;
                if !(f.target_acceptance > 0.0 && f.target_acceptance < 1.0) {
                    return Err(err("fit.target_acceptance", "must lie in (0, 1)"));
                }
                if !(f.initial_a > 0.0) || !(f.tolerance > 0.0) || f.max_iterations == 0 {
                    return Err(err("fit", "initial_a, tolerance and max_iterations must be positive"));
                }
                if !f.probes.is_empty() && (f.probes.len() < 3 || f.probes.iter().any(|a| !(*a > 0.0))) {
                    return Err(err("fit.probes", "the linear fit needs at least three positive values"));
                }
            }
            ExperimentKind::DensityGrid => {
                let g = self.grid.as_ref().ok_or_else(|| err("grid", "density-grid needs a [grid] block"))?;
                let [x0, x1, y0, y1] = g.bounds;
                if !(x0 < x1 && y0 < y1) || g.bounds.iter().any(|v| !v.is_finite()) {
                    return Err(err("grid.bounds", "expected finite [x_min, x_max, y_min, y_max] with min < max"));
                }
                if g.resolution < 2 {
                    return Err(err("grid.resolution", "must be at least 2"));
                }
                if g.anchors.is_empty() {
                    return Err(err("grid.anchors", "needs at least one anchor"));
                }
            }
            ExperimentKind::SchemeCompare => {
                if self.schemes.is_empty() {
                    return Err(err("schemes", "scheme-compare needs at least one [[schemes]] entry"));
                }
                for (i, s) in self.schemes.iter().enumerate() {
                    let path = format!("schemes[{i}]");
                    if let Some(t) = &s.target {
                        if t != &self.target {
                            return Err(err(&format!("{path}.target"), "all schemes must share the experiment target"));
                        }
                    }
                    self.build_proposal(&s.proposal, &target, &format!("{path}.proposal"))?;
                    if let Some(o) = &s.objective {
                        build_objective(o, &target, &format!("{path}.objective"))?;
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// The target, augmented with `aux` coordinates when requested.
    pub fn build_target(&self) -> Result<Target, ConfigError> {
        let dim_ok = |d: usize| if d == 0 { Err(err("target.dim", "must be positive")) } else { Ok(d) };
        let base = match &self.target {
            TargetConfig::IsoGaussian { dim } => Target::iso_gaussian(dim_ok(*dim)?),
            TargetConfig::IsoLaplace { dim } => Target::iso_laplace(dim_ok(*dim)?),
            TargetConfig::IsoCauchy { dim } => Target::iso_cauchy(dim_ok(*dim)?),
            TargetConfig::StabilizedUniform { dim } => Target::stabilized_uniform(dim_ok(*dim)?),
            TargetConfig::Cross => Ok(Target::cross()),
            TargetConfig::Logistic { data } => {
                let ds = match data {
                    LogisticData::Csv(p) => LogisticDataset::from_csv(p).map_err(|e| err("target.data.csv", e))?,
                    LogisticData::Synthetic { rows, features, seed } => {
                        if *rows == 0 || *features == 0 {
                            return Err(err("target.data.synthetic", "rows and features must be positive"));
                        }
                        LogisticDataset::synthetic(*rows, *features, *seed)
                    }
                };
                Ok(Target::logistic(ds))
            }
        }
        .map_err(|e| err("target", e))?;
        if self.aux == 0 {
            Ok(base)
        } else {
            Target::augmented(base, self.aux).map_err(|e| err("aux", e))
        }
    }

    /// Build a proposal on the (joint) target. Network initialization is
    /// seeded from the experiment seed.
    pub fn build_proposal(&self, cfg: &ProposalConfig, target: &Target, path: &str) -> Result<Proposal, ConfigError> {
        let d = target.dim();
        let positive = |v: Option<f64>, key: &str, default: f64| match v {
            Some(x) if !(x > 0.0 && x.is_finite()) => Err(err(&format!("{path}.{key}"), "must be positive and finite")),
            Some(x) => Ok(x),
            None => Ok(default),
        };
        let mut rng = SeededRng::seed_from_u64(self.seed);
        let inv_sqrt = 1.0 / (d as f64).sqrt();
        let p = match cfg {
            ProposalConfig::Rwm { step_size } => Proposal::iso_rwm(d, positive(*step_size, "step_size", inv_sqrt)?),
            ProposalConfig::Mala { step_size } => Proposal::iso_mala(d, positive(*step_size, "step_size", inv_sqrt)?),
            ProposalConfig::PrecondRwm { variance } => Proposal::precond_rwm(d, positive(*variance, "variance", 1.0 / d as f64)?),
            ProposalConfig::PrecondMala { variance } => Proposal::precond_mala(d, positive(*variance, "variance", 1.0 / d as f64)?),
            ProposalConfig::Multischeme { coupling_layers, shift, langevin_tau, hidden, depth } => {
                let mut nets = match target.kind() {
                    TargetKind::GaussianMixtureCross => MultiSchemeNets::cross(*coupling_layers),
                    _ if d > 2 => MultiSchemeNets { coupling_layers: *coupling_layers, ..MultiSchemeNets::logistic(d) },
                    _ => MultiSchemeNets::cross(*coupling_layers),
                };
                if let Some(h) = hidden {
                    nets.hidden = *h;
                }
                if let Some(k) = depth {
                    nets.depth = *k;
                }
                let shift = match shift {
                    Shift::Residual => DataShift::Residual,
                    Shift::Absolute => DataShift::Absolute,
                    Shift::Langevin => DataShift::Langevin { tau: positive(*langevin_tau, "langevin_tau", inv_sqrt)? },
                };
                Proposal::multischeme(d, nets, shift, &mut rng)
            }
            ProposalConfig::Mixture { means, hidden, depth } => {
                let means = if means.is_empty() {
                    match target.kind() {
                        TargetKind::GaussianMixtureCross => cross_centers(),
                        _ => return Err(err(&format!("{path}.means"), "component means are required off the cross target")),
                    }
                } else {
                    means.clone()
                };
                Proposal::position_mixture(d, *hidden, *depth, &means, &mut rng)
            }
            ProposalConfig::ResamplingFlow { coupling_layers, hidden, depth } => {
                Proposal::resampling_flow(d, *coupling_layers, *hidden, *depth, &mut rng)
            }
            ProposalConfig::ExactResampler => {
                if !target.can_sample() {
                    return Err(err(path, format!("the exact resampler needs a directly samplable target, not {}", target.name())));
                }
                Proposal::exact_resampler(d)
            }
            ProposalConfig::Checkpoint { path: file } => {
                let (p, header) = load_checkpoint(file).map_err(|e| err(&format!("{path}.path"), e))?;
                if header.aux != self.aux {
                    return Err(err(
                        &format!("{path}.path"),
                        format!("checkpoint was trained with aux = {} but the config has aux = {}", header.aux, self.aux),
                    ));
                }
                Ok(p)
            }
        }
        .map_err(|e| err(path, e))?;
        if p.dim != d {
            return Err(err(path, format!("proposal dimension {} does not match the target dimension {d}", p.dim)));
        }
        Ok(p)
    }

    pub fn train_spec(&self, target: &Target, seed: u64) -> TrainSpec {
        TrainSpec {
            algorithm: self.train.algorithm,
            n_steps: self.train.steps,
            m_starts: self.train.m_starts,
            n_draws: self.train.n_draws,
            learning_rate: self.train.learning_rate.unwrap_or_else(|| default_learning_rate(target)),
            seed,
            restart: self.restart_policy(),
        }
    }

    pub fn restart_policy(&self) -> Option<RestartPolicy> {
        self.train.restart.then(RestartPolicy::default)
    }
}

fn cross_centers() -> Vec<Vec<f64>> {
    let h = abinitio_core::targets::CROSS_SEPARATION / 2.0;
    vec![vec![h, 0.0], vec![-h, 0.0], vec![0.0, h], vec![0.0, -h]]
}

pub fn build_objective(cfg: &ObjectiveConfig, target: &Target, path: &str) -> Result<Objective, ConfigError> {
    let o = match cfg {
        ObjectiveConfig::AbInitio { a, scaling } => Objective::AbInitio { a: *a, scaling: *scaling },
        ObjectiveConfig::Msjd => Objective::Msjd,
        ObjectiveConfig::L2hmc { sigma_min_sq } => {
            let s = sigma_min_sq.or_else(|| target.min_marginal_variance()).ok_or_else(|| {
                err(&format!("{path}.sigma_min_sq"), format!("required: the smallest marginal variance of {} is unknown", target.name()))
            })?;
            Objective::L2hmc { sigma_min_sq: s }
        }
        ObjectiveConfig::Gsm { beta, rho_beta, target_alpha } => Objective::Gsm(Gsm {
            beta: beta.unwrap_or(1.0 / target.dim() as f64),
            rho_beta: *rho_beta,
            target_alpha: *target_alpha,
        }),
        ObjectiveConfig::Nll => Objective::Nll,
        ObjectiveConfig::Combo { components, weights } => {
            let built = components
                .iter()
                .enumerate()
                .map(|(i, c)| build_objective(c, target, &format!("{path}.components[{i}]")))
                .collect::<Result<Vec<_>, _>>()?;
            combine(built, weights.clone()).map_err(|e| err(path, e))?
        }
    };
    o.validate().map_err(|e| err(path, e))?;
    Ok(o)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
experiment = "verify"
seed = 3

[target]
kind = "iso_gaussian"
dim = 10

[proposal]
kind = "rwm"

[objective]
kind = "ab_initio"
"#;

    #[test]
    fn defaults_fill_in() {
        let c = parse(MINIMAL).unwrap();
        assert_eq!(c.train, TrainConfig::default());
        assert_eq!(c.objective, Some(ObjectiveConfig::AbInitio { a: DEFAULT_A, scaling: Scaling::LinearD }));
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_name_their_path() {
        let e = parse(&MINIMAL.replace("dim = 10", "dim = 10\ndimension = 4")).unwrap_err();
        assert!(e.path.starts_with("target"), "{e}");
        let e = parse(&MINIMAL.replace("seed = 3", "seed = 3\n[train]\nstep = 4")).unwrap_err();
        assert_eq!(e.path, "train.step", "{e}");
        let e = parse(&MINIMAL.replace("\"ab_initio\"", "\"ab_inito\"")).unwrap_err();
        assert!(e.path.starts_with("objective"), "{e}");
    }

    #[test]
    fn validation_rejects_bad_values() {
        let c = parse(&MINIMAL.replace("kind = \"rwm\"", "kind = \"rwm\"\nstep_size = -1.0")).unwrap();
        assert_eq!(c.validate().unwrap_err().path, "proposal.step_size");
        let c = parse(&MINIMAL.replace("kind = \"ab_initio\"", "kind = \"gsm\"\ntarget_alpha = 1.5")).unwrap();
        assert_eq!(c.validate().unwrap_err().path, "objective");
        let c = parse(&MINIMAL.replace("\"verify\"", "\"density-grid\"")).unwrap();
        assert_eq!(c.validate().unwrap_err().path, "grid");
    }

    #[test]
    fn hash_ignores_seed_and_output() {
        let a = parse(MINIMAL).unwrap();
        let b = ExperimentConfig { seed: 99, out: Some("elsewhere".into()), ..a.clone() };
        assert_eq!(a.hash(), b.hash());
        let c = ExperimentConfig { aux: 1, ..a.clone() };
        assert_ne!(a.hash(), c.hash());
    }
}
