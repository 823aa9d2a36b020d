use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{expected_acceptance, optimize, replicate_seed, StartSource, TrainSpec};
use crate::error::{config_err, Error, Result};
use crate::objectives::{Objective, Scaling};
use crate::proposals::Proposal;
use crate::targets::Target;
use crate::SeededRng;

/// A proposal family on a target together with the acceptance rate the
/// fitted coefficient should produce for it.
#[derive(Clone, Debug)]
pub struct FitReference {
    pub target: Target,
    pub initial_proposal: Proposal,
    pub target_acceptance: f64,
    pub source: StartSource,
    pub aux: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum FitMethod {
    /// Secant iteration on α(A) − α* for a single reference.
    NewtonRaphsonSecant,
    /// α(A) fitted linearly per reference from probe values of A, then the
    /// squared acceptance gap summed over references minimized in closed form.
    LinearAlphaFit { probes: Vec<f64> },
}

#[derive(Clone, Debug)]
pub struct FitSpec {
    pub references: Vec<FitReference>,
    pub method: FitMethod,
    pub inner: TrainSpec,
    pub initial_a: f64,
    pub tolerance_on_alpha: f64,
    pub scaling: Scaling,
    /// Proposals used to measure E[α] after each inner optimization.
    pub eval_proposals: usize,
    pub max_iterations: usize,
}

impl FitSpec {
    pub fn secant(reference: FitReference, inner: TrainSpec, initial_a: f64) -> Self {
        Self {
            references: vec![reference],
            method: FitMethod::NewtonRaphsonSecant,
            inner,
            initial_a,
            tolerance_on_alpha: 0.01,
            scaling: Scaling::LinearD,
            eval_proposals: 25_000,
            max_iterations: 12,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.references.is_empty() {
            return Err(config_err("coefficient fit needs at least one reference"));
        }
        for r in &self.references {
            if !(r.target_acceptance > 0.0 && r.target_acceptance < 1.0) {
                return Err(config_err(format!("target acceptance {} is outside (0, 1)", r.target_acceptance)));
            }
        }
        if !(self.initial_a > 0.0) {
            return Err(config_err("initial A must be positive"));
        }
        match &self.method {
            FitMethod::NewtonRaphsonSecant if self.references.len() != 1 => {
                Err(config_err("the secant fit takes exactly one reference; use the linear fit for several"))
            }
            FitMethod::LinearAlphaFit { probes } if probes.len() < 3 || probes.iter().any(|a| !(*a > 0.0)) => {
                Err(config_err("the linear fit needs at least three positive probe values of A"))
            }
            _ => self.inner.validate(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitProbe {
    pub reference: usize,
    pub a: f64,
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOutcome {
    pub a: f64,
    pub converged: bool,
    pub probes: Vec<FitProbe>,
}

/// Train the reference proposal under the Ab Initio objective with
/// coefficient `a` and measure its mean acceptance probability. Every probe
/// reuses the same training and evaluation seeds.
fn alpha_at(spec: &FitSpec, r: usize, a: f64) -> Result<f64> {
    let reference = &spec.references[r];
    let objective = Objective::AbInitio { a, scaling: spec.scaling };
    let inner = TrainSpec { seed: replicate_seed(spec.inner.seed, r, 0), ..spec.inner.clone() };
    let out = optimize(&inner, &objective, &reference.target, &reference.initial_proposal, &reference.source, reference.aux)?;
    let mut rng = SeededRng::seed_from_u64(replicate_seed(spec.inner.seed, r, 1));
    expected_acceptance(&reference.target, &out.proposal, &reference.source, spec.eval_proposals, &mut rng)
}

/// Least-squares line α = intercept + slope·A.
fn line_fit(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return None;
    }
    let ma = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mb = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - ma).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - ma) * (p.1 - mb)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    Some((mb - slope * ma, slope))
}

fn describe(probes: &[FitProbe]) -> String {
    probes.iter().map(|p| format!("A={:.5} α={:.4}", p.a, p.alpha)).collect::<Vec<_>>().join("; ")
}

pub fn fit_coefficient(spec: &FitSpec) -> Result<FitOutcome> {
    spec.validate()?;
    match &spec.method {
        FitMethod::NewtonRaphsonSecant => secant(spec),
        FitMethod::LinearAlphaFit { probes } => linear(spec, probes),
    }
}

fn secant(spec: &FitSpec) -> Result<FitOutcome> {
    let target_alpha = spec.references[0].target_acceptance;
    let mut probes: Vec<FitProbe> = Vec::new();
    let mut a = spec.initial_a;
    for _ in 0..spec.max_iterations {
        let alpha = alpha_at(spec, 0, a)?;
        probes.push(FitProbe { reference: 0, a, alpha });
        let gap = target_alpha - alpha;
        if gap.abs() <= spec.tolerance_on_alpha {
            return Ok(FitOutcome { a, converged: true, probes });
        }
        let points: Vec<(f64, f64)> = probes.iter().map(|p| (p.a, p.alpha)).collect();
        // acceptance rises with A; fall back to a fixed relative move without a usable slope
        let next = match line_fit(&points) {
            Some((_, slope)) if slope > 0.0 => a + gap / slope,
            _ => a * if gap > 0.0 { 1.25 } else { 0.8 },
        };
        a = next.clamp(0.5 * a, 2.0 * a);
    }
    let below = probes.iter().any(|p| p.alpha < target_alpha);
    let above = probes.iter().any(|p| p.alpha > target_alpha);
    if !(below && above) {
        return Err(Error::Fit(format!(
            "no probe bracketed α = {target_alpha} after {} iterations: {}",
            spec.max_iterations,
            describe(&probes)
        )));
    }
    let points: Vec<(f64, f64)> = probes.iter().map(|p| (p.a, p.alpha)).collect();
    match line_fit(&points) {
        Some((c, slope)) if slope > 0.0 => Ok(FitOutcome { a: (target_alpha - c) / slope, converged: false, probes }),
        _ => Err(Error::Fit(format!("acceptance did not increase with A: {}", describe(&probes)))),
    }
}

fn linear(spec: &FitSpec, probe_values: &[f64]) -> Result<FitOutcome> {
    let jobs: Vec<(usize, f64)> = (0..spec.references.len()).flat_map(|r| probe_values.iter().map(move |&a| (r, a))).collect();
    let probes: Vec<FitProbe> =
        jobs.into_par_iter().map(|(r, a)| alpha_at(spec, r, a).map(|alpha| FitProbe { reference: r, a, alpha })).collect::<Result<_>>()?;
    let mut num = 0.0;
    let mut den = 0.0;
    for (r, reference) in spec.references.iter().enumerate() {
        let points: Vec<(f64, f64)> = probes.iter().filter(|p| p.reference == r).map(|p| (p.a, p.alpha)).collect();
        let (c, slope) = line_fit(&points).ok_or_else(|| Error::Fit("degenerate probe set".into()))?;
        num += slope * (reference.target_acceptance - c);
        den += slope * slope;
    }
    if den == 0.0 {
        return Err(Error::Fit(format!("acceptance is flat in A across all references: {}", describe(&probes))));
    }
    let a = num / den;
    if !(a > 0.0) {
        return Err(Error::Fit(format!("linear fit gave non-positive A = {a}: {}", describe(&probes))));
    }
    Ok(FitOutcome { a, converged: true, probes })
}
