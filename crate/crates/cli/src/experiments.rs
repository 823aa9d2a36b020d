//! The six experiment pipelines.

use std::sync::Arc;
use std::time::Instant;

use abinitio_core::diffcore::{Matrix, Tape};
use abinitio_core::evaluation::{ab_initio_score, format_mean_se, measure, replicate_stats, single_step_metrics, MetricsReport, MetricsRow};
use abinitio_core::kernels::{hmc_reference_chain, MhKernel};
use abinitio_core::objectives::Objective;
use abinitio_core::proposals::Proposal;
use abinitio_core::targets::{Target, TargetKind};
use abinitio_core::training::{fit_coefficient, optimize, replicate_seed, train_replicates, FitReference, FitSpec, StartSource, TrainOutcome};
use abinitio_core::{Error, SeededRng};
use anyhow::{anyhow, Result};
use rand::SeedableRng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{build_objective, ExperimentConfig, ExperimentKind, ProposalConfig};
use crate::run::RunDir;

/// One row of `aggregate.csv`: a quantity summarized over replicates.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AggregateRow {
    pub quantity: String,
    pub mean: f64,
    pub se: f64,
    pub formatted: String,
    pub replicates: usize,
}

impl AggregateRow {
    pub fn of(quantity: &str, values: &[f64]) -> Self {
        let (mean, se) = match replicate_stats(values) {
            Ok(s) => s,
            Err(_) => (values.iter().sum::<f64>() / values.len().max(1) as f64, f64::NAN),
        };
        let formatted = if se.is_finite() { format_mean_se(mean, se) } else { format!("{mean}") };
        Self { quantity: quantity.to_string(), mean, se, formatted, replicates: values.len() }
    }
}

struct Setup {
    target: Target,
    source: StartSource,
}

fn setup(config: &ExperimentConfig, run: &mut RunDir) -> Result<Setup> {
    let target = config.build_target()?;
    let source = if target.can_sample() {
        StartSource::Direct
    } else {
        let base = match target.kind() {
            TargetKind::Augmented { base, .. } => base.as_ref().clone(),
            _ => target.clone(),
        };
        let mut rng = SeededRng::seed_from_u64(replicate_seed(config.seed, usize::MAX, 0));
        let r = &config.reference;
        let h = hmc_reference_chain(&base, &r.hmc(), &vec![0.0; base.dim()], r.steps, r.burn_in, config.seed, &mut rng)?;
        #[derive(Serialize)]
        struct Reference {
            steps: usize,
            burn_in: usize,
            step_size: f64,
            tuning_acceptance: f64,
            acceptance: f64,
        }
        run.write_json(
            "reference.json",
            &Reference {
                steps: r.steps,
                burn_in: r.burn_in,
                step_size: h.step_size,
                tuning_acceptance: h.tuning_acceptance,
                acceptance: h.trace.n_accepted() as f64 / h.trace.n_steps().max(1) as f64,
            },
        )?;
        StartSource::Trace(Arc::new(h.trace.states))
    };
    Ok(Setup { target, source })
}

fn kernel<'a>(config: &ExperimentConfig, target: &'a Target, proposal: &'a Proposal) -> MhKernel<'a> {
    if config.aux > 0 {
        MhKernel::augmented(target, proposal, config.aux)
    } else {
        MhKernel::new(target, proposal)
    }
}

pub fn run(config: &ExperimentConfig, run: &mut RunDir) -> Result<()> {
    match config.experiment {
        ExperimentKind::FitCoefficient => fit(config, run),
        ExperimentKind::Verify => verify(config, run),
        ExperimentKind::Optimize => optimize_and_measure(config, run),
        ExperimentKind::Evaluate => evaluate(config, run),
        ExperimentKind::DensityGrid => density_grid(config, run),
        ExperimentKind::SchemeCompare => scheme_compare(config, run),
    }
}

fn main_proposal(config: &ExperimentConfig, target: &Target) -> Result<Proposal> {
    let cfg = config.proposal.as_ref().ok_or_else(|| anyhow!("missing [proposal] block"))?;
    Ok(config.build_proposal(cfg, target, "proposal")?)
}

fn main_objective(config: &ExperimentConfig, target: &Target) -> Result<Objective> {
    let cfg = config.objective.as_ref().ok_or_else(|| anyhow!("missing [objective] block"))?;
    Ok(build_objective(cfg, target, "objective")?)
}

fn train_all(config: &ExperimentConfig, s: &Setup, initial: &Proposal, objective: &Objective) -> Result<Vec<TrainOutcome>> {
    Ok(train_replicates(config.train.replicates, config.seed, config.restart_policy(), |seed| {
        optimize(&config.train_spec(&s.target, seed), objective, &s.target, initial, &s.source, config.aux)
    })?)
}

fn save_training(run: &mut RunDir, config: &ExperimentConfig, r: usize, out: &TrainOutcome) -> Result<()> {
    run.write_checkpoint(&format!("checkpoints/replicate-{r}.ckpt"), &out.proposal, out.seed, config.aux)?;
    run.write_loss_curve(&format!("loss_curves/replicate-{r}.csv"), &out.loss_curve)
}

#[derive(Serialize)]
struct VerifyReport {
    replicate: usize,
    seed: u64,
    acceptance_rate: f64,
    msjd: f64,
    final_loss: f64,
    rejected_steps: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    step_size: Option<f64>,
}

fn verify(config: &ExperimentConfig, run: &mut RunDir) -> Result<()> {
    let s = setup(config, run)?;
    let initial = main_proposal(config, &s.target)?;
    let objective = main_objective(config, &s.target)?;
    let outcomes = train_all(config, &s, &initial, &objective)?;
    let metrics: Vec<(f64, f64)> = outcomes
        .par_iter()
        .enumerate()
        .map(|(r, out)| {
            let mut rng = SeededRng::seed_from_u64(replicate_seed(config.seed, r, 1));
            let starts = s.source.sample(&s.target, config.eval.single_proposals, &mut rng)?;
            single_step_metrics(&kernel(config, &s.target, &out.proposal), &starts, &mut rng)
        })
        .collect::<abinitio_core::Result<_>>()?;
    for (r, (out, &(acceptance_rate, msjd))) in outcomes.iter().zip(&metrics).enumerate() {
        save_training(run, config, r, out)?;
        let report = VerifyReport {
            replicate: r,
            seed: out.seed,
            acceptance_rate,
            msjd,
            final_loss: out.final_loss,
            rejected_steps: out.rejected_steps,
            step_size: out.proposal.step_size(),
        };
        run.write_json(&format!("reports/replicate-{r}.json"), &report)?;
    }
    let acc: Vec<f64> = metrics.iter().map(|m| m.0).collect();
    let msjd: Vec<f64> = metrics.iter().map(|m| m.1).collect();
    let losses: Vec<f64> = outcomes.iter().map(|o| o.final_loss).collect();
    run.write_csv(
        "aggregate.csv",
        &[AggregateRow::of("acceptance_rate", &acc), AggregateRow::of("msjd", &msjd), AggregateRow::of("final_loss", &losses)],
    )
}

#[derive(Serialize)]
struct ChainReport<'a> {
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_loss: Option<f64>,
    #[serde(flatten)]
    metrics: &'a MetricsReport,
}

/// Chains from fresh starts plus the Ab Initio score of `proposal`.
fn chain_metrics(config: &ExperimentConfig, s: &Setup, proposal: &Proposal, seed: u64, replicate: usize) -> Result<MetricsReport> {
    let mut rng = SeededRng::seed_from_u64(seed);
    let starts = s.source.sample(&s.target, config.eval.chains, &mut rng)?;
    let mut report = measure(&kernel(config, &s.target, proposal), &starts, config.eval.proposals_per_chain, seed, replicate)?;
    let score_starts = s.source.sample(&s.target, config.eval.score_starts, &mut rng)?;
    report.ab_initio_loss = Some(ab_initio_score(&s.target, proposal, &score_starts, config.eval.score_draws, &mut rng)?.0);
    Ok(report)
}

fn write_chain_reports(run: &mut RunDir, reports: &[(u64, Option<f64>, MetricsReport)], name: &str) -> Result<()> {
    let mut rows: Vec<MetricsRow> = Vec::new();
    for (r, (seed, final_loss, m)) in reports.iter().enumerate() {
        run.write_json(&format!("reports/replicate-{r}.json"), &ChainReport { seed: *seed, final_loss: *final_loss, metrics: m })?;
        rows.push(m.to_row(name));
    }
    run.write_csv("metrics.csv", &rows)?;
    let col = |f: &dyn Fn(&MetricsReport) -> f64| reports.iter().map(|(_, _, m)| f(m)).collect::<Vec<f64>>();
    run.write_csv(
        "aggregate.csv",
        &[
            AggregateRow::of("acceptance_rate", &col(&|m| m.acceptance_rate)),
            AggregateRow::of("msjd", &col(&|m| m.msjd)),
            AggregateRow::of("ess1_min", &col(&|m| m.ess_first_per_proposal.min)),
            AggregateRow::of("ess2_min", &col(&|m| m.ess_second_per_proposal.min)),
            AggregateRow::of("ab_initio_score", &col(&|m| m.ab_initio_loss.unwrap_or(f64::NAN))),
        ],
    )
}

fn optimize_and_measure(config: &ExperimentConfig, run: &mut RunDir) -> Result<()> {
    let s = setup(config, run)?;
    let initial = main_proposal(config, &s.target)?;
    let objective = main_objective(config, &s.target)?;
    let outcomes = train_all(config, &s, &initial, &objective)?;
    let reports: Vec<(u64, Option<f64>, MetricsReport)> = outcomes
        .par_iter()
        .enumerate()
        .map(|(r, out)| {
            let seed = replicate_seed(config.seed, r, 1);
            chain_metrics(config, &s, &out.proposal, seed, r).map(|m| (seed, Some(out.final_loss), m))
        })
        .collect::<Result<_>>()?;
    for (r, out) in outcomes.iter().enumerate() {
        save_training(run, config, r, out)?;
    }
    write_chain_reports(run, &reports, initial.name())
}

fn evaluate(config: &ExperimentConfig, run: &mut RunDir) -> Result<()> {
    let s = setup(config, run)?;
    let proposal = main_proposal(config, &s.target)?;
    let reports: Vec<(u64, Option<f64>, MetricsReport)> = (0..config.eval.replicates)
        .into_par_iter()
        .map(|r| {
            let seed = replicate_seed(config.seed, r, 1);
            chain_metrics(config, &s, &proposal, seed, r).map(|m| (seed, None, m))
        })
        .collect::<Result<_>>()?;
    write_chain_reports(run, &reports, proposal.name())
}

fn fit(config: &ExperimentConfig, run: &mut RunDir) -> Result<()> {
    let s = setup(config, run)?;
    let f = config.fit.as_ref().ok_or_else(|| anyhow!("missing [fit] block"))?;
    let reference = FitReference {
        target: s.target.clone(),
        initial_proposal: main_proposal(config, &s.target)?,
        target_acceptance: f.target_acceptance,
        source: s.source.clone(),
        aux: config.aux,
    };
    let spec = FitSpec {
        method: f.method(),
        tolerance_on_alpha: f.tolerance,
        scaling: f.scaling,
        eval_proposals: config.eval.single_proposals,
        max_iterations: f.max_iterations,
        ..FitSpec::secant(reference, config.train_spec(&s.target, config.seed), f.initial_a)
    };
    let outcome = fit_coefficient(&spec)?;
    run.write_csv("probes.csv", &outcome.probes)?;
    run.write_json("fit.json", &outcome)
}

#[derive(Clone, Debug, Serialize)]
pub struct GridPoint {
    pub x: f64,
    pub y: f64,
    pub density: f64,
}

#[derive(Serialize)]
struct AnchorSummary {
    anchor: [f64; 2],
    file: String,
    mass: f64,
    argmax: [f64; 2],
}

/// Proposal density on the centers of a resolution × resolution grid.
pub fn density_on_grid(target: &Target, proposal: &Proposal, anchor: [f64; 2], bounds: [f64; 4], n: usize) -> Result<Vec<GridPoint>> {
    if target.dim() != 2 || proposal.dim != 2 {
        return Err(Error::Capability(format!("density grids need a 2-D proposal, got dimension {}", proposal.dim)).into());
    }
    let [x0, x1, y0, y1] = bounds;
    let (dx, dy) = ((x1 - x0) / n as f64, (y1 - y0) / n as f64);
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        let x = x0 + (i as f64 + 0.5) * dx;
        let to = Matrix::from_rows(&(0..n).map(|j| vec![x, y0 + (j as f64 + 0.5) * dy]).collect::<Vec<_>>());
        let from = Matrix::from_rows(&vec![anchor.to_vec(); n]);
        let tape = Tape::new();
        let lp = proposal.record_log_density(&tape, target, tape.constant(from), tape.constant(to.clone()))?;
        for (j, v) in tape.value(lp).data.iter().enumerate() {
            out.push(GridPoint { x, y: to.row(j)[1], density: v.exp() });
        }
    }
    Ok(out)
}

fn density_grid(config: &ExperimentConfig, run: &mut RunDir) -> Result<()> {
    let target = config.build_target()?;
    let proposal = main_proposal(config, &target)?;
    let g = config.grid.as_ref().ok_or_else(|| anyhow!("missing [grid] block"))?;
    let [x0, x1, y0, y1] = g.bounds;
    let cell = (x1 - x0) * (y1 - y0) / (g.resolution * g.resolution) as f64;
    let mut summary = Vec::new();
    for (i, &anchor) in g.anchors.iter().enumerate() {
        let points = density_on_grid(&target, &proposal, anchor, g.bounds, g.resolution)?;
        let mass = points.iter().map(|p| p.density).sum::<f64>() * cell;
        let best = points.iter().max_by(|a, b| a.density.total_cmp(&b.density)).expect("grid is non-empty");
        let file = format!("grids/anchor-{i}.csv");
        summary.push(AnchorSummary { anchor, file: file.clone(), mass, argmax: [best.x, best.y] });
        run.write_csv(&file, &points)?;
    }
    run.write_json("grids.json", &summary)
}

/// One row of the scheme comparison table.
#[derive(Clone, Debug, Serialize)]
pub struct ComparisonRow {
    pub rank: usize,
    pub scheme: String,
    pub acceptance_rate: f64,
    pub msjd: f64,
    pub min_ess_per_proposal: f64,
    pub ab_initio_score: f64,
    pub samples_per_sec: f64,
    /// Training gradient evaluations per second; empty for untrained schemes.
    pub gradient_evals_per_sec: Option<f64>,
}

fn scheme_compare(config: &ExperimentConfig, run: &mut RunDir) -> Result<()> {
    let s = setup(config, run)?;
    let mut rows = Vec::new();
    for (i, scheme) in config.schemes.iter().enumerate() {
        let mut proposal = config.build_proposal(&scheme.proposal, &s.target, &format!("schemes[{i}].proposal"))?;
        let mut grad_rate = None;
        if let Some(o) = &scheme.objective {
            let objective = build_objective(o, &s.target, &format!("schemes[{i}].objective"))?;
            let seed = replicate_seed(config.seed, i, 0);
            let start = Instant::now();
            let out = optimize(&config.train_spec(&s.target, seed), &objective, &s.target, &proposal, &s.source, config.aux)?;
            grad_rate = Some(config.train.steps as f64 / start.elapsed().as_secs_f64());
            run.write_loss_curve(&format!("loss_curves/{}.csv", slug(&scheme.name)), &out.loss_curve)?;
            proposal = out.proposal;
        }
        if !matches!(scheme.proposal, ProposalConfig::Checkpoint { .. }) || scheme.objective.is_some() {
            run.write_checkpoint(&format!("checkpoints/{}.ckpt", slug(&scheme.name)), &proposal, config.seed, config.aux)?;
        }
        let start = Instant::now();
        let reports: Vec<MetricsReport> = (0..config.eval.replicates)
            .map(|r| chain_metrics(config, &s, &proposal, replicate_seed(config.seed, r, 1), r))
            .collect::<Result<_>>()?;
        let proposals = config.eval.replicates * config.eval.chains * config.eval.proposals_per_chain;
        let samples_per_sec = proposals as f64 / start.elapsed().as_secs_f64();
        let avg = |f: &dyn Fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / reports.len() as f64;
        rows.push(ComparisonRow {
            rank: 0,
            scheme: scheme.name.clone(),
            acceptance_rate: avg(&|m| m.acceptance_rate),
            msjd: avg(&|m| m.msjd),
            min_ess_per_proposal: avg(&|m| m.ess_first_per_proposal.min.min(m.ess_second_per_proposal.min)),
            ab_initio_score: avg(&|m| m.ab_initio_loss.unwrap_or(f64::NAN)),
            samples_per_sec,
            gradient_evals_per_sec: grad_rate,
        });
    }
    rows.sort_by(|a, b| a.ab_initio_score.total_cmp(&b.ab_initio_score));
    for (k, r) in rows.iter_mut().enumerate() {
        r.rank = k + 1;
    }
    run.write_csv("comparison.csv", &rows)
}

fn slug(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' }).collect()
}
