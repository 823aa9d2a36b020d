//! Post-training efficiency measurement and replicate aggregation.

mod ess;
mod format;

pub use ess::{autocovariance, ess_single_chain, ess_split_chains};
pub use format::format_mean_se;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::Matrix;
use crate::error::{Error, Result};
use crate::kernels::{run_chains, run_independent_chains, ChainTrace, MhKernel};
use crate::objectives::{estimate, Objective};
use crate::proposals::Proposal;
use crate::targets::Target;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Moment {
    First,
    Second,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| v.is_nan()) {
            return Err(Error::Evaluation("cannot summarise an empty or NaN vector".into()));
        }
        let mut v = values.to_vec();
        v.sort_by(|a, b| a.total_cmp(b));
        let k = v.len();
        let median = if k % 2 == 1 { v[k / 2] } else { 0.5 * (v[k / 2 - 1] + v[k / 2]) };
        Ok(Self { min: v[0], median, max: v[k - 1] })
    }

    fn scaled(self, s: f64) -> Self {
        Self { min: self.min * s, median: self.median * s, max: self.max * s }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acceptance_rate: f64,
    pub msjd: f64,
    pub ess_first_per_proposal: Spread,
    pub ess_second_per_proposal: Spread,
    pub ab_initio_loss: Option<f64>,
    pub n_chains: usize,
    pub n_proposals: usize,
    pub replicate_id: usize,
}

/// One flat CSV row per replicate per scheme.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scheme: String,
    pub replicate_id: usize,
    pub acceptance_rate: f64,
    pub msjd: f64,
    pub ess1_min: f64,
    pub ess1_median: f64,
    pub ess1_max: f64,
    pub ess2_min: f64,
    pub ess2_median: f64,
    pub ess2_max: f64,
    pub ab_initio_loss: Option<f64>,
    pub n_chains: usize,
    pub n_proposals: usize,
}

impl MetricsReport {
    pub fn to_row(&self, scheme: &str) -> MetricsRow {
        let (f, s) = (self.ess_first_per_proposal, self.ess_second_per_proposal);
        MetricsRow {
            scheme: scheme.to_string(),
            replicate_id: self.replicate_id,
            acceptance_rate: self.acceptance_rate,
            msjd: self.msjd,
            ess1_min: f.min,
            ess1_median: f.median,
            ess1_max: f.max,
            ess2_min: s.min,
            ess2_median: s.median,
            ess2_max: s.max,
            ab_initio_loss: self.ab_initio_loss,
            n_chains: self.n_chains,
            n_proposals: self.n_proposals,
        }
    }
}

pub fn write_metrics_csv<W: std::io::Write>(w: W, rows: &[MetricsRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r).map_err(|e| Error::Io(e.to_string()))?;
    }
    out.flush()?;
    Ok(())
}

/// Pooled acceptance rate and mean squared jump distance (rejections count
/// as zero jumps) over every column of the traces' states.
pub fn acceptance_and_msjd(traces: &[ChainTrace]) -> Result<(f64, f64)> {
    let total: usize = traces.iter().map(|t| t.n_steps()).sum();
    if total == 0 {
        return Err(Error::Evaluation("no proposals in traces".into()));
    }
    let accepted: usize = traces.iter().map(|t| t.n_accepted()).sum();
    let mut sq = 0.0;
    for t in traces {
        for k in 0..t.n_steps() {
            sq += t.states.row(k).iter().zip(t.states.row(k + 1)).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
    }
    Ok((accepted as f64 / total as f64, sq / total as f64))
}

fn series(t: &ChainTrace, j: usize, moment: Moment) -> Vec<f64> {
    (1..t.states.rows)
        .map(|k| {
            let v = t.states.get(k, j);
            match moment {
                Moment::First => v,
                Moment::Second => v * v,
            }
        })
        .collect()
}

/// Per-dimension split-chain ESS of x or x² over the post-start states.
pub fn ess_multichain(traces: &[ChainTrace], moment: Moment) -> Result<Vec<f64>> {
    if traces.len() < 2 {
        return Err(Error::Evaluation("multi-chain ESS needs at least two chains".into()));
    }
    let d = traces[0].states.cols;
    (0..d)
        .map(|j| {
            let chains: Vec<Vec<f64>> = traces.iter().map(|t| series(t, j, moment)).collect();
            ess_split_chains(&chains)
        })
        .collect()
}

/// Per-dimension ESS divided by the total number of proposals. A single
/// trace uses the single-chain estimator.
pub fn ess_per_proposal(traces: &[ChainTrace], moment: Moment) -> Result<Spread> {
    let total: usize = traces.iter().map(|t| t.n_steps()).sum();
    if total == 0 {
        return Err(Error::Evaluation("no proposals in traces".into()));
    }
    let ess = if traces.len() == 1 {
        let t = &traces[0];
        (0..t.states.cols).map(|j| ess_single_chain(&series(t, j, moment))).collect::<Result<Vec<_>>>()?
    } else {
        ess_multichain(traces, moment)?
    };
    Ok(Spread::of(&ess)?.scaled(1.0 / total as f64))
}

pub fn metrics_from_traces(traces: &[ChainTrace], replicate_id: usize, ab_initio_loss: Option<f64>) -> Result<MetricsReport> {
    let (acceptance_rate, msjd) = acceptance_and_msjd(traces)?;
    Ok(MetricsReport {
        acceptance_rate,
        msjd,
        ess_first_per_proposal: ess_per_proposal(traces, Moment::First)?,
        ess_second_per_proposal: ess_per_proposal(traces, Moment::Second)?,
        ab_initio_loss,
        n_chains: traces.len(),
        n_proposals: traces.iter().map(|t| t.n_steps()).sum(),
        replicate_id,
    })
}

/// Run one chain from each start for `n_steps` (chain `i` seeded with
/// `base_seed + i`) and measure it over the original (non-auxiliary)
/// coordinates.
pub fn measure(kernel: &MhKernel, starts: &Matrix, n_steps: usize, base_seed: u64, replicate_id: usize) -> Result<MetricsReport> {
    let d = kernel.target.dim() - kernel.aux;
    let traces: Vec<ChainTrace> =
        run_independent_chains(kernel, starts, n_steps, base_seed)?.iter().map(|t| t.restrict(d)).collect();
    metrics_from_traces(&traces, replicate_id, None)
}

/// Acceptance rate and MSJD of single proposals, one from each row of
/// `starts`, over the original coordinates.
pub fn single_step_metrics<R: Rng + ?Sized>(kernel: &MhKernel, starts: &Matrix, rng: &mut R) -> Result<(f64, f64)> {
    let d = kernel.target.dim() - kernel.aux;
    const CHUNK: usize = 5000;
    let mut traces = Vec::with_capacity(starts.rows);
    for lo in (0..starts.rows).step_by(CHUNK) {
        let hi = (lo + CHUNK).min(starts.rows);
        let block = Matrix::from_rows(&(lo..hi).map(|i| starts.row(i).to_vec()).collect::<Vec<_>>());
        traces.extend(run_chains(kernel, &block, 1, 0, rng)?.iter().map(|t| t.restrict(d)));
    }
    acceptance_and_msjd(&traces)
}

/// Ab Initio loss (default coefficient, linear scaling) estimated over
/// `n_draws` proposals from each of the given approximate π samples.
/// Returns (score, standard error); lower is better.
pub fn ab_initio_score<R: Rng + ?Sized>(
    target: &Target,
    proposal: &Proposal,
    starts: &Matrix,
    n_draws: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let e = estimate(&Objective::ab_initio(), target, proposal, starts, n_draws, rng)?;
    Ok((e.loss, e.loss_se))
}

/// Mean and standard error sd/√R over replicates.
pub fn replicate_stats(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::Evaluation(format!("replicate statistics need at least two values, got {}", values.len())));
    }
    let r = values.len() as f64;
    let mean = values.iter().sum::<f64>() / r;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1.0);
    Ok((mean, (var / r).sqrt()))
}
