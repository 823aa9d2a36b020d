//! One-dimensional effective sample size.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Biased autocovariance γ_t = (1/N) Σ (x_i − x̄)(x_{i+t} − x̄), t = 0..N−1.
pub fn autocovariance(series: &[f64]) -> Vec<f64> {
    let n = series.len();
    if n == 0 {
        return Vec::new();
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = series.iter().map(|&v| Complex::new(v - mean, 0.0)).collect();
    buf.resize(size, Complex::new(0.0, 0.0));
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    buf[..n].iter().map(|c| c.re / (size as f64 * n as f64)).collect()
}

/// Integrated autocorrelation time from autocorrelations ρ_0 = 1, ρ_1, …
/// using Geyer's initial positive sequence made monotone. The first pair is
/// always kept and τ is floored at 1/log10(n_total), so antithetic chains
/// report an ESS above their length instead of a negative one.
fn geyer_tau(rho: &[f64], n_total: f64) -> f64 {
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < rho.len() {
        let pair = rho[2 * k] + rho[2 * k + 1];
        if k > 0 && pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        sum += pair;
        prev = pair;
        k += 1;
    }
    (-1.0 + 2.0 * sum).max(1.0 / n_total.log10())
}

/// N / τ with τ = 1 + 2 Σ ρ_t truncated by Geyer's initial positive sequence.
pub fn ess_single_chain(series: &[f64]) -> Result<f64> {
    if series.len() < 10 {
        return Err(Error::Evaluation(format!("ESS needs at least 10 values, got {}", series.len())));
    }
    let acov = autocovariance(series);
    if !(acov[0] > 0.0) {
        return Err(Error::Evaluation("degenerate series: zero variance".into()));
    }
    let rho: Vec<f64> = acov.iter().map(|g| g / acov[0]).collect();
    let n = series.len() as f64;
    Ok(n / geyer_tau(&rho, n))
}

/// Split-chain ESS for one scalar quantity observed by several chains of
/// equal length. Each chain is halved; the autocorrelation combines within-
/// and between-chain variance.
pub fn ess_split_chains(chains: &[Vec<f64>]) -> Result<f64> {
    if chains.len() < 2 {
        return Err(Error::Evaluation("multi-chain ESS needs at least two chains".into()));
    }
    let len = chains[0].len();
    if chains.iter().any(|c| c.len() != len) {
        return Err(Error::Evaluation("chains have unequal lengths".into()));
    }
    let half = len / 2;
    if half < 4 {
        return Err(Error::Evaluation(format!("chains too short for ESS ({len} values)")));
    }
    let splits: Vec<&[f64]> = chains.iter().flat_map(|c| [&c[..half], &c[len - half..]]).collect();
    let m = splits.len() as f64;
    let n = half as f64;
    let acovs: Vec<Vec<f64>> = splits.iter().map(|s| autocovariance(s)).collect();
    let means: Vec<f64> = splits.iter().map(|s| s.iter().sum::<f64>() / n).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b_over_n = means.iter().map(|v| (v - grand).powi(2)).sum::<f64>() / (m - 1.0);
    // unbiased within-chain variances from the biased γ_0
    let w = acovs.iter().map(|a| a[0] * n / (n - 1.0)).sum::<f64>() / m;
    let var_plus = (n - 1.0) / n * w + b_over_n;
    if !(var_plus > 0.0) {
        return Err(Error::Evaluation("degenerate series: zero variance".into()));
    }
    let rho: Vec<f64> = (0..half)
        .map(|t| {
            let mean_acov = acovs.iter().map(|a| a[t]).sum::<f64>() / m;
            1.0 - (w - mean_acov) / var_plus
        })
        .collect();
    Ok(m * n / geyer_tau(&rho, m * n))
}
