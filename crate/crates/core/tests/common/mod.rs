//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use abinitio_core::diffcore::{Matrix, Tape, Var};
use abinitio_core::SeededRng;
use rand::{Rng, SeedableRng};
use statrs::distribution::{ChiSquared, Continuous, ContinuousCDF, Normal};

pub fn rng(seed: u64) -> SeededRng {
    SeededRng::seed_from_u64(seed)
}

/// Central finite-difference gradient of `f` at `x`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut y = x.to_vec();
    for i in 0..x.len() {
        y[i] = x[i] + h;
        let up = f(&y);
        y[i] = x[i] - h;
        let down = f(&y);
        y[i] = x[i];
        g[i] = (up - down) / (2.0 * h);
    }
    g
}

/// Largest |a − b| / max(|b|, floor) over components.
pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / y.abs().max(floor)).fold(0.0, f64::max)
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)
}

/// Standard error of the mean.
pub fn sem(v: &[f64]) -> f64 {
    (variance(v) / v.len() as f64).sqrt()
}

pub fn column(m: &Matrix, j: usize) -> Vec<f64> {
    (0..m.rows).map(|i| m.get(i, j)).collect()
}

/// Composite Simpson integral of `f` over [a, b] with `n` (even) intervals.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// Pearson chi-squared p-value of `samples` against bin probabilities
/// computed by integrating `density` over `edges`. Mass outside the edges
/// forms one extra bin.
pub fn chi_squared_p(samples: &[f64], edges: &[f64], density: impl Fn(f64) -> f64) -> f64 {
    let probs: Vec<f64> = edges.windows(2).map(|w| simpson(&density, w[0], w[1], 200)).collect();
    chi_squared_p_binned(samples, edges, &probs)
}

/// As [`chi_squared_p`] with the bin probabilities given directly.
pub fn chi_squared_p_binned(samples: &[f64], edges: &[f64], probs: &[f64]) -> f64 {
    let k = edges.len() - 1;
    assert_eq!(probs.len(), k);
    let mut counts = vec![0usize; k + 1];
    for &x in samples {
        match edges.windows(2).position(|w| x >= w[0] && x < w[1]) {
            Some(i) => counts[i] += 1,
            None => counts[k] += 1,
        }
    }
    let mut probs = probs.to_vec();
    let inside: f64 = probs.iter().sum();
    probs.push((1.0 - inside).max(0.0));
    let n = samples.len() as f64;
    let mut stat = 0.0;
    let mut dof = 0usize;
    for (c, p) in counts.iter().zip(&probs) {
        let e = n * p;
        if e < 5.0 {
            continue;
        }
        stat += (*c as f64 - e).powi(2) / e;
        dof += 1;
    }
    1.0 - ChiSquared::new((dof - 1) as f64).unwrap().cdf(stat)
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// Kolmogorov distance between the empirical CDF of `xs` and `cdf`.
pub fn kolmogorov_distance(xs: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

/// Random d × d matrix U diag(s) Vᵀ with U, V orthogonal and singular values
/// s in [1, √max_cond), so its condition number is below `max_cond`.
pub fn random_well_conditioned(d: usize, max_cond: f64, rng: &mut SeededRng) -> Matrix {
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(d);
    while q.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        for u in &q {
            let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-6 {
            q.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    let s: Vec<f64> = (0..d).map(|_| rng.random_range(1.0..max_cond.sqrt())).collect();
    // V is Q with its rows cyclically shifted
    let mut a = Matrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let mut v = 0.0;
            for k in 0..d {
                v += q[k][i] * s[k] * q[(k + 1) % d][j];
            }
            a.set(i, j, v);
        }
    }
    a
}

/// E[min(0, Z)] for Z ~ N(μ, σ²).
pub fn mean_min0(mu: f64, sd: f64) -> f64 {
    let n = Normal::new(0.0, 1.0).unwrap();
    mu * n.cdf(-mu / sd) - sd * n.pdf(mu / sd)
}

/// Exact Ab Initio value (coefficient `a`, linear scaling) of isotropic RWM
/// with step τ on the d-dimensional standard gaussian, starts from π, and
/// the matching E[log α]. With s = ‖n‖² ~ χ²_d the log ratio is
/// N(−τ²s/2, τ²s) given s, and the KL term has mean −d·log τ + dτ²/2.
pub fn rwm_ab_initio_oracle(d: usize, tau: f64, a: f64) -> (f64, f64) {
    let chi = ChiSquared::new(d as f64).unwrap();
    let hi = d as f64 + 40.0 * (2.0 * d as f64).sqrt();
    let e_log_alpha = simpson(|s| if s <= 0.0 { 0.0 } else { chi.pdf(s) * mean_min0(-tau * tau * s / 2.0, tau * s.sqrt()) }, 0.0, hi, 20_000);
    let kl = -(d as f64) * tau.ln() + d as f64 * tau * tau / 2.0;
    (kl - a * d as f64 * e_log_alpha, e_log_alpha)
}

/// Scalar expression over a parameter vector, evaluated both on the tape and
/// directly in f64.
#[derive(Debug)]
pub enum Expr {
    Param(usize),
    Const(f64),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    /// a / (1 + b²)
    SafeDiv(Box<Expr>, Box<Expr>),
    /// exp(0.3·a)
    Exp(Box<Expr>),
    /// log(1 + a²)
    Log1pSq(Box<Expr>),
    /// √(1 + a²)
    SqrtSq(Box<Expr>),
    Square(Box<Expr>),
    Neg(Box<Expr>),
}

pub fn random_expr(rng: &mut impl Rng, n_params: usize, depth: usize) -> Expr {
    if depth == 0 || rng.random::<f64>() < 0.2 {
        return if rng.random::<f64>() < 0.8 {
            Expr::Param(rng.random_range(0..n_params))
        } else {
            Expr::Const(rng.random_range(-2.0..2.0))
        };
    }
    let mut sub = || Box::new(random_expr(rng, n_params, depth - 1));
    let (a, b) = (sub(), sub());
    match rng.random_range(0..10) {
        0 => Expr::Add(a, b),
        1 => Expr::Sub(a, b),
        2 | 3 => Expr::Mul(a, b),
        4 => Expr::SafeDiv(a, b),
        5 => Expr::Exp(a),
        6 => Expr::Log1pSq(a),
        7 => Expr::SqrtSq(a),
        8 => Expr::Square(a),
        _ => Expr::Neg(a),
    }
}

pub fn eval(e: &Expr, p: &[f64]) -> f64 {
    match e {
        Expr::Param(i) => p[*i],
        Expr::Const(c) => *c,
        Expr::Add(a, b) => eval(a, p) + eval(b, p),
        Expr::Sub(a, b) => eval(a, p) - eval(b, p),
        Expr::Mul(a, b) => eval(a, p) * eval(b, p),
        Expr::SafeDiv(a, b) => eval(a, p) / (1.0 + eval(b, p).powi(2)),
        Expr::Exp(a) => (0.3 * eval(a, p)).exp(),
        Expr::Log1pSq(a) => (1.0 + eval(a, p).powi(2)).ln(),
        Expr::SqrtSq(a) => (1.0 + eval(a, p).powi(2)).sqrt(),
        Expr::Square(a) => eval(a, p).powi(2),
        Expr::Neg(a) => -eval(a, p),
    }
}

pub fn record(e: &Expr, t: &Tape, p: Var) -> Var {
    match e {
        Expr::Param(i) => t.slice_cols(p, *i, 1),
        Expr::Const(c) => t.scalar(*c),
        Expr::Add(a, b) => t.add(record(a, t, p), record(b, t, p)),
        Expr::Sub(a, b) => t.sub(record(a, t, p), record(b, t, p)),
        Expr::Mul(a, b) => t.mul(record(a, t, p), record(b, t, p)),
        Expr::SafeDiv(a, b) => t.div(record(a, t, p), t.shift(t.square(record(b, t, p)), 1.0)),
        Expr::Exp(a) => t.exp(t.scale(record(a, t, p), 0.3)),
        Expr::Log1pSq(a) => t.log(t.shift(t.square(record(a, t, p)), 1.0)),
        Expr::SqrtSq(a) => t.sqrt(t.shift(t.square(record(a, t, p)), 1.0)),
        Expr::Square(a) => t.square(record(a, t, p)),
        Expr::Neg(a) => t.neg(record(a, t, p)),
    }
}
