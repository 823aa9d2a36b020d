//! Target distributions π with log-density, score, Hessian-vector products and,
//! where possible, exact sampling.

mod logistic;

pub use logistic::LogisticDataset;

use std::f64::consts::{LN_2, PI};
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Cauchy, Distribution, StandardNormal};

use crate::diffcore::{logsumexp, Matrix, Tape, Var};
use crate::error::{config_err, shape_err, Error, Result};

pub(crate) const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Separation between opposite component centers of the cross mixture.
pub const CROSS_SEPARATION: f64 = 8.0;

#[derive(Clone, Debug)]
pub enum TargetKind {
    IsoGaussian,
    IsoLaplace,
    IsoCauchy,
    /// Mixture of U[0,1]^d and N(0, I) with weights 1/(1+e^-100) and 1/(1+e^100).
    StabilizedUniform,
    /// Equal mixture of four unit gaussians centered at (±4, 0) and (0, ±4).
    GaussianMixtureCross,
    LogisticRegressionPosterior(Arc<LogisticDataset>),
    AffinePushforward(Arc<Affine>),
    /// π(x) · N(aux; 0, I) over (x, aux).
    Augmented { base: Arc<Target>, aux: usize },
}

/// z = A·x + b applied to a base target.
#[derive(Clone, Debug)]
pub struct Affine {
    pub base: Target,
    pub a: Matrix,
    pub a_inv: Matrix,
    pub b: Vec<f64>,
    pub log_abs_det: f64,
}

#[derive(Clone, Debug)]
pub struct Target {
    kind: TargetKind,
    dim: usize,
}

fn stabilized_log_weights() -> (f64, f64) {
    // log(1/(1+e^-100)) and log(1/(1+e^100))
    let lw_uniform = -(-100f64).exp().ln_1p();
    let lw_gauss = -100.0 - (-100f64).exp().ln_1p();
    (lw_uniform, lw_gauss)
}

fn in_unit_cube(x: &[f64]) -> bool {
    x.iter().all(|&v| (0.0..=1.0).contains(&v))
}

fn cross_centers() -> [[f64; 2]; 4] {
    let h = CROSS_SEPARATION / 2.0;
    [[h, 0.0], [-h, 0.0], [0.0, h], [0.0, -h]]
}

impl Target {
    pub fn iso_gaussian(dim: usize) -> Result<Self> {
        Self::product(TargetKind::IsoGaussian, dim)
    }

    pub fn iso_laplace(dim: usize) -> Result<Self> {
        Self::product(TargetKind::IsoLaplace, dim)
    }

    pub fn iso_cauchy(dim: usize) -> Result<Self> {
        Self::product(TargetKind::IsoCauchy, dim)
    }

    pub fn stabilized_uniform(dim: usize) -> Result<Self> {
        Self::product(TargetKind::StabilizedUniform, dim)
    }

    pub fn cross() -> Self {
        Self { kind: TargetKind::GaussianMixtureCross, dim: 2 }
    }

    pub fn logistic(data: LogisticDataset) -> Self {
        let dim = data.dim();
        Self { kind: TargetKind::LogisticRegressionPosterior(Arc::new(data)), dim }
    }

    fn product(kind: TargetKind, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(config_err("target dimension must be positive"));
        }
        Ok(Self { kind, dim })
    }

    /// Law of A·x + b for x ~ base.
    pub fn affine_pushforward(base: Target, a: Matrix, b: Vec<f64>) -> Result<Self> {
        let d = base.dim;
        if a.shape() != (d, d) || b.len() != d {
            return Err(shape_err(format!("affine map must be {d}×{d} with offset of length {d}")));
        }
        let det = a.determinant();
        if det.abs() <= 1e-12 {
            return Err(config_err(format!("affine map is singular (|det A| = {:e})", det.abs())));
        }
        let a_inv = a.inverse().ok_or_else(|| config_err("affine map is singular"))?;
        let aff = Affine { base, a, a_inv, b, log_abs_det: det.abs().ln() };
        Ok(Self { kind: TargetKind::AffinePushforward(Arc::new(aff)), dim: d })
    }

    /// Joint target of `base` and `aux` independent standard gaussian coordinates.
    pub fn augmented(base: Target, aux: usize) -> Result<Self> {
        if aux == 0 {
            return Err(config_err("augmentation needs at least one auxiliary coordinate"));
        }
        let dim = base.dim + aux;
        Ok(Self { kind: TargetKind::Augmented { base: Arc::new(base), aux }, dim })
    }

    /// Dimension of the original variables (excluding auxiliaries).
    pub fn base_dim(&self) -> usize {
        match &self.kind {
            TargetKind::Augmented { base, .. } => base.dim,
            _ => self.dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &TargetKind {
        &self.kind
    }

    pub fn name(&self) -> String {
        match &self.kind {
            TargetKind::IsoGaussian => format!("iso_gaussian(d={})", self.dim),
            TargetKind::IsoLaplace => format!("iso_laplace(d={})", self.dim),
            TargetKind::IsoCauchy => format!("iso_cauchy(d={})", self.dim),
            TargetKind::StabilizedUniform => format!("stabilized_uniform(d={})", self.dim),
            TargetKind::GaussianMixtureCross => "gaussian_mixture_cross".into(),
            TargetKind::LogisticRegressionPosterior(ds) => {
                format!("logistic_posterior(d={}, rows={})", self.dim, ds.n_rows())
            }
            TargetKind::AffinePushforward(aff) => format!("affine({})", aff.base.name()),
            TargetKind::Augmented { base, aux } => format!("{}+aux{aux}", base.name()),
        }
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(shape_err(format!("target has dimension {}, got vector of length {}", self.dim, x.len())));
        }
        Ok(())
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        Ok(self.log_density_unchecked(x))
    }

    fn log_density_unchecked(&self, x: &[f64]) -> f64 {
        let d = self.dim as f64;
        match &self.kind {
            TargetKind::IsoGaussian => -0.5 * x.iter().map(|v| v * v).sum::<f64>() - d * HALF_LN_2PI,
            TargetKind::IsoLaplace => -x.iter().map(|v| v.abs()).sum::<f64>() - d * LN_2,
            TargetKind::IsoCauchy => -x.iter().map(|v| (v * v).ln_1p()).sum::<f64>() - d * PI.ln(),
            TargetKind::StabilizedUniform => {
                let (lu, lg) = stabilized_log_weights();
                let gauss = lg - 0.5 * x.iter().map(|v| v * v).sum::<f64>() - d * HALF_LN_2PI;
                if in_unit_cube(x) {
                    logsumexp(&[lu, gauss])
                } else {
                    gauss
                }
            }
            TargetKind::GaussianMixtureCross => {
                let terms: Vec<f64> = cross_centers()
                    .iter()
                    .map(|c| {
                        let r2 = (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2);
                        -0.5 * r2 - 2.0 * HALF_LN_2PI - 4f64.ln()
                    })
                    .collect();
                logsumexp(&terms)
            }
            TargetKind::LogisticRegressionPosterior(ds) => ds.log_posterior(x),
            TargetKind::AffinePushforward(aff) => {
                let u = aff.pull_back(x);
                aff.base.log_density_unchecked(&u) - aff.log_abs_det
            }
            TargetKind::Augmented { base, aux } => {
                let (x, a) = x.split_at(base.dim);
                base.log_density_unchecked(x) - 0.5 * a.iter().map(|v| v * v).sum::<f64>() - *aux as f64 * HALF_LN_2PI
            }
        }
    }

    pub fn grad_log_density(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        Ok(self.grad_unchecked(x))
    }

    fn grad_unchecked(&self, x: &[f64]) -> Vec<f64> {
        match &self.kind {
            TargetKind::IsoGaussian => x.iter().map(|v| -v).collect(),
            TargetKind::IsoLaplace => x.iter().map(|&v| if v > 0.0 { -1.0 } else if v < 0.0 { 1.0 } else { 0.0 }).collect(),
            TargetKind::IsoCauchy => x.iter().map(|v| -2.0 * v / (1.0 + v * v)).collect(),
            TargetKind::StabilizedUniform => {
                let r = self.stabilized_gauss_resp(x);
                x.iter().map(|v| -r * v).collect()
            }
            TargetKind::GaussianMixtureCross => {
                let (w, _) = self.cross_resp(x);
                let centers = cross_centers();
                let mut g = [0.0; 2];
                for (k, c) in centers.iter().enumerate() {
                    g[0] += w[k] * (c[0] - x[0]);
                    g[1] += w[k] * (c[1] - x[1]);
                }
                g.to_vec()
            }
            TargetKind::LogisticRegressionPosterior(ds) => ds.grad_log_posterior(x),
            TargetKind::AffinePushforward(aff) => {
                let u = aff.pull_back(x);
                let gu = aff.base.grad_unchecked(&u);
                aff.a_inv.transpose().matvec(&gu)
            }
            TargetKind::Augmented { base, .. } => {
                let (x, a) = x.split_at(base.dim);
                let mut g = base.grad_unchecked(x);
                g.extend(a.iter().map(|v| -v));
                g
            }
        }
    }

    /// Hessian of log π at x applied to v.
    pub fn hvp(&self, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        self.check(v)?;
        Ok(self.hvp_unchecked(x, v))
    }

    fn hvp_unchecked(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        match &self.kind {
            TargetKind::IsoGaussian => v.iter().map(|w| -w).collect(),
            TargetKind::IsoLaplace => vec![0.0; v.len()],
            TargetKind::IsoCauchy => x
                .iter()
                .zip(v)
                .map(|(a, w)| {
                    let q = 1.0 + a * a;
                    -2.0 * (1.0 - a * a) / (q * q) * w
                })
                .collect(),
            TargetKind::StabilizedUniform => {
                let r = self.stabilized_gauss_resp(x);
                let xv: f64 = x.iter().zip(v).map(|(a, b)| a * b).sum();
                x.iter().zip(v).map(|(a, w)| -r * w + r * (1.0 - r) * a * xv).collect()
            }
            TargetKind::GaussianMixtureCross => {
                // H = -I + Cov_w(c - x) under the component responsibilities
                let (w, _) = self.cross_resp(x);
                let centers = cross_centers();
                let mut mean = [0.0; 2];
                for (k, c) in centers.iter().enumerate() {
                    mean[0] += w[k] * c[0];
                    mean[1] += w[k] * c[1];
                }
                let mut out = [-v[0], -v[1]];
                for (k, c) in centers.iter().enumerate() {
                    let dc = [c[0] - mean[0], c[1] - mean[1]];
                    let proj = dc[0] * v[0] + dc[1] * v[1];
                    out[0] += w[k] * dc[0] * proj;
                    out[1] += w[k] * dc[1] * proj;
                }
                out.to_vec()
            }
            TargetKind::LogisticRegressionPosterior(ds) => ds.hvp(x, v),
            TargetKind::AffinePushforward(aff) => {
                let u = aff.pull_back(x);
                let vu = aff.a_inv.matvec(v);
                let hu = aff.base.hvp_unchecked(&u, &vu);
                aff.a_inv.transpose().matvec(&hu)
            }
            TargetKind::Augmented { base, .. } => {
                let (x, _) = x.split_at(base.dim);
                let (vx, va) = v.split_at(base.dim);
                let mut h = base.hvp_unchecked(x, vx);
                h.extend(va.iter().map(|w| -w));
                h
            }
        }
    }

    fn stabilized_gauss_resp(&self, x: &[f64]) -> f64 {
        if !in_unit_cube(x) {
            return 1.0;
        }
        let (lu, lg) = stabilized_log_weights();
        let d = self.dim as f64;
        let gauss = lg - 0.5 * x.iter().map(|v| v * v).sum::<f64>() - d * HALF_LN_2PI;
        (gauss - logsumexp(&[lu, gauss])).exp()
    }

    fn cross_resp(&self, x: &[f64]) -> ([f64; 4], f64) {
        let centers = cross_centers();
        let mut t = [0.0; 4];
        for (k, c) in centers.iter().enumerate() {
            t[k] = -0.5 * ((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2));
        }
        let lse = logsumexp(&t);
        let mut w = [0.0; 4];
        for k in 0..4 {
            w[k] = (t[k] - lse).exp();
        }
        (w, lse)
    }

    pub fn direct_sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        let d = self.dim;
        Ok(match &self.kind {
            TargetKind::IsoGaussian => (0..d).map(|_| StandardNormal.sample(rng)).collect(),
            TargetKind::IsoLaplace => (0..d)
                .map(|_| {
                    let u: f64 = rng.random::<f64>() - 0.5;
                    -u.signum() * (1.0 - 2.0 * u.abs()).ln()
                })
                .collect(),
            TargetKind::IsoCauchy => {
                let c = Cauchy::new(0.0, 1.0).expect("unit Cauchy");
                (0..d).map(|_| c.sample(rng)).collect()
            }
            TargetKind::StabilizedUniform => {
                let (_, lg) = stabilized_log_weights();
                if rng.random::<f64>() < lg.exp() {
                    (0..d).map(|_| StandardNormal.sample(rng)).collect()
                } else {
                    (0..d).map(|_| rng.random::<f64>()).collect()
                }
            }
            TargetKind::GaussianMixtureCross => {
                let c = cross_centers()[rng.random_range(0..4)];
                let e0: f64 = StandardNormal.sample(rng);
                let e1: f64 = StandardNormal.sample(rng);
                vec![c[0] + e0, c[1] + e1]
            }
            TargetKind::LogisticRegressionPosterior(_) => {
                return Err(Error::Capability(
                    "the logistic posterior cannot be sampled directly; draw starts from an HMC reference chain".into(),
                ))
            }
            TargetKind::AffinePushforward(aff) => {
                let u = aff.base.direct_sample(rng)?;
                aff.push(&u)
            }
            TargetKind::Augmented { base, aux } => {
                let mut x = base.direct_sample(rng)?;
                x.extend((0..*aux).map(|_| -> f64 { StandardNormal.sample(rng) }));
                x
            }
        })
    }

    pub fn can_sample(&self) -> bool {
        match &self.kind {
            TargetKind::LogisticRegressionPosterior(_) => false,
            TargetKind::AffinePushforward(aff) => aff.base.can_sample(),
            TargetKind::Augmented { base, .. } => base.can_sample(),
            _ => true,
        }
    }

    /// Smallest marginal variance when known in closed form.
    pub fn min_marginal_variance(&self) -> Option<f64> {
        match &self.kind {
            TargetKind::IsoGaussian => Some(1.0),
            TargetKind::IsoLaplace => Some(2.0),
            TargetKind::StabilizedUniform => Some(1.0 / 12.0),
            TargetKind::GaussianMixtureCross => Some(1.0 + CROSS_SEPARATION * CROSS_SEPARATION / 8.0),
            TargetKind::Augmented { base, .. } => base.min_marginal_variance().map(|v| v.min(1.0)),
            _ => None,
        }
    }

    /// Row-wise log-density of an `r × d` batch as an `r × 1` tape node.
    pub fn record_log_density(&self, tape: &Tape, x: Var) -> Result<Var> {
        let xv = tape.value(x).clone();
        if xv.cols != self.dim {
            return Err(shape_err(format!("target has dimension {}, batch has {} columns", self.dim, xv.cols)));
        }
        let mut vals = Vec::with_capacity(xv.rows);
        let mut grad = Matrix::zeros(xv.rows, xv.cols);
        for i in 0..xv.rows {
            let row = xv.row(i);
            vals.push(self.log_density_unchecked(row));
            grad.row_mut(i).copy_from_slice(&self.grad_unchecked(row));
        }
        Ok(tape.row_scalar_fn(x, vals, grad))
    }

    /// Row-wise score ∇log π of a batch, differentiable through Hessian-vector products.
    pub fn record_score(&self, tape: &Tape, x: Var) -> Result<Var> {
        let xv = tape.value(x).clone();
        if xv.cols != self.dim {
            return Err(shape_err(format!("target has dimension {}, batch has {} columns", self.dim, xv.cols)));
        }
        let mut out = Matrix::zeros(xv.rows, xv.cols);
        for i in 0..xv.rows {
            out.row_mut(i).copy_from_slice(&self.grad_unchecked(xv.row(i)));
        }
        let me = self.clone();
        // the Hessian is symmetric, so the VJP is an HVP
        Ok(tape.row_vector_fn(x, out, std::rc::Rc::new(move |row, adj| me.hvp_unchecked(row, adj))))
    }
}

impl Affine {
    fn pull_back(&self, z: &[f64]) -> Vec<f64> {
        let shifted: Vec<f64> = z.iter().zip(&self.b).map(|(a, b)| a - b).collect();
        self.a_inv.matvec(&shifted)
    }

    fn push(&self, x: &[f64]) -> Vec<f64> {
        self.a.matvec(x).iter().zip(&self.b).map(|(a, b)| a + b).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn one_dimensional_normalizers() {
        assert!((Target::iso_gaussian(1).unwrap().log_density(&[0.0]).unwrap() + 0.918_938_5).abs() < 1e-7);
        assert!((Target::iso_laplace(1).unwrap().log_density(&[0.0]).unwrap() + std::f64::consts::LN_2).abs() < 1e-7);
        assert!((Target::iso_cauchy(1).unwrap().log_density(&[0.0]).unwrap() + 1.144_729_9).abs() < 1e-7);
    }

    #[test]
    fn scores() {
        assert_eq!(Target::iso_gaussian(3).unwrap().grad_log_density(&[1.0, -2.0, 0.5]).unwrap(), vec![-1.0, 2.0, -0.5]);
        assert!((Target::iso_cauchy(1).unwrap().grad_log_density(&[1.0]).unwrap()[0] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_shape_error() {
        let t = Target::iso_gaussian(2).unwrap();
        assert!(matches!(t.log_density(&[0.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn stabilized_uniform_weights() {
        let (lu, lg) = stabilized_log_weights();
        assert!((lu.exp() - 1.0 / (1.0 + (-100f64).exp())).abs() < 1e-300);
        assert!((lg - (1.0 / (1.0 + 100f64.exp())).ln()).abs() < 1e-12);
        let t = Target::stabilized_uniform(2).unwrap();
        assert!(t.log_density(&[0.5, 0.5]).unwrap().abs() < 1e-12);
        assert!(t.log_density(&[1.5, 0.5]).unwrap().is_finite());
    }

    #[test]
    fn stabilized_uniform_draws_stay_in_cube() {
        let t = Target::stabilized_uniform(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let outside = (0..10_000).filter(|_| !in_unit_cube(&t.direct_sample(&mut rng).unwrap())).count();
        assert_eq!(outside, 0);
    }

    #[test]
    fn cross_centers_have_separation_eight() {
        let c = cross_centers();
        let mut max = 0.0f64;
        for a in &c {
            for b in &c {
                max = max.max(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt());
            }
        }
        assert_eq!(max, 8.0);
    }

    #[test]
    fn pushforward_constant() {
        let base = Target::iso_gaussian(1).unwrap();
        let t = Target::affine_pushforward(base, Matrix::scalar(2.0), vec![0.0]).unwrap();
        assert!((t.log_density(&[0.0]).unwrap() - (-0.918_938_533_204_672_8 - LN_2)).abs() < 1e-12);
    }

    #[test]
    fn singular_pushforward_rejected() {
        let base = Target::iso_gaussian(2).unwrap();
        let a = Matrix::new(2, 2, vec![1.0, 2.0, 2.0, 4.0]);
        assert!(matches!(Target::affine_pushforward(base, a, vec![0.0; 2]), Err(Error::Config(_))));
    }

    #[test]
    fn augmented_gaussian_is_gaussian() {
        let joint = Target::augmented(Target::iso_gaussian(2).unwrap(), 2).unwrap();
        let iso = Target::iso_gaussian(4).unwrap();
        let x = [0.3, -1.2, 2.0, 0.1];
        assert!((joint.log_density(&x).unwrap() - iso.log_density(&x).unwrap()).abs() < 1e-12);
        assert_eq!(joint.grad_log_density(&x).unwrap(), iso.grad_log_density(&x).unwrap());
        assert_eq!(joint.base_dim(), 2);
    }

    #[test]
    fn logistic_cannot_sample() {
        let ds = LogisticDataset::synthetic(10, 2, 0);
        let t = Target::logistic(ds);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(t.direct_sample(&mut rng), Err(Error::Capability(_))));
    }
}
