use std::io::Read;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::diffcore::Matrix;
use crate::error::{config_err, Error, Result};

pub const PRIOR_STD: f64 = 10.0;

/// Standardized design matrix with a trailing intercept column and binary labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LogisticDataset {
    design: Matrix,
    labels: Vec<f64>,
    prior_std: f64,
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl LogisticDataset {
    /// Standardize raw features column-wise and append the intercept.
    pub fn from_raw(features: &[Vec<f64>], labels: Vec<f64>) -> Result<Self> {
        if features.is_empty() || features.len() != labels.len() {
            return Err(config_err(format!(
                "dataset needs equal, non-zero row counts ({} feature rows, {} labels)",
                features.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
            return Err(config_err(format!("labels must be 0 or 1, found {bad}")));
        }
        let n = features.len();
        let p = features[0].len();
        if features.iter().any(|r| r.len() != p) {
            return Err(config_err("ragged feature rows"));
        }
        if features.iter().flatten().any(|v| !v.is_finite()) {
            return Err(config_err("non-finite feature value"));
        }
        let mut design = Matrix::zeros(n, p + 1);
        for j in 0..p {
            let mean = features.iter().map(|r| r[j]).sum::<f64>() / n as f64;
            let var = features.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n as f64;
            if var <= 0.0 {
                return Err(config_err(format!("feature column {j} is constant")));
            }
            let sd = var.sqrt();
            for (i, r) in features.iter().enumerate() {
                design.set(i, j, (r[j] - mean) / sd);
            }
        }
        for i in 0..n {
            design.set(i, p, 1.0);
        }
        Ok(Self { design, labels, prior_std: PRIOR_STD })
    }

    /// CSV with a header row; the last column is the label.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Io(e.to_string()))?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| config_err(format!("row {}: {e}", line + 2)))?;
            if vals.len() < 2 {
                return Err(config_err(format!("row {} needs at least one feature and a label", line + 2)));
            }
            labels.push(vals[vals.len() - 1]);
            features.push(vals[..vals.len() - 1].to_vec());
        }
        Self::from_raw(&features, labels)
    }

    pub fn from_csv(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_csv_reader(f)
    }

    /// Raw rows (features, label) of a reproducible synthetic problem.
    pub fn synthetic_rows(n_rows: usize, n_features: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights: Vec<f64> = (0..n_features).map(|_| StandardNormal.sample(&mut rng)).collect();
        let intercept = 0.5;
        let mut features = Vec::with_capacity(n_rows);
        let mut labels = Vec::with_capacity(n_rows);
        for _ in 0..n_rows {
            let x: Vec<f64> = (0..n_features).map(|_| StandardNormal.sample(&mut rng)).collect();
            let eta: f64 = intercept + x.iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>();
            labels.push(if rng.random::<f64>() < sigmoid(eta) { 1.0 } else { 0.0 });
            features.push(x);
        }
        (features, labels)
    }

    pub fn synthetic(n_rows: usize, n_features: usize, seed: u64) -> Self {
        let (f, l) = Self::synthetic_rows(n_rows, n_features, seed);
        Self::from_raw(&f, l).expect("synthetic data is well formed")
    }

    /// Posterior dimension: features plus intercept.
    pub fn dim(&self) -> usize {
        self.design.cols
    }

    pub fn n_rows(&self) -> usize {
        self.design.rows
    }

    pub fn design(&self) -> &Matrix {
        &self.design
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    /// Unnormalized log posterior under independent N(0, 10²) priors.
    pub fn log_posterior(&self, beta: &[f64]) -> f64 {
        let eta = self.design.matvec(beta);
        let lik: f64 = eta.iter().zip(&self.labels).map(|(&e, &y)| y * e - softplus(e)).sum();
        let s2 = self.prior_std * self.prior_std;
        lik - beta.iter().map(|b| b * b).sum::<f64>() / (2.0 * s2)
    }

    pub fn grad_log_posterior(&self, beta: &[f64]) -> Vec<f64> {
        let eta = self.design.matvec(beta);
        let resid: Vec<f64> = eta.iter().zip(&self.labels).map(|(&e, &y)| y - sigmoid(e)).collect();
        let s2 = self.prior_std * self.prior_std;
        let mut g: Vec<f64> = beta.iter().map(|b| -b / s2).collect();
        for i in 0..self.design.rows {
            for (gj, xij) in g.iter_mut().zip(self.design.row(i)) {
                *gj += resid[i] * xij;
            }
        }
        g
    }

    pub fn hvp(&self, beta: &[f64], v: &[f64]) -> Vec<f64> {
        let eta = self.design.matvec(beta);
        let xv = self.design.matvec(v);
        let s2 = self.prior_std * self.prior_std;
        let mut out: Vec<f64> = v.iter().map(|w| -w / s2).collect();
        for i in 0..self.design.rows {
            let s = sigmoid(eta[i]);
            let c = s * (1.0 - s) * xv[i];
            for (o, xij) in out.iter_mut().zip(self.design.row(i)) {
                *o -= c * xij;
            }
        }
        out
    }
}
