//! BGe score: the Gaussian-Wishart marginal likelihood of a linear-Gaussian
//! network, decomposed into per-node local scores.

use std::collections::HashMap;
use std::sync::Mutex;

use libm::lgamma;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use crate::env::EnvError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BgeParams {
    pub alpha_mu: f64,
    pub alpha_w: f64,
    /// Prior mean of the observations; zeros when `None`.
    pub mean_obs: Option<Vec<f64>>,
}

impl BgeParams {
    /// α_μ = 1, α_w = d + 2, zero prior mean.
    pub fn default_for(d: usize) -> Self {
        Self {
            alpha_mu: 1.0,
            alpha_w: d as f64 + 2.0,
            mean_obs: None,
        }
    }
}

pub struct BgeScorer {
    n_vars: usize,
    n_samples: usize,
    alpha_w: f64,
    /// Posterior scale matrix R.
    r: DMatrix<f64>,
    /// Parent-count-dependent constant, indexed by |Pa|.
    log_gamma_term: Vec<f64>,
    cache: Mutex<HashMap<(usize, u32), f64>>,
}

impl BgeScorer {
    pub fn new(dataset: &Dataset, params: BgeParams) -> Result<Self, EnvError> {
        let d = dataset.n_vars();
        let n = dataset.n_samples();
        if n < 2 {
            return Err(EnvError::Config("BGe needs at least two samples".into()));
        }
        let (alpha_mu, alpha_w) = (params.alpha_mu, params.alpha_w);
        if !(alpha_mu > 0.0 && alpha_w > d as f64 - 1.0) {
            return Err(EnvError::Config("BGe needs alpha_mu > 0 and alpha_w > d - 1".into()));
        }
        let mean_obs = params.mean_obs.unwrap_or_else(|| vec![0.0; d]);
        if mean_obs.len() != d {
            return Err(EnvError::Config("prior mean length differs from the dataset".into()));
        }
        let t = alpha_mu * (alpha_w - d as f64 - 1.0) / (alpha_mu + 1.0);
        if t <= 0.0 {
            return Err(EnvError::Config("BGe needs alpha_w > d + 1".into()));
        }

        let x = DMatrix::from_fn(n, d, |i, j| dataset.value(i, j));
        let mean = x.row_mean();
        let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
        let diff = DMatrix::from_fn(d, 1, |j, _| mean[j] - mean_obs[j]);
        let nf = n as f64;
        let r = DMatrix::identity(d, d) * t
            + centered.transpose() * &centered
            + (&diff * diff.transpose()) * (nf * alpha_mu / (nf + alpha_mu));

        let df = alpha_w - d as f64;
        let log_gamma_term = (0..d)
            .map(|p| {
                let p = p as f64;
                0.5 * (alpha_mu.ln() - (nf + alpha_mu).ln())
                    + lgamma(0.5 * (nf + df + p + 1.0))
                    - lgamma(0.5 * (df + p + 1.0))
                    - 0.5 * nf * std::f64::consts::PI.ln()
                    + 0.5 * (df + 2.0 * p + 1.0) * t.ln()
            })
            .collect();

        Ok(Self {
            n_vars: d,
            n_samples: n,
            alpha_w,
            r,
            log_gamma_term,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    fn logdet(&self, idx: &[usize]) -> Result<f64, EnvError> {
        let sub = DMatrix::from_fn(idx.len(), idx.len(), |a, b| self.r[(idx[a], idx[b])]);
        let chol = sub.cholesky().ok_or(EnvError::SingularCovariance)?;
        let l = chol.l_dirty();
        Ok(2.0 * (0..idx.len()).map(|k| l[(k, k)].ln()).sum::<f64>())
    }

    fn compute(&self, j: usize, parents: u32) -> Result<f64, EnvError> {
        let pa: Vec<usize> = (0..self.n_vars).filter(|&i| parents >> i & 1 == 1).collect();
        let p = pa.len() as f64;
        let a = self.n_samples as f64 + self.alpha_w - self.n_vars as f64 + p;
        let mut family = pa.clone();
        family.push(j);
        let with_child = self.logdet(&family)?;
        let without = if pa.is_empty() { 0.0 } else { self.logdet(&pa)? };
        let score = self.log_gamma_term[pa.len()] + 0.5 * a * without - 0.5 * (a + 1.0) * with_child;
        if score.is_finite() {
            Ok(score)
        } else {
            Err(EnvError::SingularCovariance)
        }
    }

    /// Local score of node `j` given the parent bitmask, memoized.
    pub fn local_score(&self, j: usize, parents: u32) -> Result<f64, EnvError> {
        if j >= self.n_vars || parents >> j & 1 == 1 || (self.n_vars < 32 && parents >> self.n_vars != 0) {
            return Err(EnvError::Config(format!("invalid family for node {j}")));
        }
        if let Some(&v) = self.cache.lock().expect("cache lock").get(&(j, parents)) {
            return Ok(v);
        }
        let v = self.compute(j, parents)?;
        self.cache.lock().expect("cache lock").insert((j, parents), v);
        Ok(v)
    }

    pub fn cached_entries(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }
}
