//! First-order optimizers with per-group learning rates.

use serde::{Deserialize, Serialize};

use super::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

/// Name of the log-partition group; it gets its own learning rate.
pub const LOG_Z_GROUP: &str = "logZ";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub log_z_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr: 1e-3,
            log_z_lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Optimizer {
    config: OptimizerConfig,
    /// Learning rate of every flat parameter slot.
    lrs: Vec<f64>,
    moments: Option<(Vec<f64>, Vec<f64>)>,
    steps: u64,
}

impl Optimizer {
    /// Group `logZ` uses `log_z_lr`, everything else `lr`.
    pub fn new(config: OptimizerConfig, store: &ParamStore) -> Self {
        let (lr, log_z_lr) = (config.lr, config.log_z_lr);
        Self::with_group_lrs(config, store, |name| if name == LOG_Z_GROUP { log_z_lr } else { lr })
    }

    pub fn with_group_lrs(config: OptimizerConfig, store: &ParamStore, lr_for: impl Fn(&str) -> f64) -> Self {
        let mut lrs = vec![0.0; store.len()];
        for g in store.groups() {
            let lr = lr_for(&g.name);
            lrs[g.range()].iter_mut().for_each(|v| *v = lr);
        }
        let moments = match config.kind {
            OptimizerKind::Sgd => None,
            OptimizerKind::Adam => Some((vec![0.0; store.len()], vec![0.0; store.len()])),
        };
        Self {
            config,
            lrs,
            moments,
            steps: 0,
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn has_moments(&self) -> bool {
        self.moments.is_some()
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    pub fn step(&mut self, store: &mut ParamStore) {
        assert_eq!(store.len(), self.lrs.len(), "optimizer built for another store");
        self.steps += 1;
        let n = store.len();
        match &mut self.moments {
            None => {
                for i in 0..n {
                    let g = store.grads()[i];
                    store.values_mut()[i] -= self.lrs[i] * g;
                }
            }
            Some((m, v)) => {
                let (b1, b2, eps) = (self.config.beta1, self.config.beta2, self.config.eps);
                let t = self.steps as i32;
                let c1 = 1.0 - b1.powi(t);
                let c2 = 1.0 - b2.powi(t);
                for i in 0..n {
                    let g = store.grads()[i];
                    m[i] = b1 * m[i] + (1.0 - b1) * g;
                    v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                    let m_hat = m[i] / c1;
                    let v_hat = v[i] / c2;
                    store.values_mut()[i] -= self.lrs[i] * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        store.zero_grads();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_groups() -> ParamStore {
        let mut s = ParamStore::new();
        s.add_group("w", 1, 1, || 1.0);
        s.add_group(LOG_Z_GROUP, 1, 1, || 1.0);
        s
    }

    #[test]
    fn sgd_single_step() {
        let mut s = ParamStore::new();
        s.add_group("w", 1, 1, || 1.0);
        let cfg = OptimizerConfig {
            kind: OptimizerKind::Sgd,
            lr: 0.1,
            ..Default::default()
        };
        let mut opt = Optimizer::new(cfg, &s);
        assert!(!opt.has_moments());
        s.grads_mut()[0] = 1.0;
        opt.step(&mut s);
        assert!((s.values()[0] - 0.9).abs() < 1e-15);
        assert_eq!(s.grads(), &[0.0]);
    }

    #[test]
    fn adam_first_step_has_lr_magnitude() {
        for g in [1e-3, 0.5, -7.0] {
            let mut s = ParamStore::new();
            s.add_group("w", 1, 1, || 0.0);
            let mut opt = Optimizer::new(OptimizerConfig::default(), &s);
            assert!(opt.has_moments());
            s.grads_mut()[0] = g;
            opt.step(&mut s);
            assert!((s.values()[0].abs() - 1e-3).abs() < 1e-7, "g={g}");
            assert_eq!(s.values()[0].signum(), -g.signum());
        }
    }

    #[test]
    fn group_learning_rates_scale_updates() {
        let mut s = two_groups();
        let cfg = OptimizerConfig {
            kind: OptimizerKind::Sgd,
            lr: 0.001,
            log_z_lr: 0.1,
            ..Default::default()
        };
        let mut opt = Optimizer::new(cfg, &s);
        s.grads_mut().copy_from_slice(&[1.0, 1.0]);
        opt.step(&mut s);
        assert!((1.0 - s.slice("w")[0] - 0.001).abs() < 1e-15);
        assert!((1.0 - s.slice(LOG_Z_GROUP)[0] - 0.1).abs() < 1e-15);
    }
}
