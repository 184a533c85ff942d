//! Run configuration, as read from and echoed to JSON.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::diff::{OptimizerConfig, OptimizerKind};
use crate::envs::CodonWeights;
use crate::explorers::ExplorerConfig;
use crate::gflownet::PolicyConfig;

use super::RunError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvConfig {
    Chain {
        #[serde(default = "default_chain_len")]
        n_states: usize,
        #[serde(default = "default_r_end")]
        r_end: f64,
        #[serde(default = "one")]
        r_mid: f64,
    },
    Hypergrid {
        dims: usize,
        height: usize,
        r0: f64,
        #[serde(default = "default_r1")]
        r1: f64,
        #[serde(default = "default_r2")]
        r2: f64,
    },
    Bitseq {
        half_length: usize,
        #[serde(default = "one")]
        r_mode: f64,
        #[serde(default = "default_r_deceptive")]
        r_deceptive: f64,
        #[serde(default = "default_deceptive_len")]
        deceptive_max_len: usize,
        #[serde(default = "default_r_floor")]
        r_floor: f64,
    },
    BayesDag {
        n_nodes: usize,
        #[serde(default = "default_edge_prob")]
        edge_prob: f64,
        #[serde(default = "default_bayes_samples")]
        n_samples: usize,
        #[serde(default = "one")]
        noise_sigma: f64,
        #[serde(default)]
        data_seed: u64,
        /// Observations to score instead of simulated SCM data.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dataset_csv: Option<PathBuf>,
        /// Ground-truth edges for a CSV dataset.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ground_truth: Option<Vec<(usize, usize)>>,
        #[serde(default = "one")]
        alpha_mu: f64,
        /// Defaults to n_nodes + 2.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        alpha_w: Option<f64>,
    },
    Codon {
        protein: String,
        #[serde(default)]
        weights: CodonWeights,
    },
}

impl EnvConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            EnvConfig::Chain { .. } => "chain",
            EnvConfig::Hypergrid { .. } => "hypergrid",
            EnvConfig::Bitseq { .. } => "bitseq",
            EnvConfig::BayesDag { .. } => "bayes_dag",
            EnvConfig::Codon { .. } => "codon",
        }
    }
}

fn one() -> f64 {
    1.0
}
fn default_chain_len() -> usize {
    100
}
fn default_r_end() -> f64 {
    101.0
}
fn default_r1() -> f64 {
    0.5
}
fn default_r2() -> f64 {
    2.0
}
fn default_r_deceptive() -> f64 {
    1e-3
}
fn default_deceptive_len() -> usize {
    4
}
fn default_r_floor() -> f64 {
    1e-6
}
fn default_edge_prob() -> f64 {
    0.5
}
fn default_bayes_samples() -> usize {
    100
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Sampled terminal states per evaluation where sampling is needed.
    pub samples: usize,
    /// Posterior DAG samples used for E-SHD and edge AUC.
    pub posterior_samples: usize,
    pub topk: usize,
    /// Largest state space evaluated with the exact oracle.
    pub exact_cap: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            samples: 16_000,
            posterior_samples: 1000,
            topk: 10,
            exact_cap: 1 << 16,
        }
    }
}

fn default_batch() -> usize {
    16
}

fn default_eval_every() -> u64 {
    100
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvConfig,
    #[serde(default)]
    pub explorer: ExplorerConfig,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Training iterations; exactly one of `iterations` and
    /// `trajectory_budget` is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<u64>,
    /// Total sampled trajectories, auxiliary ones included.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory_budget: Option<u64>,
    #[serde(default = "default_eval_every")]
    pub eval_every: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub policy: PolicyConfig,
    /// Auxiliary agent architecture; the main one when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aux_policy: Option<PolicyConfig>,
    /// Adam for MLP policies and SGD for tables when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerConfig>,
    #[serde(default)]
    pub eval: EvalConfig,
    /// Iteration after which the auxiliary agent is dropped.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aux_stop_after: Option<u64>,
}

impl RunConfig {
    pub fn new(env: EnvConfig) -> Self {
        Self {
            env,
            explorer: ExplorerConfig::default(),
            batch_size: default_batch(),
            iterations: Some(1000),
            trajectory_budget: None,
            eval_every: default_eval_every(),
            seed: 0,
            policy: PolicyConfig::default(),
            aux_policy: None,
            optimizer: None,
            eval: EvalConfig::default(),
            aux_stop_after: None,
        }
    }

    pub fn total_iterations(&self) -> Result<u64, RunError> {
        match (self.iterations, self.trajectory_budget) {
            (Some(n), None) => Ok(n),
            (None, Some(b)) => {
                if b % self.batch_size as u64 != 0 {
                    return Err(RunError::Config(format!(
                        "trajectory_budget {b} is not a multiple of batch_size {}",
                        self.batch_size
                    )));
                }
                Ok(b / self.batch_size as u64)
            }
            _ => Err(RunError::Config(
                "give exactly one of iterations and trajectory_budget".into(),
            )),
        }
    }

    pub fn optimizer_for(&self, policy: &PolicyConfig) -> OptimizerConfig {
        self.optimizer.clone().unwrap_or_else(|| OptimizerConfig {
            kind: match policy {
                PolicyConfig::Tabular => OptimizerKind::Sgd,
                PolicyConfig::Mlp { .. } => OptimizerKind::Adam,
            },
            ..OptimizerConfig::default()
        })
    }

    pub fn aux_policy_config(&self) -> &PolicyConfig {
        self.aux_policy.as_ref().unwrap_or(&self.policy)
    }

    /// Fills every defaulted choice so the echoed file is self-contained.
    pub fn resolved(&self) -> Self {
        let mut out = self.clone();
        out.optimizer = Some(self.optimizer_for(&self.policy));
        if self.explorer.kind.has_aux() && out.aux_policy.is_none() {
            out.aux_policy = Some(self.policy.clone());
        }
        out
    }

    pub fn validate(&self) -> Result<(), RunError> {
        if self.batch_size == 0 {
            return Err(RunError::Config("batch_size must be positive".into()));
        }
        if self.eval_every == 0 {
            return Err(RunError::Config("eval_every must be positive".into()));
        }
        if self.explorer.kind.has_aux() && self.batch_size < 2 {
            return Err(RunError::Config("auxiliary explorers need batch_size >= 2".into()));
        }
        if self.total_iterations()? == 0 {
            return Err(RunError::Config("the run has no iterations".into()));
        }
        self.explorer.validate()?;
        for opt in [self.optimizer_for(&self.policy), self.optimizer_for(self.aux_policy_config())] {
            if !(opt.lr > 0.0 && opt.log_z_lr > 0.0) {
                return Err(RunError::Config("learning rates must be positive".into()));
            }
        }
        Ok(())
    }
}
