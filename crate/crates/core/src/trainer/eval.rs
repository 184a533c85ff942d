//! Environment-specific evaluation hooks.

use crate::env::Environment;
use crate::envs::chain::EXIT;
use crate::envs::{BayesDagEnv, BitSeqEnv, ChainEnv, CodonEnv, Dag, HypergridEnv};
use crate::gflownet::PolicySet;
use crate::metrics::{
    bitseq_diversity, bitseq_exploration_error, edge_marginals, edge_roc_auc, expected_shd, topk_mean_reward,
    MetricRecord,
};

use super::{EvalConfig, RunError};

pub trait Evaluate: Environment {
    /// Terminal samples drawn from the main agent at each evaluation.
    fn eval_samples(&self, _cfg: &EvalConfig) -> usize {
        0
    }

    fn sample_metrics(&self, _samples: &[Self::State], _cfg: &EvalConfig, _rec: &mut MetricRecord) -> Result<(), RunError> {
        Ok(())
    }

    fn policy_metrics(&self, _policy: &PolicySet, _rec: &mut MetricRecord) -> Result<(), RunError> {
        Ok(())
    }
}

impl Evaluate for ChainEnv {
    fn policy_metrics(&self, policy: &PolicySet, rec: &mut MetricRecord) -> Result<(), RunError> {
        rec.exit_prob_s0 = Some(policy.forward_log_prob(self, &0, EXIT)?.exp());
        Ok(())
    }
}

impl Evaluate for HypergridEnv {}

impl Evaluate for BitSeqEnv {
    fn eval_samples(&self, cfg: &EvalConfig) -> usize {
        cfg.samples
    }

    fn sample_metrics(&self, samples: &[Vec<u8>], _cfg: &EvalConfig, rec: &mut MetricRecord) -> Result<(), RunError> {
        rec.diversity = Some(bitseq_diversity(samples, self) as u64);
        rec.exploration_error = Some(bitseq_exploration_error(samples, self));
        Ok(())
    }
}

impl Evaluate for BayesDagEnv {
    fn eval_samples(&self, cfg: &EvalConfig) -> usize {
        if self.ground_truth().is_some() {
            cfg.posterior_samples
        } else {
            0
        }
    }

    fn sample_metrics(&self, samples: &[Dag], _cfg: &EvalConfig, rec: &mut MetricRecord) -> Result<(), RunError> {
        if let Some(truth) = self.ground_truth() {
            rec.e_shd = Some(expected_shd(samples, truth)?);
            let d = self.n_nodes();
            let n_edges = truth.n_edges();
            if n_edges > 0 && n_edges < d * (d - 1) {
                rec.roc_auc = Some(edge_roc_auc(&edge_marginals(samples, d)?, truth)?);
            }
        }
        Ok(())
    }
}

impl Evaluate for CodonEnv {
    fn eval_samples(&self, cfg: &EvalConfig) -> usize {
        cfg.samples
    }

    fn sample_metrics(&self, samples: &[Vec<u8>], cfg: &EvalConfig, rec: &mut MetricRecord) -> Result<(), RunError> {
        let scored = samples
            .iter()
            .map(|s| Ok((s.clone(), self.codon_reward(s)?)))
            .collect::<Result<Vec<_>, RunError>>()?;
        rec.topk_reward = topk_mean_reward(scored, cfg.topk).ok();
        Ok(())
    }
}
