//! The training loop with an optional auxiliary agent, evaluation scheduling
//! and run bookkeeping.

mod config;
mod eval;

use std::collections::HashSet;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{EnvConfig, EvalConfig, RunConfig};
pub use eval::Evaluate;

use crate::diff::{Optimizer, OptimizerConfig, ParamGroup, ParamStore, Tape};
use crate::env::{EnvError, Environment, Trajectory};
use crate::envs::bayes::{generate_er_scm, read_dataset_csv, BgeParams};
use crate::envs::{BayesDagEnv, BitSeqEnv, ChainEnv, CodonEnv, Dag, HypergridEnv};
use crate::explorers::{aux_log_rewards, make_behavior_batch, trajectory_features, BehaviorBatch, ExplorerKind, Rnd};
use crate::gflownet::{
    exact_terminal_distribution, sample_trajectories, target_distribution, tb_deltas, tb_loss_batch, Architecture,
    GfnError, PolicySet, SamplerMod, TerminalDistribution,
};
use crate::metrics::{mean_l1, MetricError, MetricRecord};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Gfn(#[from] GfnError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("non-finite {agent} loss at iteration {iteration}")]
    NonFiniteLoss {
        agent: &'static str,
        iteration: u64,
        partial: Box<RunLog>,
    },
}

/// A policy with its optimizer and a count of applied updates.
#[derive(Clone, Debug)]
pub struct Agent {
    pub policy: PolicySet,
    pub optimizer: Optimizer,
    pub version: u64,
}

impl Agent {
    pub fn new(policy: PolicySet, config: OptimizerConfig) -> Self {
        let optimizer = Optimizer::new(config, policy.store());
        Self {
            policy,
            optimizer,
            version: 0,
        }
    }

    /// One optimizer step on the mean TB loss of `trajs`; returns the loss.
    pub fn update<E: Environment>(
        &mut self,
        env: &E,
        trajs: &[Trajectory<E::State>],
        log_rewards: Option<&[f64]>,
    ) -> Result<f64, GfnError> {
        let mut tape = Tape::new();
        let batch = tb_loss_batch(&mut tape, &self.policy, env, trajs, log_rewards)?;
        let loss = tape.scalar(batch.loss);
        if loss.is_finite() {
            let store = self.policy.store_mut();
            store.zero_grads();
            tape.backward(batch.loss, store);
            self.optimizer.step(store);
            self.version += 1;
        }
        Ok(loss)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub sampling_secs: f64,
    pub training_secs: f64,
    pub eval_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentCheckpoint {
    pub architecture: Architecture,
    pub groups: Vec<ParamGroup>,
    pub values: Vec<f64>,
}

impl AgentCheckpoint {
    pub fn of(policy: &PolicySet) -> Self {
        Self {
            architecture: policy.architecture().clone(),
            groups: policy.store().groups().to_vec(),
            values: policy.store().values().to_vec(),
        }
    }

    pub fn restore(&self) -> Result<PolicySet, GfnError> {
        let store = ParamStore::from_parts(self.groups.clone(), self.values.clone())
            .ok_or_else(|| GfnError::ConfigMismatch("corrupt parameter table".into()))?;
        PolicySet::from_parts(self.architecture.clone(), store)
    }
}

/// Final parameters of a run, serialized as JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub iteration: u64,
    pub trajectories_consumed: u64,
    pub main: AgentCheckpoint,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aux: Option<AgentCheckpoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub rows: Vec<MetricRecord>,
    pub checkpoint: Checkpoint,
    pub timings: Timings,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationStats {
    pub main_loss: f64,
    pub aux_loss: Option<f64>,
    /// Main-agent version whose losses fed the auxiliary reward.
    pub aux_reward_main_version: Option<u64>,
    pub trajectories: usize,
}

pub struct Trainer<E: Environment> {
    env: E,
    cfg: RunConfig,
    main: Agent,
    aux: Option<Agent>,
    rnd: Option<Rnd>,
    rng: ChaCha8Rng,
    eval_rng: ChaCha8Rng,
    iteration: u64,
    consumed: u64,
    modes_seen: HashSet<E::State>,
    target: Option<TerminalDistribution<E::State>>,
    timings: Timings,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

impl<E: Evaluate> Trainer<E> {
    pub fn new(env: E, cfg: &RunConfig) -> Result<Self, RunError> {
        cfg.validate()?;
        let seed = cfg.seed;
        let main = Agent::new(PolicySet::for_env(&env, &cfg.policy, seed)?, cfg.optimizer_for(&cfg.policy));
        let kind = cfg.explorer.kind;
        let aux = if kind.has_aux() {
            let pc = cfg.aux_policy_config();
            let init_seed = seed ^ 0x9e37_79b9_7f4a_7c15;
            Some(Agent::new(PolicySet::for_env(&env, pc, init_seed)?, cfg.optimizer_for(pc)))
        } else {
            None
        };
        let rnd = if kind == ExplorerKind::SagfnRnd {
            Some(Rnd::new(&cfg.explorer.rnd, env.feature_dim(), seed.wrapping_add(0x5851_f42d))?)
        } else {
            None
        };
        let target = match target_distribution(&env, cfg.eval.exact_cap) {
            Ok(t) => Some(t),
            Err(GfnError::Env(EnvError::NotEnumerable | EnvError::StateSpaceTooLarge { .. })) => None,
            Err(e) => return Err(e.into()),
        };
        Ok(Self {
            env,
            cfg: cfg.clone(),
            main,
            aux,
            rnd,
            rng: stream_rng(seed, 0),
            eval_rng: stream_rng(seed, 1),
            iteration: 0,
            consumed: 0,
            modes_seen: HashSet::new(),
            target,
            timings: Timings::default(),
        })
    }

    pub fn env(&self) -> &E {
        &self.env
    }

    pub fn main(&self) -> &Agent {
        &self.main
    }

    pub fn main_mut(&mut self) -> &mut Agent {
        &mut self.main
    }

    pub fn aux(&self) -> Option<&Agent> {
        self.aux.as_ref()
    }

    pub fn rnd(&self) -> Option<&Rnd> {
        self.rnd.as_ref()
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn trajectories_consumed(&self) -> u64 {
        self.consumed
    }

    pub fn target(&self) -> Option<&TerminalDistribution<E::State>> {
        self.target.as_ref()
    }

    fn aux_active(&self) -> bool {
        self.aux.is_some() && self.cfg.aux_stop_after.is_none_or(|stop| self.iteration < stop)
    }

    fn non_finite(&self, agent: &'static str) -> RunError {
        RunError::NonFiniteLoss {
            agent,
            iteration: self.iteration,
            partial: Box::new(RunLog {
                rows: Vec::new(),
                checkpoint: self.checkpoint(),
                timings: self.timings.clone(),
            }),
        }
    }

    /// Sample the auxiliary batch, sample the main batch, score the auxiliary
    /// batch with the main agent's current loss, update the auxiliary agent on
    /// that reward, then update the main agent on both batches under R.
    pub fn train_iteration(&mut self) -> Result<IterationStats, RunError> {
        let t0 = Instant::now();
        let ex = &self.cfg.explorer;
        let batch: BehaviorBatch<E::State> = if self.aux_active() {
            let aux = self.aux.as_ref().map(|a| &a.policy);
            make_behavior_batch(ex, &self.main.policy, aux, &self.env, self.cfg.batch_size, &mut self.rng)?
        } else {
            let modifier = if ex.kind.has_aux() { SamplerMod::ON_POLICY } else { ex.main_sampler() };
            BehaviorBatch {
                main: sample_trajectories(&self.main.policy, &self.env, self.cfg.batch_size, modifier, &mut self.rng)?,
                aux: Vec::new(),
            }
        };
        self.timings.sampling_secs += t0.elapsed().as_secs_f64();

        let t1 = Instant::now();
        let mut aux_loss = None;
        let mut aux_reward_main_version = None;
        if !batch.aux.is_empty() {
            let rewards = aux_log_rewards(ex, &self.main.policy, self.rnd.as_ref(), &self.env, &batch.aux)?;
            aux_reward_main_version = Some(self.main.version);
            if let Some(rnd) = self.rnd.as_mut() {
                let (features, _) = trajectory_features(&self.env, &batch.aux);
                rnd.update(&features)?;
            }
            let aux = self.aux.as_mut().expect("active auxiliary agent");
            let l = aux.update(&self.env, &batch.aux, Some(&rewards))?;
            if !l.is_finite() {
                return Err(self.non_finite("auxiliary"));
            }
            aux_loss = Some(l);
        }
        let all = batch.concatenated();
        let main_rewards: Option<Vec<f64>> = (ex.kind == ExplorerKind::SagfnRnd && ex.betas.beta_main != 1.0)
            .then(|| all.iter().map(|t| t.log_reward + ex.betas.beta_main.ln()).collect());
        let main_loss = self.main.update(&self.env, &all, main_rewards.as_deref())?;
        if !main_loss.is_finite() {
            return Err(self.non_finite("main"));
        }
        self.timings.training_secs += t1.elapsed().as_secs_f64();

        if self.env.has_modes() {
            for t in &all {
                if self.env.is_mode(t.terminal()) {
                    self.modes_seen.insert(t.terminal().clone());
                }
            }
        }
        self.iteration += 1;
        self.consumed += all.len() as u64;
        Ok(IterationStats {
            main_loss,
            aux_loss,
            aux_reward_main_version,
            trajectories: all.len(),
        })
    }

    /// Metrics of the main agent at the current point.
    pub fn evaluate(&mut self) -> Result<MetricRecord, RunError> {
        let t0 = Instant::now();
        let policy = &self.main.policy;
        let probe = sample_trajectories(policy, &self.env, self.cfg.batch_size, SamplerMod::ON_POLICY, &mut self.eval_rng)?;
        let deltas = tb_deltas(policy, &self.env, &probe)?;
        let mut rec = MetricRecord {
            iteration: self.iteration,
            trajectories_consumed: self.consumed,
            mean_tb_loss: deltas.iter().map(|d| d * d).sum::<f64>() / deltas.len() as f64,
            log_z: Some(policy.log_z()),
            ..MetricRecord::default()
        };
        if let Some(target) = &self.target {
            let exact = exact_terminal_distribution(policy, &self.env, self.cfg.eval.exact_cap)?;
            rec.mean_l1 = Some(mean_l1(&exact, target)?);
        }
        if self.env.has_modes() {
            rec.modes_found = Some(self.modes_seen.len() as u64);
        }
        let n = self.env.eval_samples(&self.cfg.eval);
        if n > 0 {
            let samples: Vec<E::State> =
                sample_trajectories(policy, &self.env, n, SamplerMod::ON_POLICY, &mut self.eval_rng)?
                    .into_iter()
                    .map(|t| t.states.last().expect("non-empty").clone())
                    .collect();
            self.env.sample_metrics(&samples, &self.cfg.eval, &mut rec)?;
        }
        self.env.policy_metrics(policy, &mut rec)?;
        self.timings.eval_secs += t0.elapsed().as_secs_f64();
        Ok(rec)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format_version: 1,
            iteration: self.iteration,
            trajectories_consumed: self.consumed,
            main: AgentCheckpoint::of(&self.main.policy),
            aux: self.aux.as_ref().map(|a| AgentCheckpoint::of(&a.policy)),
        }
    }

    /// Runs every iteration, evaluating at 0, every `eval_every`, and at the end.
    pub fn run(mut self) -> Result<RunLog, RunError> {
        let total = self.cfg.total_iterations()?;
        let mut rows = vec![self.evaluate()?];
        while self.iteration < total {
            if let Err(e) = self.train_iteration() {
                return Err(match e {
                    RunError::NonFiniteLoss {
                        agent,
                        iteration,
                        mut partial,
                    } => {
                        partial.rows = rows;
                        RunError::NonFiniteLoss {
                            agent,
                            iteration,
                            partial,
                        }
                    }
                    e => e,
                });
            }
            if self.iteration % self.cfg.eval_every == 0 || self.iteration == total {
                rows.push(self.evaluate()?);
            }
        }
        Ok(RunLog {
            rows,
            checkpoint: self.checkpoint(),
            timings: self.timings.clone(),
        })
    }
}

fn build_bayes(cfg: &EnvConfig) -> Result<BayesDagEnv, RunError> {
    let EnvConfig::BayesDag {
        n_nodes,
        edge_prob,
        n_samples,
        noise_sigma,
        data_seed,
        dataset_csv,
        ground_truth,
        alpha_mu,
        alpha_w,
    } = cfg
    else {
        unreachable!("bayes config");
    };
    let (truth, data) = match dataset_csv {
        Some(path) => {
            let file = std::fs::File::open(path)
                .map_err(|e| RunError::Config(format!("cannot open {}: {e}", path.display())))?;
            let data = read_dataset_csv(file)?;
            if data.n_vars() != *n_nodes {
                return Err(RunError::Config(format!(
                    "dataset has {} columns, n_nodes is {n_nodes}",
                    data.n_vars()
                )));
            }
            (ground_truth.as_ref().map(|e| Dag::from_edges(*n_nodes, e)), data)
        }
        None => {
            let (g, data) = generate_er_scm(*n_nodes, *edge_prob, *n_samples, *noise_sigma, *data_seed)?;
            (Some(g), data)
        }
    };
    let params = BgeParams {
        alpha_mu: *alpha_mu,
        alpha_w: alpha_w.unwrap_or(*n_nodes as f64 + 2.0),
        mean_obs: None,
    };
    Ok(BayesDagEnv::new(&data, params, truth)?)
}

/// Calls `f` with the environment described by `cfg`.
pub trait EnvVisitor {
    type Output;
    fn visit<E: Evaluate>(self, env: E) -> Self::Output;
}

pub fn with_env<V: EnvVisitor>(cfg: &EnvConfig, v: V) -> Result<V::Output, RunError> {
    Ok(match cfg {
        EnvConfig::Chain {
            n_states,
            r_end,
            r_mid,
        } => v.visit(ChainEnv::new(*n_states, *r_end, *r_mid)?),
        EnvConfig::Hypergrid {
            dims,
            height,
            r0,
            r1,
            r2,
        } => v.visit(HypergridEnv::new(*dims, *height, *r0, *r1, *r2)?),
        EnvConfig::Bitseq {
            half_length,
            r_mode,
            r_deceptive,
            deceptive_max_len,
            r_floor,
        } => v.visit(BitSeqEnv::new(
            *half_length,
            *r_mode,
            *r_deceptive,
            *deceptive_max_len,
            *r_floor,
        )?),
        EnvConfig::BayesDag { .. } => v.visit(build_bayes(cfg)?),
        EnvConfig::Codon { protein, weights } => v.visit(CodonEnv::new(protein, *weights)?),
    })
}

struct RunVisitor<'a>(&'a RunConfig);

impl EnvVisitor for RunVisitor<'_> {
    type Output = Result<RunLog, RunError>;
    fn visit<E: Evaluate>(self, env: E) -> Self::Output {
        Trainer::new(env, self.0)?.run()
    }
}

/// Builds the configured environment and trains on it.
pub fn run(cfg: &RunConfig) -> Result<RunLog, RunError> {
    with_env(&cfg.env, RunVisitor(cfg))?
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::OptimizerKind;
    use crate::gflownet::PolicyConfig;
    use crate::envs::chain::EXIT;

    fn chain_cfg(n: usize, kind: ExplorerKind, iterations: u64) -> RunConfig {
        let mut c = RunConfig::new(EnvConfig::Chain {
            n_states: n,
            r_end: 101.0,
            r_mid: 1.0,
        });
        c.policy = PolicyConfig::Tabular;
        c.explorer.kind = kind;
        c.iterations = Some(iterations);
        c.optimizer = Some(OptimizerConfig {
            kind: OptimizerKind::Sgd,
            lr: 0.5,
            log_z_lr: 0.1,
            ..OptimizerConfig::default()
        });
        c
    }

    #[test]
    fn on_policy_short_chain_converges() {
        let mut c = chain_cfg(10, ExplorerKind::OnPolicy, 2000);
        c.eval_every = 2000;
        let env = ChainEnv::with_default_rewards(10).unwrap();
        let target = 101.0 / env.total_reward();
        let log = run(&c).unwrap();
        let last = log.rows.last().unwrap();
        assert_eq!(log.rows.len(), 2);
        assert!(last.mean_tb_loss < 1e-3, "loss {}", last.mean_tb_loss);
        assert!((last.exit_prob_s0.unwrap() - target).abs() < 0.02);
        assert_eq!(last.trajectories_consumed, 2000 * 16);
    }

    #[test]
    fn aux_reward_uses_start_of_iteration_parameters() {
        let c = chain_cfg(10, ExplorerKind::Lggfn, 5);
        let mut t = Trainer::new(ChainEnv::with_default_rewards(10).unwrap(), &c).unwrap();
        for k in 0..5 {
            let start = t.main().version;
            let stats = t.train_iteration().unwrap();
            assert_eq!(stats.aux_reward_main_version, Some(start));
            assert_eq!(start, k);
            assert_eq!(stats.trajectories, 16);
        }
        assert_eq!(t.trajectories_consumed(), 80);
    }

    #[test]
    fn eval_rows_are_scheduled() {
        let mut c = chain_cfg(5, ExplorerKind::OnPolicy, 10);
        c.eval_every = 4;
        let log = run(&c).unwrap();
        let its: Vec<u64> = log.rows.iter().map(|r| r.iteration).collect();
        assert_eq!(its, vec![0, 4, 8, 10]);
        assert!(log.rows.windows(2).all(|w| w[0].trajectories_consumed < w[1].trajectories_consumed));
        c.eval_every = 10;
        assert_eq!(run(&c).unwrap().rows.len(), 2);
    }

    #[test]
    fn runs_are_deterministic() {
        let c = chain_cfg(8, ExplorerKind::Lggfn, 30);
        assert_eq!(run(&c).unwrap().rows, run(&c).unwrap().rows);
    }

    #[test]
    fn aux_can_be_dropped() {
        let mut c = chain_cfg(8, ExplorerKind::Lggfn, 6);
        c.aux_stop_after = Some(3);
        let mut t = Trainer::new(ChainEnv::with_default_rewards(8).unwrap(), &c).unwrap();
        for k in 0..6 {
            let s = t.train_iteration().unwrap();
            assert_eq!(s.aux_loss.is_some(), k < 3);
            assert_eq!(s.trajectories, 16);
        }
    }

    #[test]
    fn non_finite_loss_aborts_with_partial_log() {
        let mut c = chain_cfg(6, ExplorerKind::OnPolicy, 5);
        c.eval_every = 1;
        let env = ChainEnv::with_default_rewards(6).unwrap();
        let mut t = Trainer::new(env, &c).unwrap();
        t.main_mut().policy.set_log_z(f64::NAN);
        assert!(matches!(t.train_iteration(), Err(RunError::NonFiniteLoss { agent: "main", .. })));
    }

    #[test]
    fn checkpoint_restores_the_policy() {
        let c = chain_cfg(6, ExplorerKind::Lggfn, 3);
        let log = run(&c).unwrap();
        let json = serde_json::to_string(&log.checkpoint).unwrap();
        let back: Checkpoint = serde_json::from_str(&json).unwrap();
        let p = back.main.restore().unwrap();
        let env = ChainEnv::with_default_rewards(6).unwrap();
        let lp = p.forward_log_prob(&env, &0, EXIT).unwrap().exp();
        assert!((lp - log.rows.last().unwrap().exit_prob_s0.unwrap()).abs() < 1e-15);
        assert!(back.aux.is_some());
    }
}
