//! Behavior policies and auxiliary-agent rewards.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::mlp::add_mlp_params;
use crate::diff::{mlp_eval, mlp_forward, Activation, Matrix, MlpSpec, Optimizer, OptimizerConfig, ParamStore, Tape};
use crate::env::{Environment, Trajectory};
use crate::gflownet::{sample_trajectories, tb_deltas, GfnError, PolicySet, SamplerMod};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExplorerKind {
    #[default]
    #[serde(alias = "tb")]
    OnPolicy,
    EpsGreedy,
    Tempering,
    Lggfn,
    SagfnRnd,
    AdaptiveTeachers,
}

impl ExplorerKind {
    pub fn has_aux(self) -> bool {
        matches!(
            self,
            ExplorerKind::Lggfn | ExplorerKind::SagfnRnd | ExplorerKind::AdaptiveTeachers
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            ExplorerKind::OnPolicy => "on_policy",
            ExplorerKind::EpsGreedy => "eps_greedy",
            ExplorerKind::Tempering => "tempering",
            ExplorerKind::Lggfn => "lggfn",
            ExplorerKind::SagfnRnd => "sagfn_rnd",
            ExplorerKind::AdaptiveTeachers => "adaptive_teachers",
        }
    }
}

/// SAGFN coefficients. `beta_e_main` and `beta_e_aux` are the ε-greedy rates of
/// the two agents; `beta_aux`, `beta_main` scale the extrinsic reward of each
/// agent and `beta_i` scales the summed RND bonus.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SagfnBetas {
    pub beta_e_main: f64,
    pub beta_e_aux: f64,
    pub beta_aux: f64,
    pub beta_main: f64,
    pub beta_i: f64,
}

impl Default for SagfnBetas {
    fn default() -> Self {
        Self {
            beta_e_main: 0.0,
            beta_e_aux: 0.25,
            beta_aux: 1.0,
            beta_main: 1.0,
            beta_i: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RndConfig {
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub lr: f64,
}

impl Default for RndConfig {
    fn default() -> Self {
        Self {
            hidden_dims: vec![64],
            output_dim: 16,
            activation: Activation::Relu,
            lr: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplorerConfig {
    pub kind: ExplorerKind,
    pub lambda: f64,
    pub epsilon: f64,
    pub temperature: f64,
    pub rnd: RndConfig,
    pub at_alpha: f64,
    pub at_c: f64,
    pub at_eps: f64,
    pub betas: SagfnBetas,
}

impl Default for ExplorerConfig {
    fn default() -> Self {
        Self {
            kind: ExplorerKind::OnPolicy,
            lambda: 1.0,
            epsilon: 0.0,
            temperature: 1.0,
            rnd: RndConfig::default(),
            at_alpha: 0.5,
            at_c: 19.0,
            at_eps: 1e-8,
            betas: SagfnBetas::default(),
        }
    }
}

impl ExplorerConfig {
    pub fn of_kind(kind: ExplorerKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), GfnError> {
        let bad = |m: &str| Err(GfnError::ConfigMismatch(m.into()));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be a non-negative number");
        }
        self.main_sampler().validate()?;
        let b = &self.betas;
        for e in [b.beta_e_main, b.beta_e_aux] {
            if !(0.0..=1.0).contains(&e) {
                return bad("beta_e rates must lie in [0, 1]");
            }
        }
        if !(b.beta_aux > 0.0 && b.beta_main > 0.0 && b.beta_i >= 0.0) {
            return bad("beta_aux and beta_main must be positive, beta_i non-negative");
        }
        if !(self.at_eps > 0.0 && self.at_c >= 0.0) {
            return bad("adaptive teachers needs at_eps > 0 and at_c >= 0");
        }
        if self.rnd.output_dim == 0 || self.rnd.hidden_dims.contains(&0) || !(self.rnd.lr > 0.0) {
            return bad("invalid rnd network");
        }
        Ok(())
    }

    /// Sampler of the main agent's behavior batch.
    pub fn main_sampler(&self) -> SamplerMod {
        match self.kind {
            ExplorerKind::OnPolicy | ExplorerKind::Lggfn | ExplorerKind::AdaptiveTeachers => SamplerMod::ON_POLICY,
            ExplorerKind::EpsGreedy => SamplerMod::epsilon(self.epsilon),
            ExplorerKind::Tempering => SamplerMod {
                epsilon: 0.0,
                temperature: self.temperature,
            },
            ExplorerKind::SagfnRnd => SamplerMod::epsilon(self.betas.beta_e_main),
        }
    }

    pub fn aux_sampler(&self) -> SamplerMod {
        match self.kind {
            ExplorerKind::SagfnRnd => SamplerMod::epsilon(self.betas.beta_e_aux),
            _ => SamplerMod::ON_POLICY,
        }
    }
}

/// `log(R + λ·L)`, evaluated without leaving log space.
pub fn lggfn_aux_log_reward(log_r_main: f64, main_tb_loss: f64, lambda: f64) -> f64 {
    log_add(log_r_main, lambda * main_tb_loss)
}

/// `log(e^a + b)` for `b >= 0`.
fn log_add(a: f64, b: f64) -> f64 {
    if b <= 0.0 {
        return a;
    }
    let lb = b.ln();
    let t = lb - a;
    if t > 0.0 {
        lb + (-t).exp().ln_1p()
    } else {
        a + t.exp().ln_1p()
    }
}

/// `log(ε + (1 + C·[δ > 0])·δ²) + α·log R`.
pub fn adaptive_teachers_log_reward(delta: f64, log_r_main: f64, cfg: &ExplorerConfig) -> f64 {
    let weight = if delta > 0.0 { 1.0 + cfg.at_c } else { 1.0 };
    (cfg.at_eps + weight * delta * delta).ln() + cfg.at_alpha * log_r_main
}

/// `log(β_aux·R + β_i·bonus)`.
pub fn sagfn_aux_log_reward(log_r_main: f64, bonus_sum: f64, betas: &SagfnBetas) -> f64 {
    log_add(log_r_main + betas.beta_aux.ln(), betas.beta_i * bonus_sum)
}

/// Random network distillation: a frozen random target and a trained predictor.
#[derive(Clone, Debug)]
pub struct Rnd {
    spec: MlpSpec,
    target: ParamStore,
    predictor: ParamStore,
    optimizer: Optimizer,
}

impl Rnd {
    pub fn new(cfg: &RndConfig, input_dim: usize, seed: u64) -> Result<Self, GfnError> {
        let spec = MlpSpec {
            input_dim,
            hidden_dims: cfg.hidden_dims.clone(),
            output_dim: cfg.output_dim,
            activation: cfg.activation,
        };
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut target = ParamStore::new();
        add_mlp_params(&mut target, &spec, "", &mut rng);
        let mut predictor = ParamStore::new();
        add_mlp_params(&mut predictor, &spec, "", &mut rng);
        let optimizer = Optimizer::new(
            OptimizerConfig {
                lr: cfg.lr,
                ..OptimizerConfig::default()
            },
            &predictor,
        );
        Ok(Self {
            spec,
            target,
            predictor,
            optimizer,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn target(&self) -> &ParamStore {
        &self.target
    }

    pub fn predictor(&self) -> &ParamStore {
        &self.predictor
    }

    pub fn predictor_mut(&mut self) -> &mut ParamStore {
        &mut self.predictor
    }

    /// Per-row squared prediction error summed over outputs.
    pub fn bonuses(&self, features: &Matrix) -> Result<Vec<f64>, GfnError> {
        let t = mlp_eval(&self.spec, &self.target, "", features)?;
        let p = mlp_eval(&self.spec, &self.predictor, "", features)?;
        Ok((0..features.rows())
            .map(|r| t.row(r).iter().zip(p.row(r)).map(|(a, b)| (a - b) * (a - b)).sum())
            .collect())
    }

    /// One Adam step on the mean squared error over the rows of `features`.
    /// Returns the pre-update loss.
    pub fn update(&mut self, features: &Matrix) -> Result<f64, GfnError> {
        let target = mlp_eval(&self.spec, &self.target, "", features)?;
        let mut tape = Tape::new();
        let x = tape.constant(features.clone());
        let y = mlp_forward(&mut tape, &self.spec, &self.predictor, "", x)?;
        let t = tape.constant(target);
        let diff = tape.sub(y, t)?;
        let sq = tape.square(diff);
        let total = tape.sum(sq);
        let loss = tape.scale(total, 1.0 / features.rows().max(1) as f64);
        let value = tape.scalar(loss);
        self.predictor.zero_grads();
        tape.backward(loss, &mut self.predictor);
        self.optimizer.step(&mut self.predictor);
        Ok(value)
    }
}

/// RND bonus of one feature vector.
pub fn rnd_bonus(rnd: &Rnd, features: &[f64]) -> Result<f64, GfnError> {
    if features.len() != rnd.input_dim() {
        return Err(crate::diff::DiffError::ShapeMismatch {
            op: "rnd_bonus",
            left: (1, features.len()),
            right: (1, rnd.input_dim()),
        }
        .into());
    }
    Ok(rnd.bonuses(&Matrix::from_vec(1, features.len(), features.to_vec()))?[0])
}

/// Features of every state of every trajectory, stacked, with the owning
/// trajectory index of each row.
pub fn trajectory_features<E: Environment>(env: &E, trajs: &[Trajectory<E::State>]) -> (Matrix, Vec<usize>) {
    let rows: usize = trajs.iter().map(|t| t.states.len()).sum();
    let mut m = Matrix::zeros(rows, env.feature_dim());
    let mut owner = Vec::with_capacity(rows);
    let mut r = 0;
    for (k, t) in trajs.iter().enumerate() {
        for s in &t.states {
            env.encode_into(s, m.row_mut(r));
            owner.push(k);
            r += 1;
        }
    }
    (m, owner)
}

/// Summed per-state RND bonus of each trajectory.
pub fn trajectory_bonuses<E: Environment>(
    rnd: &Rnd,
    env: &E,
    trajs: &[Trajectory<E::State>],
) -> Result<Vec<f64>, GfnError> {
    let (m, owner) = trajectory_features(env, trajs);
    let b = rnd.bonuses(&m)?;
    let mut out = vec![0.0; trajs.len()];
    for (k, v) in owner.into_iter().zip(b) {
        out[k] += v;
    }
    Ok(out)
}

/// Auxiliary-agent log-rewards of `trajs`, computed from the main agent's
/// current parameters. Never touches any gradient buffer.
pub fn aux_log_rewards<E: Environment>(
    cfg: &ExplorerConfig,
    main: &PolicySet,
    rnd: Option<&Rnd>,
    env: &E,
    trajs: &[Trajectory<E::State>],
) -> Result<Vec<f64>, GfnError> {
    match cfg.kind {
        ExplorerKind::Lggfn => {
            let deltas = tb_deltas(main, env, trajs)?;
            Ok(trajs
                .iter()
                .zip(deltas)
                .map(|(t, d)| lggfn_aux_log_reward(t.log_reward, d * d, cfg.lambda))
                .collect())
        }
        ExplorerKind::AdaptiveTeachers => {
            let deltas = tb_deltas(main, env, trajs)?;
            // The teacher residual is log R + log P_B − log Z − log P_F.
            Ok(trajs
                .iter()
                .zip(deltas)
                .map(|(t, d)| adaptive_teachers_log_reward(-d, t.log_reward, cfg))
                .collect())
        }
        ExplorerKind::SagfnRnd => {
            let rnd = rnd.ok_or_else(|| GfnError::ConfigMismatch("sagfn_rnd needs an rnd module".into()))?;
            let bonus = trajectory_bonuses(rnd, env, trajs)?;
            Ok(trajs
                .iter()
                .zip(bonus)
                .map(|(t, b)| sagfn_aux_log_reward(t.log_reward, b, &cfg.betas))
                .collect())
        }
        k => Err(GfnError::ConfigMismatch(format!("{} has no auxiliary agent", k.name()))),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Main,
    Aux,
}

/// A behavior batch, split by the agent that sampled it.
#[derive(Clone, Debug, PartialEq)]
pub struct BehaviorBatch<S> {
    pub main: Vec<Trajectory<S>>,
    pub aux: Vec<Trajectory<S>>,
}

impl<S: Clone> BehaviorBatch<S> {
    pub fn len(&self) -> usize {
        self.main.len() + self.aux.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn tagged(&self) -> impl Iterator<Item = (Source, &Trajectory<S>)> {
        self.main
            .iter()
            .map(|t| (Source::Main, t))
            .chain(self.aux.iter().map(|t| (Source::Aux, t)))
    }

    /// Main trajectories followed by auxiliary ones.
    pub fn concatenated(&self) -> Vec<Trajectory<S>> {
        self.main.iter().chain(&self.aux).cloned().collect()
    }
}

/// Samples the auxiliary half first, then the main half (or the full batch
/// from the modified main policy when there is no auxiliary agent).
pub fn make_behavior_batch<E: Environment>(
    cfg: &ExplorerConfig,
    main: &PolicySet,
    aux: Option<&PolicySet>,
    env: &E,
    batch_size: usize,
    rng: &mut impl Rng,
) -> Result<BehaviorBatch<E::State>, GfnError> {
    match (cfg.kind.has_aux(), aux) {
        (true, Some(aux)) => {
            let n_main = batch_size / 2;
            let n_aux = batch_size - n_main;
            let aux_trajs = sample_trajectories(aux, env, n_aux, cfg.aux_sampler(), rng)?;
            let main_trajs = sample_trajectories(main, env, n_main, cfg.main_sampler(), rng)?;
            Ok(BehaviorBatch {
                main: main_trajs,
                aux: aux_trajs,
            })
        }
        (false, None) => Ok(BehaviorBatch {
            main: sample_trajectories(main, env, batch_size, cfg.main_sampler(), rng)?,
            aux: Vec::new(),
        }),
        (true, None) => Err(GfnError::ConfigMismatch(format!("{} needs an auxiliary agent", cfg.kind.name()))),
        (false, Some(_)) => Err(GfnError::ConfigMismatch(format!(
            "{} takes no auxiliary agent",
            cfg.kind.name()
        ))),
    }
}
