//! Forward/backward policies with a learnable log-partition scalar.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::GfnError;
use crate::diff::mlp::{activate, add_affine, affine};
use crate::diff::{Activation, Matrix, ParamStore, Tape, Var, LOG_Z_GROUP};
use crate::env::{ActionId, EnvError, Environment};

pub const BACKBONE_PREFIX: &str = "backbone.";
pub const FORWARD_HEAD: &str = "pf_head";
pub const BACKWARD_HEAD: &str = "pb_head";
pub const THETA: &str = "theta";

/// Network shape of a policy, resolved against an environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    /// Shared backbone with separate affine heads for P_F and P_B.
    Mlp {
        input_dim: usize,
        hidden_dims: Vec<usize>,
        activation: Activation,
        n_actions: usize,
        /// Absent when every state has a single parent.
        backward_head: bool,
    },
    /// One exit logit per chain state: `P_F(exit | s) = σ(θ_s)`.
    Tabular { n_states: usize },
}

impl Architecture {
    pub fn n_actions(&self) -> usize {
        match self {
            Architecture::Mlp { n_actions, .. } => *n_actions,
            Architecture::Tabular { .. } => 2,
        }
    }

    pub fn has_backward_head(&self) -> bool {
        matches!(self, Architecture::Mlp { backward_head: true, .. })
    }
}

/// Per-run policy hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicyConfig {
    Mlp {
        #[serde(default = "default_hidden")]
        hidden_dims: Vec<usize>,
        #[serde(default)]
        activation: Activation,
    },
    Tabular,
}

fn default_hidden() -> Vec<usize> {
    vec![256, 256]
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig::Mlp {
            hidden_dims: default_hidden(),
            activation: Activation::Relu,
        }
    }
}

/// Batched network input: encoded features, or dense state indices for tables.
#[derive(Clone, Debug, PartialEq)]
pub enum PolicyInput {
    Features(Matrix),
    Indices(Vec<usize>),
}

impl PolicyInput {
    pub fn len(&self) -> usize {
        match self {
            PolicyInput::Features(m) => m.rows(),
            PolicyInput::Indices(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub struct PolicyOutputs {
    /// n x n_actions raw forward logits.
    pub forward: Var,
    /// n x (n_actions - 1) raw backward logits over parent actions.
    pub backward: Option<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicySet {
    arch: Architecture,
    store: ParamStore,
}

impl PolicySet {
    /// Builds a policy for `env`, seeding the Glorot initialization.
    pub fn for_env<E: Environment>(env: &E, config: &PolicyConfig, seed: u64) -> Result<Self, GfnError> {
        match config {
            PolicyConfig::Mlp {
                hidden_dims,
                activation,
            } => Self::mlp(
                env.feature_dim(),
                env.n_actions(),
                hidden_dims.clone(),
                *activation,
                !env.unique_parents(),
                seed,
            ),
            PolicyConfig::Tabular => {
                if env.n_actions() != 2 || !env.unique_parents() {
                    return Err(GfnError::ConfigMismatch(
                        "tabular policies need a two-action chain".into(),
                    ));
                }
                let n = env
                    .enumerate_states(crate::env::DEFAULT_STATE_CAP)
                    .map_err(|_| GfnError::ConfigMismatch("tabular policies need an enumerable env".into()))?
                    .len();
                Ok(Self::tabular(n))
            }
        }
    }

    pub fn mlp(
        input_dim: usize,
        n_actions: usize,
        hidden_dims: Vec<usize>,
        activation: Activation,
        backward_head: bool,
        seed: u64,
    ) -> Result<Self, GfnError> {
        if input_dim == 0 || n_actions < 2 || hidden_dims.contains(&0) {
            return Err(GfnError::ConfigMismatch(format!(
                "invalid mlp policy: input {input_dim}, actions {n_actions}, hidden {hidden_dims:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut prev = input_dim;
        for (i, &h) in hidden_dims.iter().enumerate() {
            add_affine(&mut store, &format!("{BACKBONE_PREFIX}layer{i}"), prev, h, &mut rng);
            prev = h;
        }
        add_affine(&mut store, FORWARD_HEAD, prev, n_actions, &mut rng);
        if backward_head {
            add_affine(&mut store, BACKWARD_HEAD, prev, n_actions - 1, &mut rng);
        }
        store.add_group(LOG_Z_GROUP, 1, 1, || 0.0);
        Ok(Self {
            arch: Architecture::Mlp {
                input_dim,
                hidden_dims,
                activation,
                n_actions,
                backward_head,
            },
            store,
        })
    }

    /// All-zero table (uniform policy) and logZ = 0.
    pub fn tabular(n_states: usize) -> Self {
        let mut store = ParamStore::new();
        store.add_group(THETA, n_states, 1, || 0.0);
        store.add_group(LOG_Z_GROUP, 1, 1, || 0.0);
        Self {
            arch: Architecture::Tabular { n_states },
            store,
        }
    }

    /// Reassembles a policy from checkpointed parts.
    pub fn from_parts(arch: Architecture, store: ParamStore) -> Result<Self, GfnError> {
        let fresh = match &arch {
            Architecture::Mlp {
                input_dim,
                hidden_dims,
                activation,
                n_actions,
                backward_head,
            } => Self::mlp(*input_dim, *n_actions, hidden_dims.clone(), *activation, *backward_head, 0)?,
            Architecture::Tabular { n_states } => Self::tabular(*n_states),
        };
        if fresh.store.groups() != store.groups() {
            return Err(GfnError::ConfigMismatch("parameter table does not match the architecture".into()));
        }
        Ok(Self { arch, store })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn log_z(&self) -> f64 {
        self.store.slice(LOG_Z_GROUP)[0]
    }

    pub fn set_log_z(&mut self, v: f64) {
        self.store.slice_mut(LOG_Z_GROUP)[0] = v;
    }

    /// Tabular exit logits. Panics for MLP policies.
    pub fn theta(&self) -> &[f64] {
        self.store.slice(THETA)
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        self.store.slice_mut(THETA)
    }

    pub fn check_env<E: Environment>(&self, env: &E) -> Result<(), GfnError> {
        let ok = match &self.arch {
            Architecture::Mlp {
                input_dim,
                n_actions,
                ..
            } => *input_dim == env.feature_dim() && *n_actions == env.n_actions(),
            Architecture::Tabular { .. } => env.n_actions() == 2 && env.unique_parents(),
        };
        if ok {
            Ok(())
        } else {
            Err(GfnError::ConfigMismatch("policy shape does not match the environment".into()))
        }
    }

    pub fn input_for<E: Environment>(&self, env: &E, states: &[&E::State]) -> Result<PolicyInput, GfnError> {
        match &self.arch {
            Architecture::Mlp { input_dim, .. } => {
                let mut m = Matrix::zeros(states.len(), *input_dim);
                for (r, s) in states.iter().enumerate() {
                    env.encode_into(s, m.row_mut(r));
                }
                Ok(PolicyInput::Features(m))
            }
            Architecture::Tabular { n_states } => states
                .iter()
                .map(|s| match env.dense_index(s) {
                    Some(i) if i < *n_states => Ok(i),
                    _ => Err(GfnError::ConfigMismatch(format!("state {s:?} has no table entry"))),
                })
                .collect::<Result<Vec<_>, _>>()
                .map(PolicyInput::Indices),
        }
    }

    /// Records the policy network on `tape`.
    pub fn forward(&self, tape: &mut Tape, input: &PolicyInput) -> Result<PolicyOutputs, GfnError> {
        match (&self.arch, input) {
            (
                Architecture::Mlp {
                    hidden_dims,
                    activation,
                    backward_head,
                    ..
                },
                PolicyInput::Features(x),
            ) => {
                let mut h = tape.constant(x.clone());
                for i in 0..hidden_dims.len() {
                    h = affine(tape, &self.store, &format!("{BACKBONE_PREFIX}layer{i}"), h)?;
                    h = activate(tape, *activation, h);
                }
                let forward = affine(tape, &self.store, FORWARD_HEAD, h)?;
                let backward = if *backward_head {
                    Some(affine(tape, &self.store, BACKWARD_HEAD, h)?)
                } else {
                    None
                };
                Ok(PolicyOutputs { forward, backward })
            }
            (Architecture::Tabular { .. }, PolicyInput::Indices(idx)) => {
                let theta = tape.param(&self.store, THETA);
                let exit_logit = tape.gather_elems(theta, idx.clone())?;
                // Rows become [0, θ_s]: advance is the reference logit.
                let spread = tape.constant(Matrix::from_vec(1, 2, vec![0.0, 1.0]));
                let forward = tape.matmul(exit_logit, spread)?;
                Ok(PolicyOutputs {
                    forward,
                    backward: None,
                })
            }
            _ => Err(GfnError::ConfigMismatch("input kind does not match the policy".into())),
        }
    }

    /// Masked forward log-probabilities (n x n_actions) without gradients.
    pub fn forward_log_probs<E: Environment>(&self, env: &E, states: &[&E::State]) -> Result<Matrix, GfnError> {
        let mut tape = Tape::new();
        let input = self.input_for(env, states)?;
        let out = self.forward(&mut tape, &input)?;
        let mask = states.iter().flat_map(|s| env.forward_mask(s)).collect();
        let lp = tape.masked_log_softmax(out.forward, mask)?;
        Ok(tape.value(lp).clone())
    }

    /// log P_F(a | s).
    pub fn forward_log_prob<E: Environment>(&self, env: &E, s: &E::State, a: ActionId) -> Result<f64, GfnError> {
        if !env.forward_actions(s).contains(&a) {
            return Err(EnvError::InvalidAction {
                action: a.0,
                state: format!("{s:?}"),
            }
            .into());
        }
        Ok(self.forward_log_probs(env, &[s])?.get(0, a.0))
    }

    /// Masked backward log-probabilities over parent actions; `None` when the
    /// backward policy is fixed (unique parents).
    pub fn backward_log_probs<E: Environment>(
        &self,
        env: &E,
        states: &[&E::State],
    ) -> Result<Option<Matrix>, GfnError> {
        if !self.arch.has_backward_head() {
            return Ok(None);
        }
        let mut tape = Tape::new();
        let input = self.input_for(env, states)?;
        let out = self.forward(&mut tape, &input)?;
        let mut mask = Vec::with_capacity(states.len() * (env.n_actions() - 1));
        for s in states {
            mask.extend(backward_mask(env, s)?);
        }
        let lp = tape.masked_log_softmax(out.backward.expect("backward head"), mask)?;
        Ok(Some(tape.value(lp).clone()))
    }

    /// log P_B(parent | s) for the parent reached by undoing `a`; exactly 0
    /// when every state has one parent.
    pub fn backward_log_prob<E: Environment>(&self, env: &E, s: &E::State, a: ActionId) -> Result<f64, GfnError> {
        let parents = env.backward_transitions(s)?;
        if !parents.iter().any(|(_, pa)| *pa == a) {
            return Err(EnvError::InvalidAction {
                action: a.0,
                state: format!("{s:?}"),
            }
            .into());
        }
        match self.backward_log_probs(env, &[s])? {
            None => Ok(0.0),
            Some(m) => Ok(m.get(0, a.0)),
        }
    }
}

/// Valid parent actions of `s` as a mask over the non-exit alphabet.
pub fn backward_mask<E: Environment>(env: &E, s: &E::State) -> Result<Vec<bool>, GfnError> {
    let mut mask = vec![false; env.n_actions() - 1];
    for (_, a) in env.backward_transitions(s)? {
        mask[a.0] = true;
    }
    Ok(mask)
}
