//! The environment contract: a pointed DAG of states, forward and backward
//! transitions, terminal rewards, and the trajectory container.
//!
//! The sink is not a state. [`Environment::apply`] returns [`Step::Sink`] when
//! the exit action is taken, and the exit action is always the last index of
//! the action alphabet.

use std::collections::HashSet;
use std::fmt::Debug;
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default cap on the number of states an exact enumeration may produce.
pub const DEFAULT_STATE_CAP: usize = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ActionId(pub usize);

impl ActionId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Step<S> {
    State(S),
    Sink,
}

impl<S> Step<S> {
    pub fn into_state(self) -> Option<S> {
        match self {
            Step::State(s) => Some(s),
            Step::Sink => None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("the sink has no actions")]
    SinkHasNoActions,
    #[error("action {action} is not valid at state {state}")]
    InvalidAction { action: usize, state: String },
    #[error("the source state has no parents")]
    NoParents,
    #[error("state {0} cannot exit")]
    NotTerminable(String),
    #[error("environment is not enumerable")]
    NotEnumerable,
    #[error("state space exceeds the cap of {cap} states")]
    StateSpaceTooLarge { cap: usize },
    #[error("coordinate {coord} is outside the grid of height {height}")]
    OutOfGrid { coord: usize, height: usize },
    #[error("trajectory exceeded {max} steps")]
    TrajectoryOverrun { max: usize },
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("sequence is incomplete: {len} of {expected} codons")]
    IncompleteSequence { len: usize, expected: usize },
    #[error("invalid nucleotide `{0}`")]
    InvalidBase(char),
    #[error("invalid amino acid `{0}`")]
    InvalidProtein(char),
    #[error("covariance submatrix is singular")]
    SingularCovariance,
    #[error("integer overflow: {0}")]
    Overflow(String),
    #[error("invalid environment parameters: {0}")]
    Config(String),
}

pub trait Environment: Send + Sync {
    type State: Clone + Eq + Hash + Debug + Send + Sync;

    /// Size of the action alphabet, exit included.
    fn n_actions(&self) -> usize;

    fn exit_action(&self) -> ActionId {
        ActionId(self.n_actions() - 1)
    }

    fn initial_state(&self) -> Self::State;

    /// Valid forward actions at `s`, ascending. Never empty.
    fn forward_actions(&self, s: &Self::State) -> Vec<ActionId>;

    fn apply(&self, s: &Self::State, a: ActionId) -> Result<Step<Self::State>, EnvError>;

    /// Every `(parent, action)` with `apply(parent, action) == s`.
    fn backward_transitions(
        &self,
        s: &Self::State,
    ) -> Result<Vec<(Self::State, ActionId)>, EnvError>;

    fn log_reward(&self, s: &Self::State) -> Result<f64, EnvError>;

    fn feature_dim(&self) -> usize;

    /// Writes the features of `s` into `out` (length [`Self::feature_dim`]).
    fn encode_into(&self, s: &Self::State, out: &mut [f64]);

    fn encode(&self, s: &Self::State) -> Vec<f64> {
        let mut out = vec![0.0; self.feature_dim()];
        self.encode_into(s, &mut out);
        out
    }

    fn can_exit(&self, s: &Self::State) -> bool {
        self.forward_actions(s).contains(&self.exit_action())
    }

    /// True when every non-source state has exactly one parent, so the
    /// backward policy is fixed to probability one.
    fn unique_parents(&self) -> bool {
        false
    }

    fn dense_index(&self, _s: &Self::State) -> Option<usize> {
        None
    }

    /// Topologically ordered list of all states, source first.
    fn enumerate_states(&self, _cap: usize) -> Result<Vec<Self::State>, EnvError> {
        Err(EnvError::NotEnumerable)
    }

    /// Upper bound on the number of actions (exit included) of any trajectory.
    fn max_trajectory_len(&self) -> usize;

    /// Mode predicate used by the `modes_found` metric.
    fn is_mode(&self, _s: &Self::State) -> bool {
        false
    }

    fn has_modes(&self) -> bool {
        false
    }

    fn forward_mask(&self, s: &Self::State) -> Vec<bool> {
        let mut mask = vec![false; self.n_actions()];
        for a in self.forward_actions(s) {
            mask[a.0] = true;
        }
        mask
    }
}

/// Forward actions of a state or the sink sentinel.
pub fn actions_at<E: Environment>(
    env: &E,
    step: &Step<E::State>,
) -> Result<Vec<ActionId>, EnvError> {
    match step {
        Step::State(s) => Ok(env.forward_actions(s)),
        Step::Sink => Err(EnvError::SinkHasNoActions),
    }
}

/// Shared precondition check for `apply` implementations.
pub fn check_action<E: Environment>(env: &E, s: &E::State, a: ActionId) -> Result<(), EnvError> {
    if env.forward_actions(s).contains(&a) {
        Ok(())
    } else {
        Err(EnvError::InvalidAction {
            action: a.0,
            state: format!("{s:?}"),
        })
    }
}

/// Breadth-first enumeration for graded DAGs, where every path from the
/// source to a state has the same length; level order is then topological.
/// Children are visited in action order.
pub fn enumerate_by_levels<E: Environment>(env: &E, cap: usize) -> Result<Vec<E::State>, EnvError> {
    let mut out = vec![env.initial_state()];
    let mut seen: HashSet<E::State> = out.iter().cloned().collect();
    let mut level_start = 0;
    while level_start < out.len() {
        let level_end = out.len();
        for i in level_start..level_end {
            let s = out[i].clone();
            for a in env.forward_actions(&s) {
                if let Step::State(c) = env.apply(&s, a)? {
                    if seen.insert(c.clone()) {
                        if out.len() >= cap {
                            return Err(EnvError::StateSpaceTooLarge { cap });
                        }
                        out.push(c);
                    }
                }
            }
        }
        level_start = level_end;
    }
    Ok(out)
}

/// A complete source-to-sink trajectory. `actions[i]` is taken at `states[i]`;
/// the last action is exit, so both lists have the same length.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<S> {
    pub states: Vec<S>,
    pub actions: Vec<ActionId>,
    pub log_reward: f64,
}

impl<S: Clone + Debug + PartialEq> Trajectory<S> {
    /// The terminating state (the one that exited).
    pub fn terminal(&self) -> &S {
        self.states.last().expect("trajectory holds at least the source")
    }

    /// Number of transitions between states, exit excluded.
    pub fn n_moves(&self) -> usize {
        self.states.len() - 1
    }

    /// Checks every trajectory invariant against `env`.
    pub fn validate<E: Environment<State = S>>(&self, env: &E) -> Result<(), EnvError> {
        let bad = |msg: String| Err(EnvError::InvalidTrajectory(msg));
        if self.states.is_empty() || self.states.len() != self.actions.len() {
            return bad(format!(
                "{} states but {} actions",
                self.states.len(),
                self.actions.len()
            ));
        }
        if self.states[0] != env.initial_state() {
            return bad("does not start at the source".into());
        }
        let exit = env.exit_action();
        for (i, (s, &a)) in self.states.iter().zip(&self.actions).enumerate() {
            let last = i + 1 == self.states.len();
            if (a == exit) != last {
                return bad(format!("exit at position {i} of {}", self.states.len()));
            }
            match env.apply(s, a)? {
                Step::Sink if last => {}
                Step::State(c) if !last && c == self.states[i + 1] => {}
                _ => return bad(format!("transition {i} does not replay")),
            }
        }
        if !self.log_reward.is_finite() {
            return bad("log reward is not finite".into());
        }
        Ok(())
    }

    /// Rebuilds the state list by folding `apply` over the actions.
    pub fn replay<E: Environment<State = S>>(env: &E, actions: &[ActionId]) -> Result<Self, EnvError> {
        let mut states = vec![env.initial_state()];
        for (i, &a) in actions.iter().enumerate() {
            let cur = states.last().expect("non-empty").clone();
            match env.apply(&cur, a)? {
                Step::State(c) => states.push(c),
                Step::Sink => {
                    if i + 1 != actions.len() {
                        return Err(EnvError::InvalidTrajectory("exit before the end".into()));
                    }
                    let log_reward = env.log_reward(&cur)?;
                    return Ok(Trajectory {
                        states,
                        actions: actions.to_vec(),
                        log_reward,
                    });
                }
            }
        }
        Err(EnvError::InvalidTrajectory("no exit action".into()))
    }
}
