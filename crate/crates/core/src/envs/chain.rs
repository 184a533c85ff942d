//! Linear chain `s_0 -> s_1 -> ... -> s_{N-1}` with `advance` and `exit`.

use serde::{Deserialize, Serialize};

use crate::env::{check_action, ActionId, EnvError, Environment, Step};

pub const ADVANCE: ActionId = ActionId(0);
pub const EXIT: ActionId = ActionId(1);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainEnv {
    n_states: usize,
    r_end: f64,
    r_mid: f64,
}

impl ChainEnv {
    pub fn new(n_states: usize, r_end: f64, r_mid: f64) -> Result<Self, EnvError> {
        if n_states == 0 {
            return Err(EnvError::Config("chain needs at least one state".into()));
        }
        if !(r_end > 0.0 && r_mid > 0.0) {
            return Err(EnvError::Config("chain rewards must be positive".into()));
        }
        Ok(Self {
            n_states,
            r_end,
            r_mid,
        })
    }

    /// The two-extremal-mode chain: ends at 101, middle at 1.
    pub fn with_default_rewards(n_states: usize) -> Result<Self, EnvError> {
        Self::new(n_states, 101.0, 1.0)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn reward(&self, i: usize) -> f64 {
        if i == 0 || i + 1 == self.n_states {
            self.r_end
        } else {
            self.r_mid
        }
    }

    pub fn total_reward(&self) -> f64 {
        (0..self.n_states).map(|i| self.reward(i)).sum()
    }
}

impl Environment for ChainEnv {
    type State = usize;

    fn n_actions(&self) -> usize {
        2
    }

    fn initial_state(&self) -> usize {
        0
    }

    fn forward_actions(&self, s: &usize) -> Vec<ActionId> {
        if *s + 1 < self.n_states {
            vec![ADVANCE, EXIT]
        } else {
            vec![EXIT]
        }
    }

    fn apply(&self, s: &usize, a: ActionId) -> Result<Step<usize>, EnvError> {
        check_action(self, s, a)?;
        Ok(if a == EXIT { Step::Sink } else { Step::State(s + 1) })
    }

    fn backward_transitions(&self, s: &usize) -> Result<Vec<(usize, ActionId)>, EnvError> {
        if *s == 0 {
            Err(EnvError::NoParents)
        } else {
            Ok(vec![(s - 1, ADVANCE)])
        }
    }

    fn log_reward(&self, s: &usize) -> Result<f64, EnvError> {
        if *s >= self.n_states {
            return Err(EnvError::NotTerminable(s.to_string()));
        }
        Ok(self.reward(*s).ln())
    }

    fn feature_dim(&self) -> usize {
        self.n_states
    }

    fn encode_into(&self, s: &usize, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        out[*s] = 1.0;
    }

    fn unique_parents(&self) -> bool {
        true
    }

    fn dense_index(&self, s: &usize) -> Option<usize> {
        Some(*s)
    }

    fn enumerate_states(&self, cap: usize) -> Result<Vec<usize>, EnvError> {
        if self.n_states > cap {
            return Err(EnvError::StateSpaceTooLarge { cap });
        }
        Ok((0..self.n_states).collect())
    }

    fn max_trajectory_len(&self) -> usize {
        self.n_states
    }

    fn is_mode(&self, s: &usize) -> bool {
        self.reward(*s) >= self.r_end.max(self.r_mid)
    }

    fn has_modes(&self) -> bool {
        true
    }
}
