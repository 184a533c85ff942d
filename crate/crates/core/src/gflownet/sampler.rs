//! Batched stepwise trajectory sampling from a (possibly modified) forward policy.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{GfnError, PolicySet};
use crate::env::{ActionId, EnvError, Environment, Step, Trajectory};

/// Behavior-policy modification: `p = (1 - ε)·softmax(logits / T) + ε / |valid|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerMod {
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default = "one")]
    pub temperature: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for SamplerMod {
    fn default() -> Self {
        Self::ON_POLICY
    }
}

impl SamplerMod {
    pub const ON_POLICY: SamplerMod = SamplerMod {
        epsilon: 0.0,
        temperature: 1.0,
    };

    pub fn epsilon(epsilon: f64) -> Self {
        Self {
            epsilon,
            temperature: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), GfnError> {
        if !(0.0..=1.0).contains(&self.epsilon) || !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(GfnError::ConfigMismatch(format!(
                "need epsilon in [0, 1] and a positive temperature, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Behavior probabilities over `valid` given masked forward log-probs.
    pub fn action_probs(&self, log_probs: &[f64], valid: &[ActionId]) -> Vec<f64> {
        let mut p: Vec<f64> = if self.temperature == 1.0 {
            valid.iter().map(|a| log_probs[a.0].exp()).collect()
        } else {
            let scaled: Vec<f64> = valid.iter().map(|a| log_probs[a.0] / self.temperature).collect();
            let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scaled.iter().map(|v| (v - max).exp()).collect();
            let z: f64 = e.iter().sum();
            e.into_iter().map(|v| v / z).collect()
        };
        if self.epsilon > 0.0 {
            let u = self.epsilon / valid.len() as f64;
            p.iter_mut().for_each(|v| *v = (1.0 - self.epsilon) * *v + u);
        }
        p
    }
}

fn draw(probs: &[f64], rng: &mut impl Rng) -> usize {
    let total: f64 = probs.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &p) in probs.iter().enumerate() {
        if u < p {
            return i;
        }
        u -= p;
    }
    // Rounding left u past the last bucket; take the last positive entry.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Samples `n` complete trajectories, advancing all unfinished ones together.
pub fn sample_trajectories<E: Environment>(
    policy: &PolicySet,
    env: &E,
    n: usize,
    modifier: SamplerMod,
    rng: &mut impl Rng,
) -> Result<Vec<Trajectory<E::State>>, GfnError> {
    modifier.validate()?;
    policy.check_env(env)?;
    let max_len = env.max_trajectory_len();
    let mut trajs: Vec<Trajectory<E::State>> = (0..n)
        .map(|_| Trajectory {
            states: vec![env.initial_state()],
            actions: Vec::new(),
            log_reward: f64::NAN,
        })
        .collect();
    let mut active: Vec<usize> = (0..n).collect();
    while !active.is_empty() {
        let states: Vec<&E::State> = active.iter().map(|&i| trajs[i].terminal()).collect();
        let lp = policy.forward_log_probs(env, &states)?;
        let mut chosen = Vec::with_capacity(active.len());
        for (row, s) in states.iter().enumerate() {
            let valid = env.forward_actions(s);
            let probs = modifier.action_probs(lp.row(row), &valid);
            chosen.push(valid[draw(&probs, rng)]);
        }
        let mut still = Vec::with_capacity(active.len());
        for (&i, a) in active.iter().zip(chosen) {
            let t = &mut trajs[i];
            if t.actions.len() >= max_len {
                return Err(EnvError::TrajectoryOverrun { max: max_len }.into());
            }
            let cur = t.terminal().clone();
            t.actions.push(a);
            match env.apply(&cur, a)? {
                Step::State(c) => {
                    t.states.push(c);
                    still.push(i);
                }
                Step::Sink => t.log_reward = env.log_reward(&cur)?,
            }
        }
        active = still;
    }
    Ok(trajs)
}

pub fn sample_trajectory<E: Environment>(
    policy: &PolicySet,
    env: &E,
    modifier: SamplerMod,
    rng: &mut impl Rng,
) -> Result<Trajectory<E::State>, GfnError> {
    Ok(sample_trajectories(policy, env, 1, modifier, rng)?.pop().expect("one trajectory"))
}
