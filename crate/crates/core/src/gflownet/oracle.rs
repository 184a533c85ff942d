//! Exact terminal distributions on enumerable environments, the reward target,
//! and flow-matching residuals.

use std::collections::HashMap;

use super::{GfnError, PolicySet};
use crate::diff::Matrix;
use crate::env::{ActionId, Environment, Step};
use crate::envs::ChainEnv;

const CHUNK: usize = 8192;

/// Probabilities over the terminable states, in enumeration order.
#[derive(Clone, Debug, PartialEq)]
pub struct TerminalDistribution<S> {
    pub states: Vec<S>,
    pub probs: Vec<f64>,
}

impl<S: Clone + Eq + std::hash::Hash> TerminalDistribution<S> {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn prob(&self, s: &S) -> Option<f64> {
        self.states.iter().position(|x| x == s).map(|i| self.probs[i])
    }

    pub fn to_map(&self) -> HashMap<S, f64> {
        self.states.iter().cloned().zip(self.probs.iter().copied()).collect()
    }
}

/// Pushes probability mass through the DAG in topological order using the
/// forward log-probabilities returned by `log_probs` for a chunk of states.
pub fn exact_terminal_distribution_with<E, F>(
    env: &E,
    cap: usize,
    mut log_probs: F,
) -> Result<TerminalDistribution<E::State>, GfnError>
where
    E: Environment,
    F: FnMut(&[&E::State]) -> Result<Matrix, GfnError>,
{
    let order = env.enumerate_states(cap)?;
    let index: HashMap<&E::State, usize> = order.iter().enumerate().map(|(i, s)| (s, i)).collect();
    let mut mass = vec![0.0; order.len()];
    mass[0] = 1.0;
    let exit = env.exit_action();
    let mut states = Vec::new();
    let mut probs = Vec::new();
    for start in (0..order.len()).step_by(CHUNK) {
        let end = (start + CHUNK).min(order.len());
        let chunk: Vec<&E::State> = order[start..end].iter().collect();
        let lp = log_probs(&chunk)?;
        for (r, s) in chunk.iter().enumerate() {
            let m = mass[start + r];
            for a in env.forward_actions(s) {
                let p = m * lp.get(r, a.0).exp();
                if a == exit {
                    states.push((*s).clone());
                    probs.push(p);
                } else if let Step::State(c) = env.apply(s, a)? {
                    mass[index[&c]] += p;
                }
            }
        }
    }
    Ok(TerminalDistribution { states, probs })
}

/// Terminal distribution induced by the forward policy of `policy`.
pub fn exact_terminal_distribution<E: Environment>(
    policy: &PolicySet,
    env: &E,
    cap: usize,
) -> Result<TerminalDistribution<E::State>, GfnError> {
    policy.check_env(env)?;
    exact_terminal_distribution_with(env, cap, |chunk| policy.forward_log_probs(env, chunk))
}

/// `R(x) / Σ R` over every terminable state, normalized in log space.
pub fn target_distribution<E: Environment>(env: &E, cap: usize) -> Result<TerminalDistribution<E::State>, GfnError> {
    let mut states = Vec::new();
    let mut logs = Vec::new();
    for s in env.enumerate_states(cap)? {
        if env.can_exit(&s) {
            logs.push(env.log_reward(&s)?);
            states.push(s);
        }
    }
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logs.iter().map(|l| (l - max).exp()).sum();
    let probs = logs.iter().map(|l| (l - max).exp() / z).collect();
    Ok(TerminalDistribution { states, probs })
}

/// Edge flows `F(s -> s')`, keyed by the source state and action; exit edges
/// carry `F(x -> sink)`. Missing edges have zero flow.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EdgeFlows<S: Eq + std::hash::Hash> {
    flows: HashMap<(S, ActionId), f64>,
}

impl<S: Clone + Eq + std::hash::Hash> EdgeFlows<S> {
    pub fn new() -> Self {
        Self { flows: HashMap::new() }
    }

    pub fn get(&self, s: &S, a: ActionId) -> f64 {
        self.flows.get(&(s.clone(), a)).copied().unwrap_or(0.0)
    }

    pub fn set(&mut self, s: S, a: ActionId, f: f64) {
        self.flows.insert((s, a), f);
    }

    pub fn add(&mut self, s: S, a: ActionId, df: f64) {
        *self.flows.entry((s, a)).or_insert(0.0) += df;
    }
}

/// `|Σ_in F − Σ_out F − F(s -> sink)|`, plus `|F(s -> sink) − R(s)|` when `s`
/// can exit.
pub fn flow_matching_residual<E: Environment>(
    flows: &EdgeFlows<E::State>,
    env: &E,
    s: &E::State,
) -> Result<f64, GfnError> {
    let inflow: f64 = env
        .backward_transitions(s)?
        .iter()
        .map(|(p, a)| flows.get(p, *a))
        .sum();
    let exit = env.exit_action();
    let mut outflow = 0.0;
    let mut exit_flow = 0.0;
    for a in env.forward_actions(s) {
        if a == exit {
            exit_flow = flows.get(s, a);
        } else {
            outflow += flows.get(s, a);
        }
    }
    let mut res = (inflow - outflow - exit_flow).abs();
    if env.can_exit(s) {
        res += (exit_flow - env.log_reward(s)?.exp()).abs();
    }
    Ok(res)
}

/// Closed-form flows of the chain: `F(s_i) = Σ_{j≥i} R_j`, exit flow `R_i`,
/// and a tabular policy with `θ_i = ln(R_i / (F_i − R_i))`, `logZ = ln Σ R`.
pub fn chain_solution(env: &ChainEnv) -> (PolicySet, EdgeFlows<usize>) {
    let n = env.n_states();
    let mut state_flow = vec![0.0; n + 1];
    for i in (0..n).rev() {
        state_flow[i] = state_flow[i + 1] + env.reward(i);
    }
    let mut policy = PolicySet::tabular(n);
    let mut flows = EdgeFlows::new();
    for i in 0..n {
        let r = env.reward(i);
        flows.set(i, crate::envs::chain::EXIT, r);
        if i + 1 < n {
            flows.set(i, crate::envs::chain::ADVANCE, state_flow[i + 1]);
            policy.theta_mut()[i] = (r / state_flow[i + 1]).ln();
        }
    }
    policy.set_log_z(state_flow[0].ln());
    (policy, flows)
}
