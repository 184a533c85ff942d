//! Trajectory balance: `(logZ + Σ log P_F − log R − Σ log P_B)²`.
//!
//! P_F includes the exit step; P_B runs from the terminal back to the source.

use super::policy::backward_mask;
use super::{GfnError, PolicySet};
use crate::diff::{Matrix, Tape, Var, LOG_Z_GROUP};
use crate::env::{Environment, Trajectory};

pub struct TbBatch {
    /// Batch-mean squared residual.
    pub loss: Var,
    /// Residual `logZ + Σ log P_F − log R − Σ log P_B` per trajectory.
    pub deltas: Vec<f64>,
}

impl TbBatch {
    pub fn per_trajectory_loss(&self) -> Vec<f64> {
        self.deltas.iter().map(|d| d * d).collect()
    }
}

/// Records the mean TB loss of `trajs` on `tape`. `log_rewards` overrides the
/// stored terminal log-rewards (used for auxiliary rewards).
pub fn tb_loss_batch<E: Environment>(
    tape: &mut Tape,
    policy: &PolicySet,
    env: &E,
    trajs: &[Trajectory<E::State>],
    log_rewards: Option<&[f64]>,
) -> Result<TbBatch, GfnError> {
    if trajs.is_empty() {
        return Err(GfnError::ConfigMismatch("empty trajectory batch".into()));
    }
    if log_rewards.is_some_and(|r| r.len() != trajs.len()) {
        return Err(GfnError::ConfigMismatch("one log-reward per trajectory is required".into()));
    }
    let mut states = Vec::new();
    let mut actions = Vec::new();
    let mut segment = Vec::new();
    let mut mask = Vec::new();
    let mut back_rows = Vec::new();
    let mut back_actions = Vec::new();
    let mut back_segment = Vec::new();
    for (k, t) in trajs.iter().enumerate() {
        for (i, (s, a)) in t.states.iter().zip(&t.actions).enumerate() {
            if i > 0 {
                back_rows.push(states.len());
                back_actions.push(t.actions[i - 1].0);
                back_segment.push(k);
            }
            states.push(s);
            actions.push(a.0);
            segment.push(k);
            mask.extend(env.forward_mask(s));
        }
    }
    let n = trajs.len();
    let input = policy.input_for(env, &states)?;
    let out = policy.forward(tape, &input)?;
    let lp = tape.masked_log_softmax(out.forward, mask)?;
    let picked = tape.gather_cols(lp, actions)?;
    let sum_pf = tape.segment_sum(picked, segment, n)?;

    let log_z = tape.param(policy.store(), LOG_Z_GROUP);
    let mut delta = tape.add(sum_pf, log_z)?;
    let log_r: Vec<f64> = match log_rewards {
        Some(r) => r.to_vec(),
        None => trajs.iter().map(|t| t.log_reward).collect(),
    };
    let log_r = tape.constant(Matrix::column(log_r));
    delta = tape.sub(delta, log_r)?;

    if let (Some(pb), false) = (out.backward, back_rows.is_empty()) {
        let mut bmask = Vec::with_capacity(back_rows.len() * (env.n_actions() - 1));
        for &r in &back_rows {
            bmask.extend(backward_mask(env, states[r])?);
        }
        let rows = tape.select_rows(pb, back_rows)?;
        let blp = tape.masked_log_softmax(rows, bmask)?;
        let bpicked = tape.gather_cols(blp, back_actions)?;
        let sum_pb = tape.segment_sum(bpicked, back_segment, n)?;
        delta = tape.sub(delta, sum_pb)?;
    }
    let deltas = tape.value(delta).data().to_vec();
    let sq = tape.square(delta);
    let loss = tape.mean(sq);
    Ok(TbBatch { loss, deltas })
}

/// TB residuals without recording gradients.
pub fn tb_deltas<E: Environment>(
    policy: &PolicySet,
    env: &E,
    trajs: &[Trajectory<E::State>],
) -> Result<Vec<f64>, GfnError> {
    if trajs.is_empty() {
        return Ok(Vec::new());
    }
    let mut tape = Tape::new();
    Ok(tb_loss_batch(&mut tape, policy, env, trajs, None)?.deltas)
}

/// Squared TB residual of one trajectory.
pub fn tb_loss<E: Environment>(policy: &PolicySet, env: &E, traj: &Trajectory<E::State>) -> Result<f64, GfnError> {
    let d = tb_deltas(policy, env, std::slice::from_ref(traj))?[0];
    Ok(d * d)
}
