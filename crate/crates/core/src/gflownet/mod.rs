//! Policies, trajectory sampling, the trajectory-balance loss and exact
//! small-instance oracles.

pub mod loss;
pub mod oracle;
pub mod policy;
pub mod sampler;

use thiserror::Error;

use crate::diff::DiffError;
use crate::env::EnvError;

pub use loss::{tb_deltas, tb_loss, tb_loss_batch, TbBatch};
pub use oracle::{
    chain_solution, exact_terminal_distribution, exact_terminal_distribution_with, flow_matching_residual,
    target_distribution, EdgeFlows, TerminalDistribution,
};
pub use policy::{Architecture, PolicyConfig, PolicyInput, PolicyOutputs, PolicySet};
pub use sampler::{sample_trajectories, sample_trajectory, SamplerMod};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GfnError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),
}
