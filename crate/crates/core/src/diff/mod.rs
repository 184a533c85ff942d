//! Reverse-mode automatic differentiation, MLPs and optimizers.

pub mod matrix;
pub mod mlp;
pub mod optim;
pub mod params;
pub mod tape;

pub use matrix::Matrix;
pub use mlp::{init_params, mlp_eval, mlp_forward, Activation, MlpSpec};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind, LOG_Z_GROUP};
pub use params::{ParamGroup, ParamStore};
pub use tape::{DiffError, OpKind, Tape, Var, MASKED_LOG_PROB};
