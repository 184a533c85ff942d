//! Generative flow networks trained with trajectory balance, with
//! loss-guided auxiliary exploration and baseline explorers.

pub mod diff;
pub mod env;
pub mod envs;
pub mod explorers;
pub mod gflownet;
pub mod metrics;
pub mod trainer;
