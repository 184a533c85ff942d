//! Benchmark environments.

pub mod bayes;
pub mod bitseq;
pub mod chain;
pub mod codon;
pub mod hypergrid;

pub use bayes::{BayesDagEnv, BgeParams, Dag, Dataset};
pub use bitseq::BitSeqEnv;
pub use chain::ChainEnv;
pub use codon::{CodonEnv, CodonWeights};
pub use hypergrid::HypergridEnv;
