//! Compact tree ensembles: a pool of boosted trees is grown from one or
//! more boosting chains, then a few trees are selected and their leaf
//! weights jointly refit by annealed group-sparse loss minimization.

pub mod boost;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod fsa;
pub mod loss;
pub mod pool;
pub mod rng;
pub mod tree;
pub mod tune;

pub use error::{Error, ErrorClass, Result};
