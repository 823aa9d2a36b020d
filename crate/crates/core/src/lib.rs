//! Objective functions for tuning Metropolis-Hastings proposals, the proposal
//! families they tune, and the machinery to train and evaluate them.

pub mod diffcore;
pub mod error;
pub mod evaluation;
pub mod kernels;
pub mod objectives;
pub mod proposals;
pub mod targets;
pub mod training;

pub use error::{Error, Result};

/// Random number generator used throughout; seeded explicitly everywhere.
pub type SeededRng = rand_chacha::ChaCha8Rng;
