//! Bayesian mixed-effects Markov chains for categorical sequences.
//!
//! Sequences of tokens are modeled as a mixture of a population-level
//! transition matrix, shared by all sequences whose predictor levels fall in
//! the same clusters, and a subject-level matrix. Predictor levels are
//! clustered under a partition prior; a posterior with a single cluster for a
//! predictor means its levels are indistinguishable.

pub mod baseline;
pub mod dist;
pub mod error;
pub mod gibbs;
pub mod inference;
pub mod io;
pub mod matrix;
pub mod model;
pub mod partition;
pub mod rng;
pub mod simulate;
#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use gibbs::{run_chain, McmcSettings, Trace, TraceDraw};
pub use matrix::TransitionMatrix;
pub use model::{
    Factor, Hyperparams, ModelState, PredictorPrior, PredictorSpec, Sequence, SequenceDataset, StateSpace,
};
