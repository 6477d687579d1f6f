//! Meta-learned vehicle dynamics models with uncertainty-aware MPPI control.
//!
//! The crate covers the full desk-scale pipeline: a dynamic bicycle-model
//! simulator, randomized task generation, a recurrent derivative-prediction
//! model with hand-written gradients, MAML pre-training, ensemble epistemic
//! uncertainty, an MPPI controller with an uncertainty-aware stage cost,
//! online adaptation from a rolling buffer, and the oval-track experiment
//! harness behind the `metacar` CLI.

pub mod adapt;
pub mod cli;
pub mod ensemble;
pub mod error;
pub mod harness;
pub mod meta;
pub mod model;
pub mod mppi;
pub mod taskgen;
pub mod track;
pub mod vehicle;

pub use error::{Error, Result};
