//! Model-free, shared-policy and dual-policy planning agents for a
//! predator/prey survival task, with the training and experiment tooling
//! to compare them.

pub mod agents;
pub mod env;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod nn;
pub mod planner;
pub mod reflex;
pub mod rng;
pub mod training;
pub mod world_model;

pub use error::{Error, Result};
