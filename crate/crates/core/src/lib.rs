//! Federated identification of linear time-invariant systems across many
//! workers whose data come from an unknown number of hidden systems.

pub mod clustering;
pub mod config;
pub mod datagen;
pub mod error;
pub mod io;
pub mod linalg;
pub mod lti;
pub mod metrics;
pub mod orchestrator;
pub mod report;
pub mod rng;
pub mod scenario;
pub mod training;

pub use error::{Error, Result};
pub use lti::{LtiParams, Rollout, StabilityReport};
