//! Demonstration-data engine and desk-scale behavior cloning.
//!
//! The pipeline runs recording bundles through action extraction, sharded
//! storage and batch loading into a small two-layer policy, and evaluates
//! policies by kinematic rollout.

pub mod client;
pub mod config;
pub mod error;
pub mod geometry;
pub mod loader;
pub mod optim;
pub mod pipeline;
pub mod policy;
pub mod recording;
pub mod rollout;
pub mod store;
pub mod trajectory;

pub use error::{Error, ErrorClass, Result};
