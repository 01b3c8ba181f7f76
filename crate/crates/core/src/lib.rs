//! Edge-level group-relative policy optimization for multi-agent
//! communication topologies.

pub mod cli;
pub mod env;
pub mod error;
pub mod graph;
pub mod grpo;
pub mod policy;
pub mod rng;
pub mod sampling;
pub mod trainer;

pub use error::{Error, Result};
