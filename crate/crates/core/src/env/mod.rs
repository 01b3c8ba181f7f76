//! Reward oracles standing in for agent execution, synthetic datasets, the
//! message-count cost proxy, and an optional chat-completion executor.

pub mod dataset;
pub mod executor;
pub mod task;

pub use dataset::{generate_dataset, DatasetParams, DatasetSpec, Difficulty, DifficultyMix};
pub use executor::{
    external_execute, external_execute_batch, ChatTransport, DispatchedMessage, ExecutionReport,
    ExecutorConfig, Grader, HttpTransport,
};
pub use task::{evaluate, success_probability, OracleKind, Requirement, TaskSpec};

use crate::error::{Error, Result};
use crate::graph::Topology;

/// Communication rounds per execution.
pub const ROUND_CAP: usize = 3;

/// Message count of running `t` for `rounds` rounds: one message per edge per round.
pub fn message_cost(t: &Topology, rounds: usize) -> Result<usize> {
    if rounds == 0 {
        return Err(Error::Config("rounds must be >= 1".into()));
    }
    Ok(rounds * t.edge_count())
}
