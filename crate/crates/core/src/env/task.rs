//! Tasks and their reward oracles.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{admissible_edges, AgentTeam, Edge, EdgeProbMatrix, Topology};
use crate::rng;

use super::dataset::Difficulty;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    /// Reward 1 whenever the answer agent is reachable.
    AlwaysSucceed,
    /// Reward 1 iff every critical requirement is met.
    PlantedPath,
    /// Bernoulli(q_hi) when requirements are met, Bernoulli(q_lo) otherwise.
    NoisyPlanted,
}

/// One entry of a task's critical set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Requirement {
    Edge(Edge),
    /// Unsatisfiable by any DAG; the task always fails.
    Impossible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub task_id: String,
    pub team: AgentTeam,
    pub oracle: OracleKind,
    pub critical: Vec<Requirement>,
    pub q_hi: f64,
    pub q_lo: f64,
    pub difficulty: Option<Difficulty>,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        let n = self.team.n_agents();
        for req in &self.critical {
            if let Requirement::Edge(e) = req {
                if !e.is_admissible(n) {
                    return Err(Error::Validation(format!(
                        "task {}: critical edge {e} is not admissible",
                        self.task_id
                    )));
                }
            }
        }
        for q in [self.q_lo, self.q_hi] {
            if !(0.0..=1.0).contains(&q) {
                return Err(Error::Validation(format!(
                    "task {}: q={q} outside [0,1]",
                    self.task_id
                )));
            }
        }
        if self.q_lo > self.q_hi {
            return Err(Error::Validation(format!(
                "task {}: q_lo > q_hi",
                self.task_id
            )));
        }
        if self.oracle == OracleKind::AlwaysSucceed && !self.critical.is_empty() {
            return Err(Error::Validation(format!(
                "task {}: always-succeed tasks carry no critical set",
                self.task_id
            )));
        }
        Ok(())
    }

    pub fn n_agents(&self) -> usize {
        self.team.n_agents()
    }

    /// Critical edges, excluding any impossibility marker.
    pub fn critical_edges(&self) -> Vec<Edge> {
        self.critical
            .iter()
            .filter_map(|r| match r {
                Requirement::Edge(e) => Some(*e),
                Requirement::Impossible => None,
            })
            .collect()
    }

    pub fn is_impossible(&self) -> bool {
        self.critical.contains(&Requirement::Impossible)
    }

    /// Whether planted-edge recovery is measurable on this task.
    pub fn has_recoverable_plant(&self) -> bool {
        self.oracle != OracleKind::AlwaysSucceed
            && !self.is_impossible()
            && !self.critical.is_empty()
    }

    fn requirements_met(&self, t: &Topology) -> bool {
        self.critical.iter().all(|r| match r {
            Requirement::Edge(e) => t.contains(*e),
            Requirement::Impossible => false,
        })
    }

    fn check_dims(&self, t: &Topology) -> Result<()> {
        if t.n_agents() != self.n_agents() {
            return Err(Error::Validation(format!(
                "task {} has {} agents, topology has {}",
                self.task_id,
                self.n_agents(),
                t.n_agents()
            )));
        }
        Ok(())
    }
}

/// Binary reward of running `t` on `task`. Disconnected answer agent means 0.
pub fn evaluate(task: &TaskSpec, t: &Topology, seed: u64) -> Result<f64> {
    task.check_dims(t)?;
    if !t.answer_reachable() {
        return Ok(0.0);
    }
    let reward = match task.oracle {
        OracleKind::AlwaysSucceed => true,
        OracleKind::PlantedPath => task.requirements_met(t),
        OracleKind::NoisyPlanted => {
            let q = if task.requirements_met(t) {
                task.q_hi
            } else {
                task.q_lo
            };
            let mut rng = rng::stream(
                seed,
                &[rng::fnv1a64(task.task_id.as_bytes()), t.fingerprint()],
            );
            rng.random::<f64>() < q
        }
    };
    Ok(if reward { 1.0 } else { 0.0 })
}

/// Exact probability that `t` earns reward 1 (deterministic oracles give 0 or 1).
pub fn success_probability(task: &TaskSpec, t: &Topology) -> Result<f64> {
    task.check_dims(t)?;
    if !t.answer_reachable() {
        return Ok(0.0);
    }
    Ok(match task.oracle {
        OracleKind::AlwaysSucceed => 1.0,
        OracleKind::PlantedPath => f64::from(u8::from(task.requirements_met(t))),
        OracleKind::NoisyPlanted => {
            if task.requirements_met(t) {
                task.q_hi
            } else {
                task.q_lo
            }
        }
    })
}

/// Success probability of a planted-path task under independent edge
/// sampling from `p`: the product of critical-edge probabilities times the
/// chance the answer agent is reachable given those edges.
pub fn planted_success_probability(task: &TaskSpec, p: &EdgeProbMatrix) -> Result<f64> {
    if task.oracle != OracleKind::PlantedPath {
        return Err(Error::Validation(
            "only planted-path tasks have a closed form".into(),
        ));
    }
    if task.is_impossible() {
        return Ok(0.0);
    }
    let n = task.n_agents();
    let critical = task.critical_edges();
    let base = Topology::from_edges(n, critical.iter().copied())?;
    let joint: f64 = critical.iter().map(|&e| p.get(e)).product();
    if base.answer_reachable() {
        return Ok(joint);
    }
    // condition on the remaining edges
    let free: Vec<Edge> = admissible_edges(n).filter(|e| !base.contains(*e)).collect();
    if free.len() > 20 {
        return Err(Error::Validation(
            "too many free edges to condition on".into(),
        ));
    }
    let mut reach = 0.0;
    for mask in 0u32..(1 << free.len()) {
        let mut t = base.clone();
        let mut w = 1.0;
        for (b, &e) in free.iter().enumerate() {
            if mask >> b & 1 == 1 {
                t.set(e, true);
                w *= p.get(e);
            } else {
                w *= 1.0 - p.get(e);
            }
        }
        if t.answer_reachable() {
            reach += w;
        }
    }
    Ok(joint * reach)
}
