//! Edge-level group-relative estimators and the losses built on them.
//!
//! For a group of `K` sampled topologies with binary rewards `r_k`:
//!
//! ```text
//! S_ij = sum_k I[(i,j) in G_k] r_k / (sum_k I[(i,j) in G_k] + eps)
//! A_ij = (S_ij - mean_S) / (std_S + eps)           over active edges
//! L    = 1/|E| sum_(i,j in E) [ -A_ij log p_ij + beta KL(p_ij || p_ref_ij) ]
//! ```
//!
//! `E` (the active set) is every edge present in at least one member of the
//! group. Graph-level GRPO and plain REINFORCE are provided for ablations.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Edge, EdgeProbMatrix};
use crate::policy::ProbLoss;
use crate::sampling::SampleGroup;

/// Stabilizer used in both the success-rate and advantage denominators.
pub const EPSILON: f64 = 1e-8;

/// Probabilities are clamped into `[PROB_CLAMP, 1 - PROB_CLAMP]` before any log.
pub const PROB_CLAMP: f64 = 1e-6;

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Derivative of the clamp: 1 strictly inside the band, 0 outside.
fn clamp_slope(p: f64) -> f64 {
    if (PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
        1.0
    } else {
        0.0
    }
}

/// Which advantage estimator drives the update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    /// Per-edge conditional success rates, group-normalized.
    EdgeGrpo,
    /// One group-normalized advantage per topology, shared by its edges.
    GraphGrpo,
    /// Raw-reward score function, no baseline.
    Reinforce,
}

impl Estimator {
    pub const ALL: [Estimator; 3] = [
        Estimator::EdgeGrpo,
        Estimator::GraphGrpo,
        Estimator::Reinforce,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Estimator::EdgeGrpo => "edge-grpo",
            Estimator::GraphGrpo => "graph-grpo",
            Estimator::Reinforce => "reinforce",
        }
    }
}

impl std::str::FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Estimator::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown estimator '{s}'")))
    }
}

/// A sampled group and its binary rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupRollout {
    pub group: SampleGroup,
    pub rewards: Vec<f64>,
}

impl GroupRollout {
    pub fn new(group: SampleGroup, rewards: Vec<f64>) -> Result<Self> {
        if rewards.len() != group.group_size() {
            return Err(Error::Validation(format!(
                "{} rewards for a group of {}",
                rewards.len(),
                group.group_size()
            )));
        }
        if let Some(r) = rewards.iter().find(|&&r| r != 0.0 && r != 1.0) {
            return Err(Error::Validation(format!("reward {r} is not binary")));
        }
        Ok(Self { group, rewards })
    }

    pub fn group_size(&self) -> usize {
        self.rewards.len()
    }

    pub fn reward_mean(&self) -> f64 {
        self.rewards.iter().sum::<f64>() / self.rewards.len() as f64
    }

    /// All rewards equal: the group carries no relative signal.
    pub fn is_uniform(&self) -> bool {
        self.rewards.windows(2).all(|w| w[0] == w[1])
    }
}

/// Counts, score and advantage of one active edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeStat {
    pub edge: Edge,
    pub presence: usize,
    pub successes: usize,
    pub score: f64,
    pub advantage: f64,
}

/// Per-edge statistics over the active set of one group.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeStatsTable {
    pub n_agents: usize,
    pub group_size: usize,
    /// Active edges, receiver-major.
    pub entries: Vec<EdgeStat>,
    pub mu: f64,
    pub sigma: f64,
}

impl EdgeStatsTable {
    pub fn active_edge_count(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, e: Edge) -> Option<&EdgeStat> {
        self.entries.iter().find(|s| s.edge == e)
    }

    pub fn advantage_range(&self) -> Option<(f64, f64)> {
        self.entries
            .iter()
            .map(|s| s.advantage)
            .fold(None, |acc, a| match acc {
                None => Some((a, a)),
                Some((lo, hi)) => Some((lo.min(a), hi.max(a))),
            })
    }

    pub fn edges(&self) -> Vec<Edge> {
        self.entries.iter().map(|s| s.edge).collect()
    }
}

fn presence_counts(rollout: &GroupRollout) -> BTreeMap<Edge, (usize, usize)> {
    let mut counts: BTreeMap<Edge, (usize, usize)> = BTreeMap::new();
    for (t, &r) in rollout.group.topologies.iter().zip(&rollout.rewards) {
        for e in t.edge_list() {
            let c = counts.entry(e).or_default();
            c.0 += 1;
            if r == 1.0 {
                c.1 += 1;
            }
        }
    }
    counts
}

/// Conditional success rates with the default stabilizer.
pub fn edge_success_rates(rollout: &GroupRollout) -> Result<EdgeStatsTable> {
    edge_success_rates_with(rollout, EPSILON)
}

/// Conditional success rates with an explicit stabilizer in the denominator.
pub fn edge_success_rates_with(rollout: &GroupRollout, eps: f64) -> Result<EdgeStatsTable> {
    let checked = GroupRollout::new(rollout.group.clone(), rollout.rewards.clone())?;
    let entries = presence_counts(&checked)
        .into_iter()
        .map(|(edge, (presence, successes))| EdgeStat {
            edge,
            presence,
            successes,
            score: successes as f64 / (presence as f64 + eps),
            advantage: 0.0,
        })
        .collect();
    Ok(EdgeStatsTable {
        n_agents: checked.group.n_agents(),
        group_size: checked.group_size(),
        entries,
        mu: 0.0,
        sigma: 0.0,
    })
}

/// Population mean and standard deviation.
fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Standardizes scores over the active set with the default stabilizer.
pub fn advantages(stats: &EdgeStatsTable) -> Result<EdgeStatsTable> {
    advantages_with(stats, EPSILON)
}

pub fn advantages_with(stats: &EdgeStatsTable, eps: f64) -> Result<EdgeStatsTable> {
    if stats.entries.is_empty() {
        return Err(Error::NoUpdate);
    }
    let (mu, sigma) = mean_std(stats.entries.iter().map(|s| s.score));
    let mut out = stats.clone();
    out.mu = mu;
    out.sigma = sigma;
    for s in &mut out.entries {
        s.advantage = (s.score - mu) / (sigma + eps);
    }
    Ok(out)
}

/// One advantage per topology, `(r_k - mean r) / (std r + eps)`; each edge
/// takes the mean over the topologies containing it.
pub fn graph_level_advantages(rollout: &GroupRollout) -> Result<EdgeStatsTable> {
    let mut table = edge_success_rates(rollout)?;
    let (mu, sigma) = mean_std(rollout.rewards.iter().copied());
    let sample_adv: Vec<f64> = rollout
        .rewards
        .iter()
        .map(|r| (r - mu) / (sigma + EPSILON))
        .collect();
    for stat in &mut table.entries {
        let (sum, count) = rollout
            .group
            .topologies
            .iter()
            .zip(&sample_adv)
            .filter(|(t, _)| t.contains(stat.edge))
            .fold((0.0, 0usize), |(s, c), (_, a)| (s + a, c + 1));
        stat.advantage = sum / count as f64;
    }
    table.mu = mu;
    table.sigma = sigma;
    Ok(table)
}

/// `KL(Bernoulli(p) || Bernoulli(q))` after clamping both arguments.
pub fn bernoulli_kl(p: f64, q: f64) -> f64 {
    let (p, q) = (clamp_prob(p), clamp_prob(q));
    p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln()
}

/// d/dp of [`bernoulli_kl`] inside the clamp band.
fn bernoulli_kl_grad(p: f64, q: f64) -> f64 {
    let (pc, qc) = (clamp_prob(p), clamp_prob(q));
    clamp_slope(p) * ((pc / qc).ln() - ((1.0 - pc) / (1.0 - qc)).ln())
}

/// The two components of the GRPO objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrpoLossParts {
    pub total: f64,
    pub policy_term: f64,
    /// `beta`-weighted KL contribution.
    pub kl_term: f64,
}

/// KL-penalized group-relative loss over the active set.
#[derive(Debug, Clone)]
pub struct GrpoLoss<'a> {
    pub p_ref: &'a EdgeProbMatrix,
    pub stats: &'a EdgeStatsTable,
    pub beta: f64,
}

impl GrpoLoss<'_> {
    pub fn parts(&self, p: &EdgeProbMatrix) -> Result<GrpoLossParts> {
        self.check(p)?;
        let n_active = self.stats.entries.len() as f64;
        let (mut policy_term, mut kl_term) = (0.0, 0.0);
        for s in &self.stats.entries {
            policy_term += -s.advantage * clamp_prob(p.get(s.edge)).ln();
            kl_term += self.beta * bernoulli_kl(p.get(s.edge), self.p_ref.get(s.edge));
        }
        policy_term /= n_active;
        kl_term /= n_active;
        Ok(GrpoLossParts {
            total: policy_term + kl_term,
            policy_term,
            kl_term,
        })
    }

    fn check(&self, p: &EdgeProbMatrix) -> Result<()> {
        if p.n_agents() != self.p_ref.n_agents() || p.n_agents() != self.stats.n_agents {
            return Err(Error::Dimension(
                "policy, reference and statistics disagree on team size".into(),
            ));
        }
        if self.beta < 0.0 || !self.beta.is_finite() {
            return Err(Error::Config(format!(
                "beta must be >= 0, got {}",
                self.beta
            )));
        }
        if self.stats.entries.is_empty() {
            return Err(Error::NoUpdate);
        }
        Ok(())
    }
}

impl ProbLoss for GrpoLoss<'_> {
    fn evaluate(&self, p: &EdgeProbMatrix) -> Result<(f64, Vec<f64>)> {
        let parts = self.parts(p)?;
        let n = p.n_agents();
        let scale = 1.0 / self.stats.entries.len() as f64;
        let mut grad = vec![0.0; n * n];
        for s in &self.stats.entries {
            let pe = p.get(s.edge);
            let log_grad = clamp_slope(pe) / clamp_prob(pe);
            grad[s.edge.receiver * n + s.edge.sender] = scale
                * (-s.advantage * log_grad
                    + self.beta * bernoulli_kl_grad(pe, self.p_ref.get(s.edge)));
        }
        Ok((parts.total, grad))
    }
}

/// Scalar form of [`GrpoLoss`].
pub fn grpo_loss(
    p: &EdgeProbMatrix,
    p_ref: &EdgeProbMatrix,
    stats: &EdgeStatsTable,
    beta: f64,
) -> Result<f64> {
    GrpoLoss { p_ref, stats, beta }
        .parts(p)
        .map(|parts| parts.total)
}

/// `beta/|E| sum_E KL(p || p_ref)` on its own.
#[derive(Debug, Clone)]
pub struct KlPenalty<'a> {
    pub p_ref: &'a EdgeProbMatrix,
    pub edges: Vec<Edge>,
    pub beta: f64,
}

impl ProbLoss for KlPenalty<'_> {
    fn evaluate(&self, p: &EdgeProbMatrix) -> Result<(f64, Vec<f64>)> {
        if self.edges.is_empty() {
            return Err(Error::NoUpdate);
        }
        let n = p.n_agents();
        let scale = self.beta / self.edges.len() as f64;
        let mut grad = vec![0.0; n * n];
        let mut value = 0.0;
        for &e in &self.edges {
            value += scale * bernoulli_kl(p.get(e), self.p_ref.get(e));
            grad[e.receiver * n + e.sender] +=
                scale * bernoulli_kl_grad(p.get(e), self.p_ref.get(e));
        }
        Ok((value, grad))
    }
}

/// `-(1/K) sum_k r_k sum_(i,j in G_k) log p_ij`.
#[derive(Debug, Clone)]
pub struct ReinforceLoss<'a> {
    pub rollout: &'a GroupRollout,
}

impl ProbLoss for ReinforceLoss<'_> {
    fn evaluate(&self, p: &EdgeProbMatrix) -> Result<(f64, Vec<f64>)> {
        let n = p.n_agents();
        let k = self.rollout.group_size() as f64;
        let mut value = 0.0;
        let mut grad = vec![0.0; n * n];
        for (t, &r) in self
            .rollout
            .group
            .topologies
            .iter()
            .zip(&self.rollout.rewards)
        {
            if r == 0.0 {
                continue;
            }
            if t.n_agents() != n {
                return Err(Error::Dimension(
                    "rollout and policy disagree on team size".into(),
                ));
            }
            for e in t.edge_list() {
                let pe = p.get(e);
                value -= r * clamp_prob(pe).ln() / k;
                grad[e.receiver * n + e.sender] -= r * clamp_slope(pe) / clamp_prob(pe) / k;
            }
        }
        Ok((value, grad))
    }
}

pub fn reinforce_loss(p: &EdgeProbMatrix, rollout: &GroupRollout) -> Result<f64> {
    ReinforceLoss { rollout }.evaluate(p).map(|(v, _)| v)
}
