use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{message_cost, success_probability, DatasetSpec, Difficulty, ROUND_CAP};
use crate::error::Result;
use crate::graph::admissible_edges;
use crate::grpo::Estimator;
use crate::policy::{encode_nodes, policy_probabilities, PolicyConfig, PolicyParams};
use crate::rng;
use crate::sampling::infer_topology;

use super::{logit_contributions, rollout, train, TrainConfig, TrainState};

const VARIANCE_TAG: u64 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task_id: String,
    pub difficulty: Option<Difficulty>,
    /// Exact success probability of the inferred topology.
    pub expected_reward: f64,
    /// Inferred edges, one-based `a{sender}->a{receiver}`.
    pub edges: Vec<String>,
    pub edge_count: usize,
    pub message_cost: usize,
    /// Inferred edges that belong to the planted set (planted tasks only).
    pub planted_hits: Option<usize>,
    pub planted_total: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tau: f64,
    pub accuracy: f64,
    pub mean_edge_count: f64,
    pub mean_message_cost: f64,
    /// Pooled over tasks with a recoverable planted path.
    pub planted_recall: f64,
    /// Pooled; 0 when nothing was predicted on those tasks.
    pub planted_precision: f64,
    /// Mean number of inferred non-planted edges per planted task.
    pub mean_redundant_edges: f64,
    pub tasks: Vec<TaskResult>,
}

/// Deterministic evaluation of the thresholded policy on every task.
pub fn evaluate_policy(
    params: &PolicyParams,
    dataset: &DatasetSpec,
    tau: f64,
) -> Result<EvalReport> {
    let tasks = dataset
        .tasks
        .par_iter()
        .map(|task| {
            let x = encode_nodes(&task.team, params.embed_dim())?;
            let t = infer_topology(&policy_probabilities(params, &x)?, tau)?;
            let (hits, total) = if task.has_recoverable_plant() {
                let crit = task.critical_edges();
                (
                    Some(crit.iter().filter(|&&e| t.contains(e)).count()),
                    Some(crit.len()),
                )
            } else {
                (None, None)
            };
            Ok(TaskResult {
                task_id: task.task_id.clone(),
                difficulty: task.difficulty,
                expected_reward: success_probability(task, &t)?,
                edges: t.edge_list().iter().map(ToString::to_string).collect(),
                edge_count: t.edge_count(),
                message_cost: message_cost(&t, ROUND_CAP)?,
                planted_hits: hits,
                planted_total: total,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let n = tasks.len().max(1) as f64;
    let (mut hits, mut total, mut predicted, mut planted_tasks) = (0usize, 0usize, 0usize, 0usize);
    for r in &tasks {
        if let (Some(h), Some(t)) = (r.planted_hits, r.planted_total) {
            hits += h;
            total += t;
            predicted += r.edge_count;
            planted_tasks += 1;
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(EvalReport {
        tau,
        accuracy: tasks.iter().map(|r| r.expected_reward).sum::<f64>() / n,
        mean_edge_count: tasks.iter().map(|r| r.edge_count as f64).sum::<f64>() / n,
        mean_message_cost: tasks.iter().map(|r| r.message_cost as f64).sum::<f64>() / n,
        planted_recall: ratio(hits, total),
        planted_precision: ratio(hits, predicted),
        mean_redundant_edges: ratio(predicted - hits, planted_tasks),
        tasks,
    })
}

/// Mean over (task, edge) of the across-group variance of `dL/dlogit`, at
/// fixed `params`, over `n_groups` groups cycling through the dataset.
/// Skipped groups contribute a zero gradient, as they do in training.
pub fn gradient_variance(
    params: &PolicyParams,
    reference: &PolicyParams,
    dataset: &DatasetSpec,
    estimator: Estimator,
    cfg: &TrainConfig,
    n_groups: usize,
) -> Result<f64> {
    let n_tasks = dataset.tasks.len();
    let per_task = dataset
        .tasks
        .par_iter()
        .enumerate()
        .map(|(ti, task)| {
            let x = encode_nodes(&task.team, params.embed_dim())?;
            let probs = policy_probabilities(params, &x)?;
            let p_ref = policy_probabilities(reference, &x)?;
            let n = task.n_agents();
            let edges: Vec<usize> = admissible_edges(n)
                .map(|e| e.receiver * n + e.sender)
                .collect();
            let mut samples: Vec<Vec<f64>> = Vec::new();
            for g in (ti..n_groups).step_by(n_tasks) {
                let seed = rng::derive_seed(cfg.seed, &[VARIANCE_TAG, g as u64]);
                let r = rollout(task, &probs, cfg.group_size, seed)?;
                let d = logit_contributions(
                    estimator,
                    &r,
                    &probs,
                    &p_ref,
                    cfg.beta,
                    cfg.skip_uniform_reward_batches,
                )?;
                samples.push(edges.iter().map(|&k| d[k]).collect());
            }
            if samples.len() < 2 {
                return Ok(Vec::new());
            }
            let m = samples.len() as f64;
            Ok((0..edges.len())
                .map(|e| {
                    let mean = samples.iter().map(|s| s[e]).sum::<f64>() / m;
                    samples.iter().map(|s| (s[e] - mean).powi(2)).sum::<f64>() / m
                })
                .collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let all: Vec<f64> = per_task.into_iter().flatten().collect();
    Ok(if all.is_empty() {
        0.0
    } else {
        all.iter().sum::<f64>() / all.len() as f64
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub estimator: Estimator,
    pub seed: u64,
    pub accuracy: f64,
    pub planted_recall: f64,
    pub planted_precision: f64,
    pub mean_redundant_edges: f64,
    /// Measured at the shared initial parameters of this seed.
    pub grad_variance: f64,
    pub steps_applied: u64,
    pub steps_skipped: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub estimator: Estimator,
    pub accuracy: f64,
    pub planted_recall: f64,
    pub planted_precision: f64,
    pub mean_redundant_edges: f64,
    pub grad_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub summary: Vec<AblationSummary>,
}

impl AblationReport {
    pub fn row(&self, estimator: Estimator, seed: u64) -> Option<&AblationRow> {
        self.rows
            .iter()
            .find(|r| r.estimator == estimator && r.seed == seed)
    }
}

/// Trains one run per (estimator, seed) with identical budgets and reports
/// evaluation and gradient-noise figures side by side.
pub fn ablate(
    dataset: &DatasetSpec,
    base: &TrainConfig,
    policy: &PolicyConfig,
    seeds: &[u64],
    variance_groups: usize,
) -> Result<AblationReport> {
    let jobs: Vec<(Estimator, u64)> = Estimator::ALL
        .iter()
        .flat_map(|&e| seeds.iter().map(move |&s| (e, s)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(estimator, seed)| {
            let cfg = TrainConfig {
                estimator,
                seed,
                ..base.clone()
            };
            let init = TrainState::init(policy.clone(), seed)?;
            let grad_variance = gradient_variance(
                &init.params,
                &init.reference,
                dataset,
                estimator,
                &cfg,
                variance_groups,
            )?;
            let (state, _) = train(dataset, &cfg, policy)?;
            let report = evaluate_policy(&state.params, dataset, cfg.tau)?;
            Ok(AblationRow {
                estimator,
                seed,
                accuracy: report.accuracy,
                planted_recall: report.planted_recall,
                planted_precision: report.planted_precision,
                mean_redundant_edges: report.mean_redundant_edges,
                grad_variance,
                steps_applied: state.steps_applied,
                steps_skipped: state.steps_skipped,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = Estimator::ALL
        .iter()
        .map(|&estimator| {
            let rs: Vec<&AblationRow> = rows.iter().filter(|r| r.estimator == estimator).collect();
            let mean = |f: fn(&AblationRow) -> f64| {
                rs.iter().map(|r| f(r)).sum::<f64>() / rs.len().max(1) as f64
            };
            AblationSummary {
                estimator,
                accuracy: mean(|r| r.accuracy),
                planted_recall: mean(|r| r.planted_recall),
                planted_precision: mean(|r| r.planted_precision),
                mean_redundant_edges: mean(|r| r.mean_redundant_edges),
                grad_variance: mean(|r| r.grad_variance),
            }
        })
        .collect();
    Ok(AblationReport { rows, summary })
}
