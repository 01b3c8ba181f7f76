//! The training loop: group rollouts per query, estimator selection, Adam
//! updates anchored to a frozen reference snapshot, metrics and checkpoints.

mod adam;
mod checkpoint;
mod config;
mod eval;
mod metrics;

pub use adam::AdamState;
pub use checkpoint::{CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use config::{AdamConfig, TrainConfig};
pub use eval::{
    ablate, evaluate_policy, gradient_variance, AblationReport, AblationRow, AblationSummary,
    EvalReport, TaskResult,
};
pub use metrics::{read_metrics, write_metrics, MetricsWriter, StepMetrics};

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::env::{evaluate, DatasetSpec, TaskSpec};
use crate::error::{Error, Result};
use crate::graph::EdgeProbMatrix;
use crate::grpo::{
    advantages, edge_success_rates, graph_level_advantages, Estimator, GroupRollout, GrpoLoss,
    ReinforceLoss,
};
use crate::policy::{
    encode_nodes, logit_gradient, loss_gradient_features, policy_probabilities, NodeFeatures,
    PolicyConfig, PolicyParams, ProbLoss,
};
use crate::rng;
use crate::sampling::sample_group;

const INIT_TAG: u64 = 1;
const SHUFFLE_TAG: u64 = 2;
const GROUP_TAG: u64 = 3;
const REWARD_TAG: u64 = 4;

/// Everything needed to continue a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: PolicyParams,
    /// Frozen snapshot of `params` at step 0.
    pub reference: PolicyParams,
    pub adam: AdamState,
    /// Steps completed, applied or skipped.
    pub step: u64,
    pub steps_applied: u64,
    pub steps_skipped: u64,
    /// Run seed; every random draw derives from it and the step index.
    pub seed: u64,
}

impl TrainState {
    pub fn init(policy: PolicyConfig, seed: u64) -> Result<Self> {
        let params = PolicyParams::init(policy, rng::derive_seed(seed, &[INIT_TAG]))?;
        let reference = params.snapshot_reference();
        let adam = AdamState::new(params.num_params());
        Ok(Self {
            params,
            reference,
            adam,
            step: 0,
            steps_applied: 0,
            steps_skipped: 0,
            seed,
        })
    }

    pub fn reference_fingerprint(&self) -> String {
        self.reference.fingerprint()
    }
}

/// Draws `k` topologies for `task` and scores each one with the oracle.
pub fn rollout(
    task: &TaskSpec,
    probs: &EdgeProbMatrix,
    k: usize,
    seed: u64,
) -> Result<GroupRollout> {
    let group = sample_group(probs, k, seed)?;
    let rewards = group
        .topologies
        .iter()
        .enumerate()
        .map(|(s, t)| evaluate(task, t, rng::derive_seed(seed, &[REWARD_TAG, s as u64])))
        .collect::<Result<Vec<_>>>()?;
    GroupRollout::new(group, rewards)
}

/// Per-group loss under the configured estimator; `None` when the group is skipped.
enum GroupLoss<'a> {
    Grpo(GrpoLoss<'a>),
    Reinforce(ReinforceLoss<'a>),
}

impl ProbLoss for GroupLoss<'_> {
    fn evaluate(&self, p: &EdgeProbMatrix) -> Result<(f64, Vec<f64>)> {
        match self {
            GroupLoss::Grpo(l) => l.evaluate(p),
            GroupLoss::Reinforce(l) => l.evaluate(p),
        }
    }
}

/// Advantage table for the GRPO estimators, or `None` if the group carries no signal.
fn group_stats(
    estimator: Estimator,
    rollout: &GroupRollout,
    skip_uniform: bool,
) -> Result<Option<crate::grpo::EdgeStatsTable>> {
    if skip_uniform && rollout.is_uniform() {
        return Ok(None);
    }
    let stats = match estimator {
        Estimator::EdgeGrpo => edge_success_rates(rollout).and_then(|s| advantages(&s)),
        Estimator::GraphGrpo => graph_level_advantages(rollout),
        Estimator::Reinforce => unreachable!("reinforce has no advantage table"),
    };
    match stats {
        Ok(s) if s.entries.is_empty() => Ok(None),
        Ok(s) => Ok(Some(s)),
        Err(Error::NoUpdate) => Ok(None),
        Err(e) => Err(e),
    }
}

/// `dL/dlogit` for every entry of the probability matrix (zeros when the
/// group is skipped). Used to compare estimator noise at fixed parameters.
pub fn logit_contributions(
    estimator: Estimator,
    rollout: &GroupRollout,
    probs: &EdgeProbMatrix,
    p_ref: &EdgeProbMatrix,
    beta: f64,
    skip_uniform: bool,
) -> Result<Vec<f64>> {
    let n = probs.n_agents();
    let d_p = match estimator {
        Estimator::Reinforce => ReinforceLoss { rollout }.evaluate(probs)?.1,
        _ => match group_stats(estimator, rollout, skip_uniform)? {
            Some(stats) => {
                GrpoLoss {
                    p_ref,
                    stats: &stats,
                    beta,
                }
                .evaluate(probs)?
                .1
            }
            None => vec![0.0; n * n],
        },
    };
    Ok(logit_gradient(probs, &d_p))
}

struct GroupResult {
    reward_mean: f64,
    active_edges: usize,
    applied: Option<AppliedGroup>,
}

struct AppliedGroup {
    loss: f64,
    kl_term: f64,
    grad: Vec<f64>,
    /// `(mu, sigma, adv_min, adv_max)` for the GRPO estimators.
    stats: Option<(f64, f64, f64, f64)>,
}

/// Drives [`TrainState`] through the step schedule of one dataset.
pub struct Trainer<'a> {
    dataset: &'a DatasetSpec,
    cfg: TrainConfig,
    features: Vec<NodeFeatures>,
    ref_probs: Vec<EdgeProbMatrix>,
    state: TrainState,
}

impl<'a> Trainer<'a> {
    pub fn new(dataset: &'a DatasetSpec, cfg: TrainConfig, policy: PolicyConfig) -> Result<Self> {
        let state = TrainState::init(policy, cfg.seed)?;
        Self::resume(dataset, cfg, state)
    }

    /// Continues from a restored state; the state must match the config.
    pub fn resume(dataset: &'a DatasetSpec, cfg: TrainConfig, state: TrainState) -> Result<Self> {
        cfg.validate()?;
        state.params.config.validate()?;
        if dataset.tasks.is_empty() {
            return Err(Error::Config("dataset has no tasks".into()));
        }
        if state.seed != cfg.seed {
            return Err(Error::Checkpoint(format!(
                "checkpoint seed {} differs from config seed {}",
                state.seed, cfg.seed
            )));
        }
        if state.adam.m.len() != state.params.num_params()
            || state.params.config != state.reference.config
        {
            return Err(Error::Checkpoint(
                "optimizer or reference shape does not match parameters".into(),
            ));
        }
        let dim = state.params.embed_dim();
        let features = dataset
            .tasks
            .iter()
            .map(|t| encode_nodes(&t.team, dim))
            .collect::<Result<Vec<_>>>()?;
        let ref_probs = features
            .iter()
            .map(|x| policy_probabilities(&state.reference, x))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dataset,
            cfg,
            features,
            ref_probs,
            state,
        })
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.dataset.tasks.len().div_ceil(self.cfg.batch_size)
    }

    pub fn total_steps(&self) -> u64 {
        let full = (self.cfg.epochs * self.steps_per_epoch()) as u64;
        self.cfg.max_steps.map_or(full, |m| full.min(m as u64))
    }

    pub fn is_done(&self) -> bool {
        self.state.step >= self.total_steps()
    }

    /// Task indices of step `step` (zero-based) and its epoch.
    fn batch_for(&self, step: u64) -> (usize, Vec<usize>) {
        let spe = self.steps_per_epoch() as u64;
        let epoch = (step / spe) as usize;
        let pos = (step % spe) as usize;
        let mut order: Vec<usize> = (0..self.dataset.tasks.len()).collect();
        order.shuffle(&mut rng::stream(
            self.cfg.seed,
            &[SHUFFLE_TAG, epoch as u64],
        ));
        let start = pos * self.cfg.batch_size;
        let end = (start + self.cfg.batch_size).min(order.len());
        (epoch, order[start..end].to_vec())
    }

    fn run_group(&self, step: u64, task_idx: usize) -> Result<GroupResult> {
        let task = &self.dataset.tasks[task_idx];
        let x = &self.features[task_idx];
        let p_ref = &self.ref_probs[task_idx];
        let params = &self.state.params;
        let probs = policy_probabilities(params, x)?;
        let seed = rng::derive_seed(self.cfg.seed, &[GROUP_TAG, step, task_idx as u64]);
        let rollout = rollout(task, &probs, self.cfg.group_size, seed)?;
        let active_edges = {
            let mut seen = crate::graph::Topology::empty(task.n_agents());
            for t in &rollout.group.topologies {
                for e in t.edge_list() {
                    seen.set(e, true);
                }
            }
            seen.edge_count()
        };
        let reward_mean = rollout.reward_mean();
        let applied = match self.cfg.estimator {
            Estimator::Reinforce => {
                let g = loss_gradient_features(
                    params,
                    x,
                    &GroupLoss::Reinforce(ReinforceLoss { rollout: &rollout }),
                )?;
                Some(AppliedGroup {
                    loss: g.value,
                    kl_term: 0.0,
                    grad: g.grad.to_flat(),
                    stats: None,
                })
            }
            est => match group_stats(est, &rollout, self.cfg.skip_uniform_reward_batches)? {
                None => None,
                Some(stats) => {
                    let loss = GrpoLoss {
                        p_ref,
                        stats: &stats,
                        beta: self.cfg.beta,
                    };
                    let parts = loss.parts(&probs)?;
                    let g = loss_gradient_features(params, x, &GroupLoss::Grpo(loss))?;
                    let (lo, hi) = stats.advantage_range().unwrap_or((0.0, 0.0));
                    Some(AppliedGroup {
                        loss: g.value,
                        kl_term: parts.kl_term,
                        grad: g.grad.to_flat(),
                        stats: Some((stats.mu, stats.sigma, lo, hi)),
                    })
                }
            },
        };
        Ok(GroupResult {
            reward_mean,
            active_edges,
            applied,
        })
    }

    /// Runs one step and returns its metrics record.
    pub fn step(&mut self) -> Result<StepMetrics> {
        if self.is_done() {
            return Err(Error::Config("training schedule is exhausted".into()));
        }
        let step = self.state.step;
        let (epoch, batch) = self.batch_for(step);
        let this = &*self;
        let results = batch
            .par_iter()
            .map(|&i| this.run_group(step, i))
            .collect::<Result<Vec<_>>>()?;

        let task_ids: Vec<String> = batch
            .iter()
            .map(|&i| self.dataset.tasks[i].task_id.clone())
            .collect();
        let n_groups = results.len() as f64;
        let applied: Vec<&AppliedGroup> =
            results.iter().filter_map(|r| r.applied.as_ref()).collect();
        let mean_of = |f: &dyn Fn(&AppliedGroup) -> Option<f64>| -> Option<f64> {
            let vals: Vec<f64> = applied.iter().filter_map(|a| f(a)).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        };
        let mut record = StepMetrics {
            step: step + 1,
            epoch,
            task_ids,
            reward_mean: results.iter().map(|r| r.reward_mean).sum::<f64>() / n_groups,
            e_batch_size: results.iter().map(|r| r.active_edges as f64).sum::<f64>() / n_groups,
            mu_s: mean_of(&|a| a.stats.map(|s| s.0)),
            sigma_s: mean_of(&|a| a.stats.map(|s| s.1)),
            adv_min: applied
                .iter()
                .filter_map(|a| a.stats.map(|s| s.2))
                .reduce(f64::min),
            adv_max: applied
                .iter()
                .filter_map(|a| a.stats.map(|s| s.3))
                .reduce(f64::max),
            loss: mean_of(&|a| Some(a.loss)),
            kl_term: mean_of(&|a| Some(a.kl_term)),
            grad_norm: 0.0,
            skipped: applied.is_empty(),
        };

        if !applied.is_empty() {
            let mut grad = vec![0.0; self.state.params.num_params()];
            for a in &applied {
                for (g, v) in grad.iter_mut().zip(&a.grad) {
                    *g += v;
                }
            }
            let scale = 1.0 / applied.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            record.grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            let loss = record.loss.unwrap_or(f64::NAN);
            if !loss.is_finite() || !record.grad_norm.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at step {} (epoch {epoch}, tasks {:?}): loss={loss}, grad_norm={}",
                    step + 1,
                    record.task_ids,
                    record.grad_norm
                )));
            }
            let mut flat = self.state.params.to_flat();
            self.state
                .adam
                .step(&self.cfg.adam, self.cfg.learning_rate, &mut flat, &grad)?;
            self.state.params.set_flat(&flat)?;
            if !self.state.params.all_finite() {
                return Err(Error::Numeric(format!(
                    "parameters became non-finite at step {}",
                    step + 1
                )));
            }
            self.state.steps_applied += 1;
        } else {
            self.state.steps_skipped += 1;
        }
        self.state.step += 1;
        Ok(record)
    }

    /// Runs to the end of the schedule, handing each record to `on_step`.
    pub fn run(
        &mut self,
        mut on_step: impl FnMut(&StepMetrics, &TrainState) -> Result<()>,
    ) -> Result<()> {
        while !self.is_done() {
            let m = self.step()?;
            on_step(&m, &self.state)?;
        }
        Ok(())
    }
}

/// Trains from scratch and returns the final state with every metrics record.
pub fn train(
    dataset: &DatasetSpec,
    cfg: &TrainConfig,
    policy: &PolicyConfig,
) -> Result<(TrainState, Vec<StepMetrics>)> {
    let mut trainer = Trainer::new(dataset, cfg.clone(), policy.clone())?;
    let mut log = Vec::new();
    trainer.run(|m, _| {
        log.push(m.clone());
        Ok(())
    })?;
    Ok((trainer.into_state(), log))
}
