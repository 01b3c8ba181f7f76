//! JSON checkpoints. Tensors are stored flattened in row-major order in the
//! fixed parameter order of [`PolicyParams::tensors`]; floats round-trip
//! exactly, so a reloaded run continues bit-identically.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{PolicyConfig, PolicyParams};

use super::adam::AdamState;
use super::TrainState;

pub const CHECKPOINT_FORMAT: &str = "graph-grpo-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format: String,
    version: u32,
    policy: PolicyConfig,
    init_seed: u64,
    seed: u64,
    step: u64,
    steps_applied: u64,
    steps_skipped: u64,
    params: Vec<f64>,
    reference: Vec<f64>,
    reference_sha256: String,
    adam: AdamState,
}

fn restore(
    config: &PolicyConfig,
    init_seed: u64,
    flat: &[f64],
    what: &str,
) -> Result<PolicyParams> {
    let mut p = PolicyParams::init(config.clone(), init_seed)?;
    if flat.len() != p.num_params() {
        return Err(Error::Checkpoint(format!(
            "{what} holds {} values but embed_dim={} layer_count={} heads={} needs {}",
            flat.len(),
            config.embed_dim,
            config.layer_count,
            config.heads,
            p.num_params()
        )));
    }
    p.set_flat(flat)?;
    Ok(p)
}

impl TrainState {
    pub fn to_checkpoint_json(&self) -> Result<String> {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            policy: self.params.config.clone(),
            init_seed: self.params.seed,
            seed: self.seed,
            step: self.step,
            steps_applied: self.steps_applied,
            steps_skipped: self.steps_skipped,
            params: self.params.to_flat(),
            reference: self.reference.to_flat(),
            reference_sha256: self.reference.fingerprint(),
            adam: self.adam.clone(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_checkpoint_json(s: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(s)
            .map_err(|e| Error::Checkpoint(format!("unreadable checkpoint: {e}")))?;
        if file.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "not a checkpoint (format '{}')",
                file.format
            )));
        }
        if file.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                file.version
            )));
        }
        file.policy.validate()?;
        let params = restore(&file.policy, file.init_seed, &file.params, "params")?;
        let reference = restore(&file.policy, file.init_seed, &file.reference, "reference")?;
        if reference.fingerprint() != file.reference_sha256 {
            return Err(Error::Checkpoint(
                "reference parameters do not match their recorded hash".into(),
            ));
        }
        let n = params.num_params();
        if file.adam.m.len() != n || file.adam.v.len() != n {
            return Err(Error::Checkpoint(format!(
                "optimizer state has wrong length (expected {n})"
            )));
        }
        if file.steps_applied + file.steps_skipped != file.step {
            return Err(Error::Checkpoint("step counters are inconsistent".into()));
        }
        Ok(Self {
            params,
            reference,
            adam: file.adam,
            step: file.step,
            steps_applied: file.steps_applied,
            steps_skipped: file.steps_skipped,
            seed: file.seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_json(&s)
    }
}
