//! Frozen hashed bag-of-tokens node encoder.
//!
//! Each agent's text is its role followed by the query. Tokens are the
//! lowercase alphanumeric runs; every token adds `±1` to bucket
//! `fnv1a64(token) mod D`, with the sign taken from the hash's top bit.
//! Rows are L2-normalized; a row with no surviving mass stays zero.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::graph::AgentTeam;
use crate::rng::fnv1a64;

/// Smallest embedding width the encoder accepts.
pub const MIN_EMBED_DIM: usize = 8;

/// Per-agent input features, one unit-norm row per agent.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFeatures(pub Array2<f64>);

impl NodeFeatures {
    pub fn n_agents(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }
}

fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Hashed embedding of one string.
pub fn encode_text(text: &str, embed_dim: usize) -> Vec<f64> {
    let mut row = vec![0.0; embed_dim];
    for tok in tokens(text) {
        let h = fnv1a64(tok.as_bytes());
        let bucket = (h % embed_dim as u64) as usize;
        row[bucket] += if h >> 63 == 1 { -1.0 } else { 1.0 };
    }
    let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        row.iter_mut().for_each(|v| *v /= norm);
    }
    row
}

/// Encodes `role ⊕ query` for every agent.
pub fn encode_nodes(team: &AgentTeam, embed_dim: usize) -> Result<NodeFeatures> {
    if embed_dim < MIN_EMBED_DIM {
        return Err(Error::Config(format!(
            "embed_dim must be >= {MIN_EMBED_DIM}, got {embed_dim}"
        )));
    }
    let n = team.n_agents();
    let mut x = Array2::zeros((n, embed_dim));
    for (i, role) in team.roles().iter().enumerate() {
        let row = encode_text(&format!("{role} {}", team.query()), embed_dim);
        x.row_mut(i).iter_mut().zip(row).for_each(|(d, s)| *d = s);
    }
    Ok(NodeFeatures(x))
}
