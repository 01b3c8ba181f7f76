//! Policy parameters: GAT layers plus the bilinear edge scorer.

use ndarray::{Array1, Array2};
use rand::distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng;

/// Shape and fixed hyperparameters of the policy network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub embed_dim: usize,
    pub layer_count: usize,
    pub heads: usize,
    pub leaky_slope: f64,
    /// Add each layer's input to its activated output.
    pub residual: bool,
    /// Score edges on `(GAT(x) - 1/2) + x` instead of `GAT(x)`. Attention
    /// scores `a_recv.z_i + a_attd.z_j` are softmaxed over `j`, so the
    /// receiver term cancels (up to the leaky kink) and every node aggregates
    /// nearly the same mixture: without the skip all rows of `H` start out
    /// almost equal. Centering keeps the shared sigmoid offset from
    /// dominating every logit.
    pub input_skip: bool,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            layer_count: 3,
            heads: 1,
            leaky_slope: 0.2,
            residual: false,
            input_skip: true,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        // The text encoder needs `MIN_EMBED_DIM` dimensions; caller-supplied features may be narrower.
        if self.embed_dim == 0 {
            return Err(Error::Config("embed_dim must be >= 1".into()));
        }
        if self.layer_count == 0 {
            return Err(Error::Config("layer_count must be >= 1".into()));
        }
        if self.heads == 0 {
            return Err(Error::Config("heads must be >= 1".into()));
        }
        if !self.leaky_slope.is_finite() {
            return Err(Error::Config("leaky_slope must be finite".into()));
        }
        Ok(())
    }
}

/// One attention head: `D x D` projection and a `2D` attention vector whose
/// first half scores the receiving node and second half the attended node.
#[derive(Debug, Clone, PartialEq)]
pub struct GatHead {
    pub proj: Array2<f64>,
    pub attn: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatLayer {
    pub heads: Vec<GatHead>,
    pub leaky_slope: f64,
}

/// Full trainable parameter set. Gradients share this shape.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub config: PolicyConfig,
    pub layers: Vec<GatLayer>,
    pub bilinear: Array2<f64>,
    /// Seed the parameters were initialized from.
    pub seed: u64,
}

impl PolicyParams {
    /// Uniform init in `[-1/sqrt(D), 1/sqrt(D)]`.
    pub fn init(config: PolicyConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let bound = 1.0 / (d as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound)
            .map_err(|e| Error::Config(format!("bad init bound: {e}")))?;
        let mut rng = rng::stream(seed, &[0x5eed]);
        let mut draw_mat =
            |rows, cols| Array2::from_shape_simple_fn((rows, cols), || dist.sample(&mut rng));
        let mut layers = Vec::with_capacity(config.layer_count);
        for _ in 0..config.layer_count {
            let heads = (0..config.heads)
                .map(|_| {
                    let proj = draw_mat(d, d);
                    let attn = draw_mat(1, 2 * d)
                        .into_shape_with_order(2 * d)
                        .expect("row vector");
                    GatHead { proj, attn }
                })
                .collect();
            layers.push(GatLayer {
                heads,
                leaky_slope: config.leaky_slope,
            });
        }
        let bilinear = draw_mat(d, d);
        Ok(Self {
            config,
            layers,
            bilinear,
            seed,
        })
    }

    /// Same shape, every entry zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.tensors_mut().into_iter().for_each(|t| t.fill(0.0));
        z
    }

    /// Deep, independent copy used as the frozen reference policy.
    pub fn snapshot_reference(&self) -> Self {
        self.clone()
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    /// Tensors in canonical order: per layer, per head `proj` then `attn`; then `bilinear`.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for layer in &self.layers {
            for head in &layer.heads {
                out.push(head.proj.as_slice().expect("standard layout"));
                out.push(head.attn.as_slice().expect("standard layout"));
            }
        }
        out.push(self.bilinear.as_slice().expect("standard layout"));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            for head in &mut layer.heads {
                out.push(head.proj.as_slice_mut().expect("standard layout"));
                out.push(head.attn.as_slice_mut().expect("standard layout"));
            }
        }
        out.push(self.bilinear.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Dimension(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Euclidean norm over every parameter.
    pub fn l2_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn l2_distance(&self, other: &Self) -> f64 {
        self.to_flat()
            .iter()
            .zip(other.to_flat())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// SHA-256 over the configuration and the little-endian parameter bytes.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_vec(&self.config).expect("config serializes"));
        hasher.update(self.seed.to_le_bytes());
        for t in self.tensors() {
            for v in t {
                hasher.update(v.to_le_bytes());
            }
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded_and_bounded() {
        let cfg = PolicyConfig::default();
        let a = PolicyParams::init(cfg.clone(), 3).unwrap();
        let b = PolicyParams::init(cfg.clone(), 3).unwrap();
        let c = PolicyParams::init(cfg, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let bound = 1.0 / 32f64.sqrt();
        assert!(a.to_flat().iter().all(|v| v.abs() <= bound));
        assert_eq!(a.num_params(), 3 * (32 * 32 + 64) + 32 * 32);
    }

    #[test]
    fn snapshot_is_independent() {
        let mut live = PolicyParams::init(PolicyConfig::default(), 1).unwrap();
        let snap = live.snapshot_reference();
        live.bilinear[[0, 0]] += 1.0;
        assert_ne!(live.bilinear, snap.bilinear);
        assert_eq!(snap.snapshot_reference(), snap);
        assert_ne!(live.fingerprint(), snap.fingerprint());
    }

    #[test]
    fn flat_round_trip() {
        let p = PolicyParams::init(
            PolicyConfig {
                embed_dim: 8,
                heads: 2,
                ..Default::default()
            },
            9,
        )
        .unwrap();
        let mut q = p.zeros_like();
        q.set_flat(&p.to_flat()).unwrap();
        assert_eq!(p, q);
        assert!(q.set_flat(&[0.0]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(PolicyConfig {
            layer_count: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(PolicyConfig {
            embed_dim: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(PolicyConfig {
            heads: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
