//! Forward and reverse passes of the policy network.
//!
//! Each GAT layer works over the fully connected graph (self included):
//!
//! ```text
//! z_i   = h_i P                      (per head)
//! u_ij  = a_recv . z_i + a_attd . z_j
//! alpha = softmax_j(leaky(u_ij))
//! m_i   = mean_heads(sum_j alpha_ij z_j)
//! out_i = sigmoid(m_i) [+ h_i when residual]
//! ```
//!
//! The edge scorer is `logit_ij = s_i W s_j^T`, `p_ij = sigmoid(logit_ij)` for
//! `j < i` and exactly 0 elsewhere, where `s = (H - 1/2) + x` with
//! `input_skip` and `s = H` without. Backward passes are written per layer.

use ndarray::{Array2, ArrayView1, Axis};

use crate::error::{Error, Result};
use crate::graph::{AgentTeam, EdgeProbMatrix};

use super::encoder::{encode_nodes, NodeFeatures};
use super::params::{GatLayer, PolicyParams};

/// Context-aware node embeddings `H`, one row per agent.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeEmbeddings(pub Array2<f64>);

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

fn leaky_grad(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        slope
    }
}

struct HeadCache {
    z: Array2<f64>,
    u: Array2<f64>,
    alpha: Array2<f64>,
}

struct LayerCache {
    input: Array2<f64>,
    heads: Vec<HeadCache>,
    /// `sigmoid(m)`, before any residual add.
    activated: Array2<f64>,
}

fn layer_forward(layer: &GatLayer, input: &Array2<f64>) -> LayerCache {
    let n = input.nrows();
    let d = input.ncols();
    let mut m = Array2::<f64>::zeros((n, d));
    let mut heads = Vec::with_capacity(layer.heads.len());
    for head in &layer.heads {
        let z = input.dot(&head.proj);
        let recv = z.dot(&head.attn.slice(ndarray::s![..d]));
        let attd = z.dot(&head.attn.slice(ndarray::s![d..]));
        let u = Array2::from_shape_fn((n, n), |(i, j)| recv[i] + attd[j]);
        let mut alpha = u.mapv(|v| leaky(v, layer.leaky_slope));
        for mut row in alpha.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            row.mapv_inplace(|v| (v - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|v| v / sum);
        }
        m.scaled_add(1.0 / layer.heads.len() as f64, &alpha.dot(&z));
        heads.push(HeadCache { z, u, alpha });
    }
    let activated = m.mapv(sigmoid);
    LayerCache {
        input: input.clone(),
        heads,
        activated,
    }
}

/// Backward through one layer; accumulates into `grad_layer`, returns dL/d(input).
fn layer_backward(
    layer: &GatLayer,
    cache: &LayerCache,
    d_out: &Array2<f64>,
    residual: bool,
    grad_layer: &mut GatLayer,
) -> Array2<f64> {
    let d = cache.input.ncols();
    let d_m = d_out * &cache.activated.mapv(|s| s * (1.0 - s));
    let mut d_input = if residual {
        d_out.clone()
    } else {
        Array2::zeros(cache.input.raw_dim())
    };
    let scale = 1.0 / layer.heads.len() as f64;
    for ((head, hc), ghead) in layer
        .heads
        .iter()
        .zip(&cache.heads)
        .zip(&mut grad_layer.heads)
    {
        let d_mh = &d_m * scale;
        // aggregation m = alpha z
        let mut d_z = hc.alpha.t().dot(&d_mh);
        let d_alpha = d_mh.dot(&hc.z.t());
        // row softmax
        let mut d_u = Array2::<f64>::zeros(hc.alpha.raw_dim());
        for i in 0..hc.alpha.nrows() {
            let a = hc.alpha.row(i);
            let da = d_alpha.row(i);
            let inner = a.dot(&da);
            for j in 0..hc.alpha.ncols() {
                d_u[[i, j]] = a[j] * (da[j] - inner) * leaky_grad(hc.u[[i, j]], layer.leaky_slope);
            }
        }
        let d_recv = d_u.sum_axis(Axis(1));
        let d_attd = d_u.sum_axis(Axis(0));
        let a_recv = head.attn.slice(ndarray::s![..d]);
        let a_attd = head.attn.slice(ndarray::s![d..]);
        ghead
            .attn
            .slice_mut(ndarray::s![..d])
            .scaled_add(1.0, &hc.z.t().dot(&d_recv));
        ghead
            .attn
            .slice_mut(ndarray::s![d..])
            .scaled_add(1.0, &hc.z.t().dot(&d_attd));
        d_z += &outer(&d_recv.view(), &a_recv);
        d_z += &outer(&d_attd.view(), &a_attd);
        ghead.proj.scaled_add(1.0, &cache.input.t().dot(&d_z));
        d_input += &d_z.dot(&head.proj.t());
    }
    d_input
}

fn outer(a: &ArrayView1<f64>, b: &ArrayView1<f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j])
}

fn check_dims(params: &PolicyParams, x: &NodeFeatures) -> Result<()> {
    if x.dim() != params.embed_dim() {
        return Err(Error::Dimension(format!(
            "features have width {}, policy expects {}",
            x.dim(),
            params.embed_dim()
        )));
    }
    if params.layers.is_empty() {
        return Err(Error::Config("policy has no GAT layers".into()));
    }
    Ok(())
}

fn ensure_finite(m: &Array2<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite values in {what}")))
    }
}

fn forward_cached(
    params: &PolicyParams,
    x: &NodeFeatures,
) -> Result<(Vec<LayerCache>, Array2<f64>)> {
    check_dims(params, x)?;
    let residual = params.config.residual;
    let mut caches = Vec::with_capacity(params.layers.len());
    let mut h = x.0.clone();
    for (l, layer) in params.layers.iter().enumerate() {
        let cache = layer_forward(layer, &h);
        h = if residual {
            &cache.activated + &cache.input
        } else {
            cache.activated.clone()
        };
        ensure_finite(&h, &format!("GAT layer {l} output"))?;
        caches.push(cache);
    }
    Ok((caches, h))
}

/// Runs every GAT layer over the fully connected substrate.
pub fn gat_forward(params: &PolicyParams, x: &NodeFeatures) -> Result<NodeEmbeddings> {
    forward_cached(params, x).map(|(_, h)| NodeEmbeddings(h))
}

/// Edge logits `H W H^T` (dense; callers apply the mask).
fn edge_logits(bilinear: &Array2<f64>, h: &Array2<f64>) -> Array2<f64> {
    h.dot(bilinear).dot(&h.t())
}

/// Masked bilinear edge probabilities.
pub fn edge_probabilities(params: &PolicyParams, h: &NodeEmbeddings) -> Result<EdgeProbMatrix> {
    let h = &h.0;
    if h.ncols() != params.embed_dim() {
        return Err(Error::Dimension(format!(
            "embeddings have width {}, bilinear form is {}",
            h.ncols(),
            params.embed_dim()
        )));
    }
    ensure_finite(h, "node embeddings")?;
    let n = h.nrows();
    let logits = edge_logits(&params.bilinear, h);
    let mut probs = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..i {
            probs[i * n + j] = sigmoid(logits[[i, j]]);
        }
    }
    EdgeProbMatrix::new(n, probs)
}

/// Rows fed to the edge scorer: the GAT output, or under `input_skip` the
/// centered output plus the features.
pub fn scoring_embeddings(params: &PolicyParams, x: &NodeFeatures) -> Result<NodeEmbeddings> {
    let (_, h) = forward_cached(params, x)?;
    Ok(NodeEmbeddings(skip(params, x, h)))
}

fn skip(params: &PolicyParams, x: &NodeFeatures, h: Array2<f64>) -> Array2<f64> {
    if params.config.input_skip {
        h - 0.5 + &x.0
    } else {
        h
    }
}

/// GAT and edge scorer in one call.
pub fn policy_probabilities(params: &PolicyParams, x: &NodeFeatures) -> Result<EdgeProbMatrix> {
    edge_probabilities(params, &scoring_embeddings(params, x)?)
}

/// A scalar loss over the edge-probability matrix with its gradient.
pub trait ProbLoss {
    /// Loss value and `dL/dP` as a dense row-major `n x n` buffer.
    fn evaluate(&self, p: &EdgeProbMatrix) -> Result<(f64, Vec<f64>)>;
}

/// Loss value, parameter gradient and the probabilities it was evaluated at.
#[derive(Debug, Clone)]
pub struct LossGradient {
    pub value: f64,
    pub grad: PolicyParams,
    pub probs: EdgeProbMatrix,
}

/// Gradient of a loss through the edge scorer alone, for fixed embeddings.
#[derive(Debug, Clone)]
pub struct ScorerGradient {
    pub value: f64,
    pub probs: EdgeProbMatrix,
    /// dL/dW
    pub bilinear: Array2<f64>,
    /// dL/dH
    pub embeddings: Array2<f64>,
}

/// Backward through `p_ij = sigmoid(h_i W h_j^T)` with the DAG mask.
pub fn edge_scorer_gradient(
    bilinear: &Array2<f64>,
    h: &NodeEmbeddings,
    loss: &dyn ProbLoss,
) -> Result<ScorerGradient> {
    let h = &h.0;
    ensure_finite(h, "node embeddings")?;
    let n = h.nrows();
    let logits = edge_logits(bilinear, h);
    let mut probs = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..i {
            probs[i * n + j] = sigmoid(logits[[i, j]]);
        }
    }
    let probs = EdgeProbMatrix::new(n, probs)?;
    let (value, d_p) = loss.evaluate(&probs)?;
    if !value.is_finite() {
        return Err(Error::Numeric(format!("loss is {value}")));
    }
    let d_logit = Array2::from_shape_vec((n, n), logit_gradient(&probs, &d_p))
        .map_err(|e| Error::Dimension(e.to_string()))?;
    let d_bilinear = h.t().dot(&d_logit).dot(h);
    let d_h = d_logit.dot(h).dot(&bilinear.t()) + d_logit.t().dot(h).dot(bilinear);
    ensure_finite(&d_h, "edge scorer backward")?;
    Ok(ScorerGradient {
        value,
        probs,
        bilinear: d_bilinear,
        embeddings: d_h,
    })
}

/// Exact reverse-mode gradient of `loss(edge_probabilities(gat_forward(x)))`.
/// Features are constants: the encoder is frozen.
pub fn loss_gradient_features(
    params: &PolicyParams,
    x: &NodeFeatures,
    loss: &dyn ProbLoss,
) -> Result<LossGradient> {
    let (caches, h) = forward_cached(params, x)?;
    // the skip adds a constant, so dL/dH passes through unchanged
    let scorer = edge_scorer_gradient(&params.bilinear, &NodeEmbeddings(skip(params, x, h)), loss)?;
    let mut grad = params.zeros_like();
    grad.bilinear = scorer.bilinear;
    let mut d_h = scorer.embeddings;
    let residual = params.config.residual;
    for (l, (layer, cache)) in params.layers.iter().zip(&caches).enumerate().rev() {
        d_h = layer_backward(layer, cache, &d_h, residual, &mut grad.layers[l]);
        ensure_finite(&d_h, &format!("GAT layer {l} backward"))?;
    }
    Ok(LossGradient {
        value: scorer.value,
        grad,
        probs: scorer.probs,
    })
}

/// [`loss_gradient_features`] starting from the team text.
pub fn loss_gradient(
    params: &PolicyParams,
    team: &AgentTeam,
    loss: &dyn ProbLoss,
) -> Result<LossGradient> {
    let x = encode_nodes(team, params.embed_dim())?;
    loss_gradient_features(params, &x, loss)
}

/// `dL/dlogit` for every admissible edge given `dL/dP`, dense `n x n`.
pub fn logit_gradient(probs: &EdgeProbMatrix, d_p: &[f64]) -> Vec<f64> {
    let n = probs.n_agents();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..i {
            let p = probs.at(i, j);
            out[i * n + j] = d_p[i * n + j] * p * (1.0 - p);
        }
    }
    out
}
