//! The topology policy: frozen node encoder, GAT message passing, and the
//! DAG-masked bilinear edge scorer, with exact parameter gradients.

pub mod encoder;
pub mod network;
pub mod params;

pub use encoder::{encode_nodes, encode_text, NodeFeatures};
pub use network::{
    edge_probabilities, edge_scorer_gradient, gat_forward, logit_gradient, loss_gradient,
    loss_gradient_features, policy_probabilities, scoring_embeddings, sigmoid, LossGradient,
    NodeEmbeddings, ProbLoss, ScorerGradient,
};
pub use params::{GatHead, GatLayer, PolicyConfig, PolicyParams};
