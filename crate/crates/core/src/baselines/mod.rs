//! Comparison models: neighborhood CF over cosine similarity, and the GMF,
//! MLP and NMF neural scorers trained with the same loop as CrossGR.

mod cf;
mod neural;

pub use cf::{cosine_similarity, ItemCf, UserCf, DEFAULT_K_NN};
pub use neural::{NeuralBaseline, NeuralKind, NeuralParams};
