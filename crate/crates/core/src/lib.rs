//! Cross-market recommendation with a graph isomorphism network over a merged
//! bipartite user-item graph, plus neural and neighborhood baselines and
//! leave-one-out ranking evaluation.

pub mod baselines;
pub mod data;
pub mod error;
pub mod eval;
pub mod graph;
pub mod kernel;
pub mod model;
pub mod registry;
pub mod train;

pub use error::{Error, Result};
