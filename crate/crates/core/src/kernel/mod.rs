//! Minimal differentiable kernel: dense matrices, a reverse-mode tape with the
//! handful of primitives the models need, Adam, finite-difference checking and
//! a binary parameter checkpoint.

pub mod checkpoint;
mod gradcheck;
mod matrix;
mod params;
mod tape;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use matrix::Matrix;
pub use params::{AdamConfig, Gradients, Param, ParamId, ParamStore};
pub use tape::{sigmoid, softplus, Tape, Var, SIGMOID_MAX, SIGMOID_MIN};
