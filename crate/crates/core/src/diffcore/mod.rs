//! Dense reverse-mode automatic differentiation over `f64` tensors.
//!
//! A [`Graph`] is a tape rebuilt for every loss evaluation. Parameters live in a
//! [`ParamTree`] outside the tape and are bound into it by path, so gradients
//! come back keyed by the same paths the optimizers update.

mod gradcheck;
mod graph;
mod mlp;
mod optim;
mod params;
mod tensor;

use std::collections::BTreeMap;

use thiserror::Error;

pub use gradcheck::{check_gradients, relative_error, GradientCheck, FD_STEP, RELATIVE_FLOOR};
pub use graph::{backward, Gradients, Graph, Var};
pub use mlp::{bias_path, forward_mlp, hidden_relu, init_mlp, weight_path, Activation, ParamMode};
pub use optim::{OptimizerKind, OptimizerState};
pub use params::{ParamTree, CHECKPOINT_VERSION};
pub use tensor::Tensor;

/// Gradients keyed by parameter path.
pub type GradMap = BTreeMap<String, Tensor>;

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Json(#[from] serde_json::Error),
}
