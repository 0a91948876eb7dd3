//! Maximum-entropy actor-critic with a target-entropy-aware soft Bellman
//! backup.
//!
//! - [`diffcore`]: tape-based reverse-mode autodiff, MLPs, Adam and SGD.
//! - [`tabular`]: exact finite-horizon soft-Q recursion and a per-timestep
//!   Lagrangian dual solver checked against a brute-force primal search.
//! - [`envsim`]: the pendulum swing-up task.
//! - [`agent`]: soft actor-critic with selectable Bellman backup.
//! - [`trainer`]: replay buffer, training loop, evaluation and the paired
//!   backup-variant experiment.

pub mod agent;
pub mod diffcore;
pub mod envsim;
pub mod tabular;
pub mod trainer;

mod variant;

pub use variant::BackupVariant;
