use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::agent::SacConfig;
use crate::envsim::{make_env, Environment, PENDULUM_ID};

/// Name of the only supported random number generator; recorded so a
/// config states how its seed is expanded.
pub const RNG_NAME: &str = "chacha8";

/// Everything a training run depends on. Every field is explicit in the
/// serialized form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env_id: String,
    pub seed: u64,
    pub rng: String,
    pub total_steps: u64,
    /// Uniformly random actions and no updates for this many steps.
    pub warmup_steps: u64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub log_interval: u64,
    /// Deterministic evaluation every this many steps; 0 evaluates only at
    /// the end.
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub checkpoint_interval: u64,
    /// Accept a target entropy above the log-volume of the action box with a
    /// warning instead of an error.
    pub allow_entropy_above_bound: bool,
    pub agent: SacConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env_id: PENDULUM_ID.to_string(),
            seed: 0,
            rng: RNG_NAME.to_string(),
            total_steps: 100_000,
            warmup_steps: 1000,
            batch_size: 256,
            replay_capacity: 100_000,
            log_interval: 1000,
            eval_interval: 10_000,
            eval_episodes: 10,
            checkpoint_interval: 10_000,
            allow_entropy_above_bound: false,
            agent: SacConfig::default(),
        }
    }
}

impl RunConfig {
    /// Checks every field. Returns warnings that do not stop a run.
    pub fn validate(&self) -> Result<Vec<String>, TrainError> {
        let fail = |field: &str, msg: String| Err(TrainError::Config { field: field.to_string(), message: msg });
        let env = make_env(&self.env_id).map_err(|e| TrainError::Config {
            field: "env_id".into(),
            message: e.to_string(),
        })?;
        if self.rng != RNG_NAME {
            return fail("rng", format!("unsupported generator {:?}; only {RNG_NAME:?} is available", self.rng));
        }
        if self.batch_size == 0 {
            return fail("batch_size", "must be positive".into());
        }
        if self.replay_capacity == 0 {
            return fail("replay_capacity", "must be positive".into());
        }
        if self.log_interval == 0 {
            return fail("log_interval", "must be positive".into());
        }
        if self.eval_episodes == 0 {
            return fail("eval_episodes", "must be at least 1".into());
        }
        if self.checkpoint_interval == 0 {
            return fail("checkpoint_interval", "must be positive".into());
        }
        self.agent.validate().map_err(|e| TrainError::Config {
            field: "agent".into(),
            message: e.to_string(),
        })?;

        let mut warnings = Vec::new();
        let bound = env.action_space().max_entropy();
        if self.agent.target_entropy > bound {
            let message = format!(
                "target entropy {} exceeds the largest differential entropy on the action box, {bound:.4} nats; \
                 the constraint cannot be met",
                self.agent.target_entropy
            );
            if self.allow_entropy_above_bound {
                warnings.push(message);
            } else {
                return fail("agent.target_entropy", format!("{message} (set allow_entropy_above_bound to proceed)"));
            }
        }
        Ok(warnings)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path).map_err(|e| TrainError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| TrainError::Config {
            field: path.display().to_string(),
            message: e.to_string(),
        })
    }
}
