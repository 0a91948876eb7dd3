//! Soft actor-critic with a selectable soft Bellman backup.
//!
//! Parameters for every network live in one [`ParamTree`]:
//!
//! | path prefix | contents |
//! |---|---|
//! | `actor/` | observation → (mean, log std) |
//! | `critic/q1/`, `critic/q2/` | online critics on (observation, action) |
//! | `critic_target/q1/`, `critic_target/q2/` | polyak-averaged copies |
//! | `temperature/log_alpha` | scalar `log α` |
//!
//! One [`SacAgent::update`] runs critic, actor and temperature steps followed
//! by the target update, and commits only if every loss and gradient along the
//! way was finite.

mod losses;
mod policy;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffcore::{bias_path, hidden_relu, init_mlp, weight_path, Activation, DiffError, OptimizerState, ParamTree, Tensor};
use crate::envsim::ActionSpace;
use crate::BackupVariant;

pub use losses::{
    actor_loss, alpha, critic_loss, critic_targets, log_alpha, polyak_update, record_actor_loss, record_critic_loss,
    record_temperature_loss, temperature_loss, LossOutput,
};
pub use policy::{
    actor_head, log_prob_of_action, policy_sample, sample_action, standard_normal, PolicySample, LOG_STD_MAX, LOG_STD_MIN,
    TANH_EPS,
};

pub const ACTOR: &str = "actor";
pub const CRITIC: &str = "critic";
pub const CRITIC_Q1: &str = "critic/q1";
pub const CRITIC_Q2: &str = "critic/q2";
pub const TARGET_Q1: &str = "critic_target/q1";
pub const TARGET_Q2: &str = "critic_target/q2";
pub const LOG_ALPHA: &str = "temperature/log_alpha";

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("invalid agent configuration: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error(transparent)]
    Diff(DiffError),
}

impl From<DiffError> for AgentError {
    fn from(e: DiffError) -> Self {
        match e {
            DiffError::NonFinite(what) => AgentError::Diverged(format!("non-finite value in {what}")),
            other => AgentError::Diff(other),
        }
    }
}

/// Network widths shared by the actor and both critics.
#[derive(Clone, Debug, PartialEq)]
pub struct Networks {
    pub obs_dim: usize,
    pub action_dim: usize,
    pub hidden: Vec<usize>,
}

impl Networks {
    pub fn actor_widths(&self) -> Vec<usize> {
        let mut w = vec![self.obs_dim];
        w.extend(&self.hidden);
        w.push(2 * self.action_dim);
        w
    }

    pub fn critic_widths(&self) -> Vec<usize> {
        let mut w = vec![self.obs_dim + self.action_dim];
        w.extend(&self.hidden);
        w.push(1);
        w
    }

    pub fn activations(&self) -> Vec<Activation> {
        hidden_relu(self.hidden.len() + 1)
    }

    pub fn critic_activations(&self) -> Vec<Activation> {
        self.activations()
    }

    /// Every parameter path with its shape.
    pub fn expected_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = vec![(LOG_ALPHA.to_string(), vec![1])];
        let prefixes = [(ACTOR, self.actor_widths()), (CRITIC_Q1, self.critic_widths()), (CRITIC_Q2, self.critic_widths()), (TARGET_Q1, self.critic_widths()), (TARGET_Q2, self.critic_widths())];
        for (prefix, widths) in prefixes {
            for (i, pair) in widths.windows(2).enumerate() {
                out.push((weight_path(prefix, i), vec![pair[0], pair[1]]));
                out.push((bias_path(prefix, i), vec![pair[1]]));
            }
        }
        out
    }

    /// Fresh parameters with `log α = ln alpha0` and targets equal to the
    /// online critics.
    pub fn init_params(&self, alpha0: f64, rng: &mut dyn RngCore) -> ParamTree {
        let mut tree = ParamTree::new();
        init_mlp(&mut tree, ACTOR, &self.actor_widths(), rng);
        init_mlp(&mut tree, CRITIC_Q1, &self.critic_widths(), rng);
        init_mlp(&mut tree, CRITIC_Q2, &self.critic_widths(), rng);
        let copies: Vec<(String, Tensor)> = tree
            .subtree(CRITIC)
            .map(|(path, t)| (format!("{CRITIC}_target{}", &path[CRITIC.len()..]), t.clone()))
            .collect();
        for (path, t) in copies {
            tree.insert(path, t);
        }
        tree.insert(LOG_ALPHA, Tensor::scalar(alpha0.ln()));
        tree
    }
}

/// Minibatch of transitions as dense rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub obs: Tensor,
    pub actions: Tensor,
    pub rewards: Vec<f64>,
    pub next_obs: Tensor,
    pub terminal: Vec<bool>,
}

impl Batch {
    pub fn new(obs: Tensor, actions: Tensor, rewards: Vec<f64>, next_obs: Tensor, terminal: Vec<bool>) -> Result<Self, AgentError> {
        let n = rewards.len();
        if n == 0 {
            return Err(AgentError::Contract("empty batch".into()));
        }
        if obs.rows() != n || actions.rows() != n || next_obs.rows() != n || terminal.len() != n || obs.dims() != next_obs.dims() {
            return Err(AgentError::Contract("batch components disagree on row count or width".into()));
        }
        Ok(Self {
            obs,
            actions,
            rewards,
            next_obs,
            terminal,
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Agent hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SacConfig {
    pub variant: BackupVariant,
    pub target_entropy: f64,
    pub alpha0: f64,
    pub gamma: f64,
    pub tau: f64,
    pub hidden_sizes: Vec<usize>,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub temperature_lr: f64,
    pub temperature_weight_decay: f64,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            variant: BackupVariant::Corrected,
            target_entropy: -1.0,
            alpha0: 1.0,
            gamma: 0.99,
            tau: 0.005,
            hidden_sizes: vec![64, 64],
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            temperature_lr: 1e-3,
            temperature_weight_decay: 0.0,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let check = |ok: bool, field: &str, what: String| if ok { Ok(()) } else { Err(AgentError::Config(format!("{field}: {what}"))) };
        check(self.target_entropy.is_finite(), "target_entropy", format!("{} is not finite", self.target_entropy))?;
        check(self.alpha0 > 0.0 && self.alpha0.is_finite(), "alpha0", format!("{} must be positive", self.alpha0))?;
        check((0.0..=1.0).contains(&self.gamma), "gamma", format!("{} outside [0, 1]", self.gamma))?;
        check(self.tau > 0.0 && self.tau <= 1.0, "tau", format!("{} outside (0, 1]", self.tau))?;
        check(!self.hidden_sizes.is_empty() && self.hidden_sizes.iter().all(|&h| h > 0), "hidden_sizes", format!("{:?}", self.hidden_sizes))?;
        for (field, lr) in [("actor_lr", self.actor_lr), ("critic_lr", self.critic_lr), ("temperature_lr", self.temperature_lr)] {
            check(lr > 0.0 && lr.is_finite(), field, format!("{lr} must be positive"))?;
        }
        check((0.0..1.0).contains(&self.adam_beta1), "adam_beta1", format!("{}", self.adam_beta1))?;
        check((0.0..1.0).contains(&self.adam_beta2), "adam_beta2", format!("{}", self.adam_beta2))?;
        check(self.adam_eps > 0.0, "adam_eps", format!("{}", self.adam_eps))?;
        check(
            self.temperature_weight_decay == 0.0,
            "temperature_weight_decay",
            format!("{} must be exactly 0 so only the entropy gap moves α", self.temperature_weight_decay),
        )
    }
}

/// Diagnostics from one update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub temperature_loss: f64,
    /// Minibatch mean of `-log π`.
    pub mean_entropy: f64,
    pub alpha: f64,
    pub log_alpha: f64,
}

#[derive(Clone, Debug)]
pub struct SacAgent {
    config: SacConfig,
    nets: Networks,
    space: ActionSpace,
    params: ParamTree,
    actor_opt: OptimizerState,
    critic_opt: OptimizerState,
    temperature_opt: OptimizerState,
}

impl SacAgent {
    pub fn new(config: SacConfig, obs_dim: usize, space: ActionSpace, rng: &mut dyn RngCore) -> Result<Self, AgentError> {
        config.validate()?;
        let nets = Networks {
            obs_dim,
            action_dim: space.dim(),
            hidden: config.hidden_sizes.clone(),
        };
        let params = nets.init_params(config.alpha0, rng);
        Self::from_params(config, obs_dim, space, params)
    }

    /// Agent around existing parameters with fresh optimizer state.
    pub fn from_params(config: SacConfig, obs_dim: usize, space: ActionSpace, params: ParamTree) -> Result<Self, AgentError> {
        config.validate()?;
        let nets = Networks {
            obs_dim,
            action_dim: space.dim(),
            hidden: config.hidden_sizes.clone(),
        };
        for (path, shape) in nets.expected_shapes() {
            match params.get(&path) {
                Some(p) if p.shape() == shape.as_slice() => {}
                Some(p) => {
                    return Err(AgentError::Config(format!(
                        "parameter {path} has shape {:?}, expected {shape:?}",
                        p.shape()
                    )))
                }
                None => return Err(AgentError::Config(format!("parameter tree lacks {path}"))),
            }
        }
        let adam = |lr: f64, prefix: &str| {
            OptimizerState::adam(lr, config.adam_beta1, config.adam_beta2, config.adam_eps, 0.0, &params, &[prefix])
        };
        let actor_opt = adam(config.actor_lr, ACTOR);
        let critic_opt = adam(config.critic_lr, CRITIC);
        let temperature_opt = OptimizerState::sgd(config.temperature_lr, config.temperature_weight_decay);
        Ok(Self {
            config,
            nets,
            space,
            params,
            actor_opt,
            critic_opt,
            temperature_opt,
        })
    }

    pub fn config(&self) -> &SacConfig {
        &self.config
    }

    pub fn networks(&self) -> &Networks {
        &self.nets
    }

    pub fn action_space(&self) -> &ActionSpace {
        &self.space
    }

    pub fn params(&self) -> &ParamTree {
        &self.params
    }

    pub fn alpha(&self) -> f64 {
        alpha(&self.params).expect("agent always holds log_alpha")
    }

    pub fn log_alpha(&self) -> f64 {
        log_alpha(&self.params).expect("agent always holds log_alpha")
    }

    pub fn act(&self, obs: &[f64], rng: &mut dyn RngCore, deterministic: bool) -> Result<Vec<f64>, AgentError> {
        Ok(sample_action(&self.params, &self.nets, &self.space, obs, rng, deterministic)?.0)
    }

    /// Critic step, actor step, temperature step, then target averaging. On
    /// error the agent is left exactly as it was.
    pub fn update(&mut self, batch: &Batch, rng: &mut dyn RngCore) -> Result<UpdateStats, AgentError> {
        let cfg = &self.config;
        let mut params = self.params.clone();
        let mut critic_opt = self.critic_opt.clone();
        let mut actor_opt = self.actor_opt.clone();
        let mut temperature_opt = self.temperature_opt.clone();
        let (rows, ad) = (batch.len(), self.nets.action_dim);

        let next_noise = standard_normal(rng, rows, ad);
        let y = critic_targets(&params, &self.nets, &self.space, batch, &next_noise, cfg.variant, cfg.gamma, cfg.target_entropy)?;
        let critic = critic_loss(&params, &self.nets, batch, &y)?;
        ensure_finite("critic", &critic)?;
        critic_opt.step(&mut params, &critic.grads)?;

        let noise = standard_normal(rng, rows, ad);
        let (actor, log_probs) = actor_loss(&params, &self.nets, &self.space, &batch.obs, &noise)?;
        ensure_finite("actor", &actor)?;
        actor_opt.step(&mut params, &actor.grads)?;

        let temperature = temperature_loss(&params, &log_probs, cfg.target_entropy)?;
        ensure_finite("temperature", &temperature)?;
        temperature_opt.step(&mut params, &temperature.grads)?;

        polyak_update(&mut params, cfg.tau)?;
        if !params.is_finite() {
            return Err(AgentError::Diverged("parameters became non-finite".into()));
        }

        self.params = params;
        self.critic_opt = critic_opt;
        self.actor_opt = actor_opt;
        self.temperature_opt = temperature_opt;
        Ok(UpdateStats {
            critic_loss: critic.value,
            actor_loss: actor.value,
            temperature_loss: temperature.value,
            mean_entropy: -log_probs.iter().sum::<f64>() / log_probs.len() as f64,
            alpha: self.alpha(),
            log_alpha: self.log_alpha(),
        })
    }
}

fn ensure_finite(what: &str, loss: &LossOutput) -> Result<(), AgentError> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(AgentError::Diverged(format!("{what} loss or gradient is not finite (loss {})", loss.value)))
    }
}
