use super::policy::policy_sample;
use super::{AgentError, Batch, Networks, CRITIC, CRITIC_Q1, CRITIC_Q2, LOG_ALPHA, TARGET_Q1, TARGET_Q2};
use crate::diffcore::{backward, forward_mlp, GradMap, Graph, ParamMode, ParamTree, Tensor, Var};
use crate::envsim::ActionSpace;
use crate::BackupVariant;

/// Scalar loss value with gradients keyed by parameter path.
#[derive(Clone, Debug)]
pub struct LossOutput {
    pub value: f64,
    pub grads: GradMap,
}

impl LossOutput {
    fn from_graph(g: &Graph, loss: Var) -> Result<Self, AgentError> {
        let grads = backward(g, loss)?.into_params();
        Ok(Self {
            value: g.value(loss).item(),
            grads,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite() && self.grads.values().all(Tensor::is_finite)
    }
}

pub fn alpha(params: &ParamTree) -> Result<f64, AgentError> {
    Ok(log_alpha(params)?.exp())
}

pub fn log_alpha(params: &ParamTree) -> Result<f64, AgentError> {
    params
        .get(LOG_ALPHA)
        .map(Tensor::item)
        .ok_or_else(|| AgentError::Contract(format!("parameter tree lacks {LOG_ALPHA}")))
}

fn critic_value(g: &mut Graph, params: &ParamTree, nets: &Networks, prefix: &str, obs: Var, action: Var, mode: ParamMode) -> Result<Var, AgentError> {
    let input = g.concat_cols(obs, action);
    Ok(forward_mlp(g, params, prefix, input, &nets.critic_activations(), mode)?)
}

/// Bellman targets `y`, computed without gradients.
///
/// `y = r + γ(1 - terminal)(min(Q̄₁, Q̄₂)(s', a') - α(log π(a'|s') + w·H₀))`
/// with `a' ~ π(·|s')` drawn from `next_noise`, `w = 1` for the corrected
/// backup and `w = 0` for the backup missing the target-entropy term.
/// Truncation does not count as terminal.
#[allow(clippy::too_many_arguments)]
pub fn critic_targets(
    params: &ParamTree,
    nets: &Networks,
    space: &ActionSpace,
    batch: &Batch,
    next_noise: &Tensor,
    variant: BackupVariant,
    gamma: f64,
    target_entropy: f64,
) -> Result<Vec<f64>, AgentError> {
    let a = alpha(params)?;
    let mut g = Graph::new();
    let next_obs = g.constant(batch.next_obs.clone());
    let sample = policy_sample(&mut g, params, nets, space, next_obs, next_noise, ParamMode::Frozen)?;
    let q1 = critic_value(&mut g, params, nets, TARGET_Q1, next_obs, sample.action, ParamMode::Frozen)?;
    let q2 = critic_value(&mut g, params, nets, TARGET_Q2, next_obs, sample.action, ParamMode::Frozen)?;
    let q_next = g.minimum(q1, q2);
    let shift = variant.target_weight() * target_entropy;
    let y = g
        .value(q_next)
        .data()
        .iter()
        .zip(g.value(sample.log_prob).data())
        .zip(batch.rewards.iter().zip(&batch.terminal))
        .map(|((&q, &lp), (&r, &terminal))| {
            let continuation = if terminal { 0.0 } else { 1.0 };
            r + gamma * continuation * (q - a * (lp + shift))
        })
        .collect::<Vec<_>>();
    if y.iter().any(|v| !v.is_finite()) {
        return Err(AgentError::Diverged("non-finite Bellman target".into()));
    }
    Ok(y)
}

/// `mean((Q₁(s,a) - y)²) + mean((Q₂(s,a) - y)²)`; gradients reach only the
/// online critics.
pub fn critic_loss(params: &ParamTree, nets: &Networks, batch: &Batch, targets: &[f64]) -> Result<LossOutput, AgentError> {
    let mut g = Graph::new();
    let loss = record_critic_loss(&mut g, params, nets, batch, targets)?;
    LossOutput::from_graph(&g, loss)
}

/// Records the critic loss on `g` and returns its node.
pub fn record_critic_loss(g: &mut Graph, params: &ParamTree, nets: &Networks, batch: &Batch, targets: &[f64]) -> Result<Var, AgentError> {
    if targets.len() != batch.len() {
        return Err(AgentError::Contract(format!("{} targets for a batch of {}", targets.len(), batch.len())));
    }
    let obs = g.constant(batch.obs.clone());
    let act = g.constant(batch.actions.clone());
    let y = g.constant(Tensor::matrix(targets.len(), 1, targets.to_vec()).map_err(AgentError::from)?);
    let mut total = None;
    for prefix in [CRITIC_Q1, CRITIC_Q2] {
        let q = critic_value(g, params, nets, prefix, obs, act, ParamMode::Trainable)?;
        let diff = g.sub(q, y);
        let sq = g.square(diff);
        let term = g.mean(sq);
        total = Some(match total {
            None => term,
            Some(acc) => g.add(acc, term),
        });
    }
    Ok(total.expect("two critics"))
}

/// Policy loss `mean(α·log π(a|s) - min(Q₁, Q₂)(s, a))` over reparameterized
/// actions drawn with `noise`. The temperature and critics are held fixed.
/// Also returns the per-row `log π(a|s)`.
pub fn actor_loss(
    params: &ParamTree,
    nets: &Networks,
    space: &ActionSpace,
    obs: &Tensor,
    noise: &Tensor,
) -> Result<(LossOutput, Vec<f64>), AgentError> {
    let mut g = Graph::new();
    let (loss, log_prob) = record_actor_loss(&mut g, params, nets, space, obs, noise)?;
    let log_probs = g.value(log_prob).data().to_vec();
    Ok((LossOutput::from_graph(&g, loss)?, log_probs))
}

/// Records the actor loss on `g`; returns the loss node and the per-row
/// log-probability node.
pub fn record_actor_loss(
    g: &mut Graph,
    params: &ParamTree,
    nets: &Networks,
    space: &ActionSpace,
    obs: &Tensor,
    noise: &Tensor,
) -> Result<(Var, Var), AgentError> {
    let a = alpha(params)?;
    let x = g.constant(obs.clone());
    let sample = policy_sample(g, params, nets, space, x, noise, ParamMode::Trainable)?;
    let q1 = critic_value(g, params, nets, CRITIC_Q1, x, sample.action, ParamMode::Frozen)?;
    let q2 = critic_value(g, params, nets, CRITIC_Q2, x, sample.action, ParamMode::Frozen)?;
    let q = g.minimum(q1, q2);
    let weighted = g.scale(sample.log_prob, a);
    let per_row = g.sub(weighted, q);
    Ok((g.mean(per_row), sample.log_prob))
}

/// `α·ĥ` with `ĥ = mean(-log π - H₀)` over `log_probs`, differentiated with
/// respect to `log α`; the log-probabilities are constants.
pub fn temperature_loss(params: &ParamTree, log_probs: &[f64], target_entropy: f64) -> Result<LossOutput, AgentError> {
    let mut g = Graph::new();
    let loss = record_temperature_loss(&mut g, params, log_probs, target_entropy)?;
    LossOutput::from_graph(&g, loss)
}

pub fn record_temperature_loss(g: &mut Graph, params: &ParamTree, log_probs: &[f64], target_entropy: f64) -> Result<Var, AgentError> {
    if log_probs.is_empty() {
        return Err(AgentError::Contract("temperature loss needs at least one sample".into()));
    }
    let gap = log_probs.iter().map(|lp| -lp - target_entropy).sum::<f64>() / log_probs.len() as f64;
    let la = g.param(params, LOG_ALPHA)?;
    let a = g.exp(la);
    let weighted = g.scale(a, gap);
    Ok(g.sum(weighted))
}

/// `target ← (1 - τ)·target + τ·online` for both critics.
pub fn polyak_update(params: &mut ParamTree, tau: f64) -> Result<(), AgentError> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(AgentError::Contract(format!("polyak rate τ = {tau} outside (0, 1]")));
    }
    let pairs: Vec<(String, String)> = params
        .subtree(CRITIC)
        .map(|(path, _)| (path.clone(), format!("{}_target{}", CRITIC, &path[CRITIC.len()..])))
        .collect();
    for (online_path, target_path) in pairs {
        let online = params.get(&online_path).expect("listed above").clone();
        let target = params
            .get_mut(&target_path)
            .ok_or_else(|| AgentError::Contract(format!("no target parameter {target_path}")))?;
        if target.shape() != online.shape() {
            return Err(AgentError::Contract(format!("{target_path} shape differs from {online_path}")));
        }
        for (t, o) in target.data_mut().iter_mut().zip(online.data()) {
            *t = (1.0 - tau) * *t + tau * o;
        }
    }
    Ok(())
}
