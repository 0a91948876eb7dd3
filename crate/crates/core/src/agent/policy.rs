//! Tanh-squashed Gaussian policy.
//!
//! The actor maps an observation to a mean and a log standard deviation per
//! action dimension. A pre-squash sample `u = mean + std·ε` is pushed through
//! `tanh` and affinely mapped onto the action box, and its log-density picks
//! up the change-of-variables terms of both maps.

use std::f64::consts::PI;

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use super::{AgentError, Networks, ACTOR};
use crate::diffcore::{forward_mlp, Graph, ParamMode, ParamTree, Tensor, Var};
use crate::envsim::ActionSpace;

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Added to `1 - tanh²(u)` before taking its log.
pub const TANH_EPS: f64 = 1e-6;

/// Graph nodes of a reparameterized policy sample.
#[derive(Clone, Copy, Debug)]
pub struct PolicySample {
    /// Actions on the environment scale, `[batch, action_dim]`.
    pub action: Var,
    /// `log π(a|s)` per row, `[batch, 1]`.
    pub log_prob: Var,
}

/// Standard normal noise of shape `[rows, cols]`.
pub fn standard_normal(rng: &mut dyn RngCore, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(&mut *rng)).collect();
    Tensor::matrix(rows, cols, data).expect("noise shape")
}

fn broadcast_rows(row: &[f64], rows: usize) -> Tensor {
    let data = (0..rows).flat_map(|_| row.iter().copied()).collect();
    Tensor::matrix(rows, row.len(), data).expect("broadcast shape")
}

/// Records the actor forward pass and a reparameterized sample driven by
/// `noise` (`[batch, action_dim]`). Zero noise gives the squashed mean.
pub fn policy_sample(
    g: &mut Graph,
    params: &ParamTree,
    nets: &Networks,
    space: &ActionSpace,
    obs: Var,
    noise: &Tensor,
    mode: ParamMode,
) -> Result<PolicySample, AgentError> {
    let ad = nets.action_dim;
    let rows = g.value(obs).rows();
    if noise.dims() != (rows, ad) {
        return Err(AgentError::Contract(format!(
            "noise shape {:?} does not match batch {rows} x action dim {ad}",
            noise.shape()
        )));
    }
    let head = forward_mlp(g, params, ACTOR, obs, &nets.activations(), mode)?;
    let mean = g.slice_cols(head, 0, ad);
    let raw_log_std = g.slice_cols(head, ad, 2 * ad);
    let log_std = g.clamp(raw_log_std, LOG_STD_MIN, LOG_STD_MAX);
    let std = g.exp(log_std);
    let eps = g.constant(noise.clone());
    let spread = g.mul(std, eps);
    let pre_squash = g.add(mean, spread);
    let squashed = g.tanh(pre_squash);

    let half_range = space.half_range();
    let scale = g.constant(broadcast_rows(&half_range, rows));
    let center = g.constant(broadcast_rows(&space.center(), rows));
    let scaled = g.mul(squashed, scale);
    let action = g.add(scaled, center);

    // Terms of the log-density that do not depend on the parameters.
    let log_scale: f64 = half_range.iter().map(|s| s.ln()).sum();
    let fixed: Vec<f64> = (0..rows)
        .map(|r| {
            let quad: f64 = noise.row(r).iter().map(|e| -0.5 * e * e).sum();
            quad - ad as f64 * 0.5 * (2.0 * PI).ln() - log_scale
        })
        .collect();
    let fixed = g.constant(Tensor::matrix(rows, 1, fixed).expect("column"));
    let log_std_sum = g.sum_cols(log_std);
    let sq = g.square(squashed);
    let neg_sq = g.scale(sq, -1.0);
    let jac = g.add_scalar(neg_sq, 1.0 + TANH_EPS);
    let log_jac = g.log(jac);
    let log_jac_sum = g.sum_cols(log_jac);
    let gaussian = g.sub(fixed, log_std_sum);
    let log_prob = g.sub(gaussian, log_jac_sum);
    if !g.value(log_prob).is_finite() || !g.value(action).is_finite() {
        return Err(AgentError::Diverged("non-finite policy sample".into()));
    }
    Ok(PolicySample { action, log_prob })
}

/// Samples one action for `obs`. With `deterministic` the pre-squash sample
/// is the mean. The returned action lies strictly inside the box.
pub fn sample_action(
    params: &ParamTree,
    nets: &Networks,
    space: &ActionSpace,
    obs: &[f64],
    rng: &mut dyn RngCore,
    deterministic: bool,
) -> Result<(Vec<f64>, f64), AgentError> {
    if obs.len() != nets.obs_dim || obs.iter().any(|v| !v.is_finite()) {
        return Err(AgentError::Contract(format!("observation {obs:?} is not a finite {}-vector", nets.obs_dim)));
    }
    let noise = if deterministic {
        Tensor::zeros(&[1, nets.action_dim])
    } else {
        standard_normal(rng, 1, nets.action_dim)
    };
    let mut g = Graph::new();
    let x = g.constant(Tensor::matrix(1, obs.len(), obs.to_vec()).expect("row"));
    let sample = policy_sample(&mut g, params, nets, space, x, &noise, ParamMode::Frozen)?;
    let action: Vec<f64> = g
        .value(sample.action)
        .data()
        .iter()
        .zip(space.low().iter().zip(space.high()))
        .map(|(&a, (&lo, &hi))| {
            // tanh rounds to ±1 for large arguments; keep the action off the bounds.
            if a <= lo {
                lo.next_up()
            } else if a >= hi {
                hi.next_down()
            } else {
                a
            }
        })
        .collect();
    Ok((action, g.value(sample.log_prob).item()))
}

/// Actor mean and clamped log standard deviation for one observation.
pub fn actor_head(params: &ParamTree, nets: &Networks, obs: &[f64]) -> Result<(Vec<f64>, Vec<f64>), AgentError> {
    let mut g = Graph::new();
    let x = g.constant(Tensor::matrix(1, obs.len(), obs.to_vec()).map_err(AgentError::from)?);
    let head = forward_mlp(&mut g, params, ACTOR, x, &nets.activations(), ParamMode::Frozen)?;
    let out = g.value(head).data();
    let ad = nets.action_dim;
    let log_std = out[ad..2 * ad].iter().map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX)).collect();
    Ok((out[..ad].to_vec(), log_std))
}

/// `log π(a|s)` of an arbitrary in-bounds action, by inverting the squashing.
pub fn log_prob_of_action(
    params: &ParamTree,
    nets: &Networks,
    space: &ActionSpace,
    obs: &[f64],
    action: &[f64],
) -> Result<f64, AgentError> {
    let (mean, log_std) = actor_head(params, nets, obs)?;
    let mut total = 0.0;
    for i in 0..nets.action_dim {
        let half = (space.high()[i] - space.low()[i]) / 2.0;
        let center = (space.high()[i] + space.low()[i]) / 2.0;
        let y = (action[i] - center) / half;
        if !(y > -1.0 && y < 1.0) {
            return Err(AgentError::Contract(format!("action {} outside the open box", action[i])));
        }
        let u = y.atanh();
        let z = (u - mean[i]) / log_std[i].exp();
        total += -0.5 * z * z - log_std[i] - 0.5 * (2.0 * PI).ln() - (1.0 - y * y + TANH_EPS).ln() - half.ln();
    }
    Ok(total)
}
