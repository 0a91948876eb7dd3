//! Lagrangian dual of the entropy-constrained finite-horizon problem
//!
//! ```text
//! max_π E[Σ_t r_t]   s.t.   h(π_t) = E_{ρ_t}[-log π_t] - H₀ ≥ 0   for every t
//! ```
//!
//! For a fixed schedule `α = (α_0..α_T)` the inner maximum of the Lagrangian
//! `E[Σ r_t] + Σ α_t·h(π_t)` is attained by Boltzmann policies computed with
//! one backward sweep, and `∂g/∂α_t = h(π*_t(α))`. The outer minimum over
//! `α ≥ 0` runs backward sweeps `t = T, T-1, …, 0`, each solving one
//! coordinate exactly by bisection on that derivative, until every step is
//! primal feasible and complementary slack.

use super::policy::{boltzmann_with_logs, entropy};
use super::{marginals, policy_entropy_terms, EntropyGap, FiniteMdp, Marginals, PolicyTable, TabularError, TemperatureSchedule};

/// Bisection bracket for a step temperature.
pub const ALPHA_BRACKET: (f64, f64) = (1e-8, 1e4);
/// Bisection stops once `|h(π*_t)|` is below this.
pub const GAP_TOLERANCE: f64 = 1e-10;
/// Sweep termination: every step has `h ≥ -tol` and `|α·h| ≤ tol`.
pub const SWEEP_TOLERANCE: f64 = 1e-9;
pub const MAX_SWEEPS: usize = 10_000;
const PINNED_TOLERANCE: f64 = 1e-12;

/// Inner maximizer of the Lagrangian for a fixed schedule.
#[derive(Clone, Debug)]
pub struct SoftSolution {
    pub policy: PolicyTable,
    /// Soft `Q_t(s, a)` laid out `[t][s][a]`.
    pub q: Vec<f64>,
    pub marginals: Marginals,
    pub gaps: EntropyGap,
    /// `g(α) = max_π L(π, α)`.
    pub dual_value: f64,
}

/// Largest entropy a policy over `n_actions` can have.
pub fn max_entropy(n_actions: usize) -> f64 {
    (n_actions as f64).ln()
}

/// Errors when `H₀` exceeds `log n_actions`; returns `true` when the bound is
/// met with equality, which pins every policy to uniform.
pub fn check_target_entropy(n_actions: usize, target_entropy: f64) -> Result<bool, TabularError> {
    let bound = max_entropy(n_actions);
    if !target_entropy.is_finite() {
        return Err(TabularError::Domain(format!("target entropy {target_entropy} is not finite")));
    }
    if target_entropy > bound + PINNED_TOLERANCE {
        return Err(TabularError::Infeasible {
            target_entropy,
            bound,
        });
    }
    Ok(target_entropy >= bound - PINNED_TOLERANCE)
}

/// Policy maximizing `E_π[q] + α·H(π)` together with `Σ π(q - α log π)`.
///
/// `α = 0` is the greedy limit, uniform over exactly tied maxima (the limit
/// of the Boltzmann family). `α = +∞` is the uniform policy, and the value
/// excludes the entropy bonus, which cancels against `α·H₀` when the
/// constraint is pinned.
fn step_policy(q: &[f64], alpha: f64) -> (Vec<f64>, f64) {
    if alpha == 0.0 {
        let max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let ties = q.iter().filter(|&&v| v == max).count() as f64;
        let dist = q.iter().map(|&v| if v == max { 1.0 / ties } else { 0.0 }).collect();
        (dist, max)
    } else if alpha.is_infinite() {
        let n = q.len() as f64;
        (vec![1.0 / n; q.len()], q.iter().sum::<f64>() / n)
    } else {
        let (dist, logs) = boltzmann_with_logs(q, alpha);
        let value = dist.iter().zip(q).zip(&logs).map(|((p, v), l)| p * (v - alpha * l)).sum();
        (dist, value)
    }
}

/// `α·h`, where an unbounded temperature contributes nothing: it only occurs
/// when the constraint holds with equality.
pub(crate) fn penalty(alpha: f64, h: f64) -> f64 {
    if alpha.is_infinite() {
        0.0
    } else {
        alpha * h
    }
}

/// Soft backward induction for a fixed schedule.
pub fn soft_backward(mdp: &FiniteMdp, schedule: &TemperatureSchedule, target_entropy: f64) -> Result<SoftSolution, TabularError> {
    let (ns, na, steps) = (mdp.n_states(), mdp.n_actions(), mdp.steps());
    if schedule.len() != steps {
        return Err(TabularError::Contract(format!(
            "temperature schedule has {} entries, MDP has {steps} steps",
            schedule.len()
        )));
    }
    let mut q = vec![0.0; steps * ns * na];
    let mut probs = vec![0.0; steps * ns * na];
    let mut values = vec![0.0; ns];
    for t in (0..steps).rev() {
        for s in 0..ns {
            for a in 0..na {
                let future: f64 = if t + 1 < steps {
                    mdp.next_dist(s, a).iter().zip(&values).map(|(p, v)| p * v).sum()
                } else {
                    0.0
                };
                q[(t * ns + s) * na + a] = mdp.r(s, a) + future;
            }
        }
        for (s, value) in values.iter_mut().enumerate() {
            let range = (t * ns + s) * na..(t * ns + s + 1) * na;
            let (dist, v) = step_policy(&q[range.clone()], schedule.get(t));
            probs[range].copy_from_slice(&dist);
            *value = v;
        }
    }
    let policy = PolicyTable::new(steps, ns, na, probs)?;
    let m = marginals(mdp, &policy)?;
    let gaps = policy_entropy_terms(&policy, &m, target_entropy)?;
    let start: f64 = mdp.initial_dist().iter().zip(&values).map(|(d, v)| d * v).sum();
    let charged: f64 = schedule.alphas().iter().filter(|a| a.is_finite()).sum();
    Ok(SoftSolution {
        policy,
        q,
        marginals: m,
        gaps,
        dual_value: start - target_entropy * charged,
    })
}

/// The dual function `g(α) = max_π L(π, α)`.
pub fn dual_function(mdp: &FiniteMdp, schedule: &TemperatureSchedule, target_entropy: f64) -> Result<f64, TabularError> {
    Ok(soft_backward(mdp, schedule, target_entropy)?.dual_value)
}

/// Outcome of minimizing the dual over one step's temperature.
#[derive(Clone, Debug)]
pub struct StepSolution {
    pub t: usize,
    pub alpha: f64,
    /// `π*_t(·|s)` for every state.
    pub policy: Vec<Vec<f64>>,
    pub entropy_gap: f64,
    pub dual_value: f64,
}

impl StepSolution {
    fn from_solution(t: usize, alpha: f64, sol: &SoftSolution) -> Self {
        Self {
            t,
            alpha,
            policy: (0..sol.policy.n_states()).map(|s| sol.policy.dist(t, s).to_vec()).collect(),
            entropy_gap: sol.gaps.h[t],
            dual_value: sol.dual_value,
        }
    }
}

/// Minimizes `g` over `α_t ≥ 0` with every other step's temperature held at
/// its value in `schedule`. The steps after `t` enter through the soft value
/// they back up into `Q_t`; the steps before `t` through the marginal `d_t`.
pub fn dual_solve_step(
    mdp: &FiniteMdp,
    t: usize,
    schedule: &TemperatureSchedule,
    target_entropy: f64,
) -> Result<StepSolution, TabularError> {
    if t >= mdp.steps() {
        return Err(TabularError::Contract(format!("step {t} beyond horizon {}", mdp.horizon())));
    }
    let mut trial = schedule.clone();
    if check_target_entropy(mdp.n_actions(), target_entropy)? {
        trial.set(t, f64::INFINITY);
        let sol = soft_backward(mdp, &trial, target_entropy)?;
        return Ok(StepSolution::from_solution(t, f64::INFINITY, &sol));
    }
    let mut solve_at = |alpha: f64| -> Result<SoftSolution, TabularError> {
        trial.set(t, alpha);
        soft_backward(mdp, &trial, target_entropy)
    };

    let (mut lo, mut hi) = ALPHA_BRACKET;
    let at_lo = solve_at(lo)?;
    if at_lo.gaps.h[t] >= 0.0 {
        // Constraint slack even near the greedy limit: boundary optimum.
        let sol = solve_at(0.0)?;
        return Ok(StepSolution::from_solution(t, 0.0, &sol));
    }
    let at_hi = solve_at(hi)?;
    if at_hi.gaps.h[t] < 0.0 {
        return Err(TabularError::Numeric(format!(
            "step {t}: entropy gap {} still negative at α = {hi}",
            at_hi.gaps.h[t]
        )));
    }
    let mut best = (hi, at_hi);
    for _ in 0..400 {
        let mid = (lo * hi).sqrt();
        let sol = solve_at(mid)?;
        let h = sol.gaps.h[t];
        if h.abs() <= GAP_TOLERANCE {
            best = (mid, sol);
            break;
        }
        if h < 0.0 {
            lo = mid;
        } else {
            hi = mid;
            best = (mid, sol);
        }
        if hi / lo <= 1.0 + 1e-15 {
            break;
        }
    }
    let (alpha, sol) = best;
    Ok(StepSolution::from_solution(t, alpha, &sol))
}

/// Dual optimum: schedule, recovered primal policy, and sweep statistics.
#[derive(Clone, Debug)]
pub struct DualSolution {
    pub schedule: TemperatureSchedule,
    pub solution: SoftSolution,
    pub sweeps: usize,
    pub converged: bool,
}

impl DualSolution {
    pub fn dual_value(&self) -> f64 {
        self.solution.dual_value
    }

    /// `α*_t·h(π*_t)` for every step.
    pub fn slackness_residuals(&self) -> Vec<f64> {
        self.schedule
            .alphas()
            .iter()
            .zip(&self.solution.gaps.h)
            .map(|(&a, &h)| penalty(a, h))
            .collect()
    }
}

fn sweep_converged(schedule: &TemperatureSchedule, sol: &SoftSolution) -> bool {
    schedule
        .alphas()
        .iter()
        .zip(&sol.gaps.h)
        .all(|(&a, &h)| h >= -SWEEP_TOLERANCE && penalty(a, h).abs() <= SWEEP_TOLERANCE)
}

/// Solves the dual by backward coordinate sweeps starting from `α ≡ 1`.
pub fn dual_solve(mdp: &FiniteMdp, target_entropy: f64) -> Result<DualSolution, TabularError> {
    let steps = mdp.steps();
    if check_target_entropy(mdp.n_actions(), target_entropy)? {
        let schedule = TemperatureSchedule::constant(steps, f64::INFINITY)?;
        let solution = soft_backward(mdp, &schedule, target_entropy)?;
        return Ok(DualSolution {
            schedule,
            solution,
            sweeps: 0,
            converged: true,
        });
    }
    let mut schedule = TemperatureSchedule::constant(steps, 1.0)?;
    for sweep in 1..=MAX_SWEEPS {
        for t in (0..steps).rev() {
            let step = dual_solve_step(mdp, t, &schedule, target_entropy)?;
            schedule.set(t, step.alpha);
        }
        let solution = soft_backward(mdp, &schedule, target_entropy)?;
        if sweep_converged(&schedule, &solution) {
            return Ok(DualSolution {
                schedule,
                solution,
                sweeps: sweep,
                converged: true,
            });
        }
    }
    log::warn!("dual sweeps did not converge within {MAX_SWEEPS} sweeps");
    let solution = soft_backward(mdp, &schedule, target_entropy)?;
    Ok(DualSolution {
        schedule,
        solution,
        sweeps: MAX_SWEEPS,
        converged: false,
    })
}

/// Entropy of every `(t, s)` distribution in a policy table.
pub fn state_entropies(policy: &PolicyTable) -> Vec<f64> {
    (0..policy.steps())
        .flat_map(|t| (0..policy.n_states()).map(move |s| (t, s)))
        .map(|(t, s)| entropy(policy.dist(t, s)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn plain_value_iteration(mdp: &FiniteMdp) -> f64 {
        let mut v = vec![0.0; mdp.n_states()];
        for t in (0..mdp.steps()).rev() {
            v = (0..mdp.n_states())
                .map(|s| {
                    (0..mdp.n_actions())
                        .map(|a| {
                            let future: f64 = if t < mdp.horizon() {
                                mdp.next_dist(s, a).iter().zip(&v).map(|(p, x)| p * x).sum()
                            } else {
                                0.0
                            };
                            mdp.r(s, a) + future
                        })
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .collect();
        }
        mdp.initial_dist().iter().zip(&v).map(|(d, x)| d * x).sum()
    }

    #[test]
    fn action_independent_rewards_give_uniform_policy_and_zero_temperature() {
        let transition = vec![0.5, 0.5, 0.5, 0.5, 0.2, 0.8, 0.2, 0.8];
        let reward = vec![0.3, 0.3, -1.0, -1.0];
        let mdp = FiniteMdp::new(2, 2, 2, transition, reward, vec![0.4, 0.6]).unwrap();
        let sol = dual_solve(&mdp, 0.5).unwrap();
        assert!(sol.converged);
        assert!(sol.schedule.alphas().iter().all(|&a| a == 0.0));
        assert!(sol.solution.policy.probs().iter().all(|&p| p == 0.5));
        assert!(sol.solution.gaps.h.iter().all(|&h| h > 0.0));
    }

    #[test]
    fn target_at_entropy_maximum_pins_uniform_policy() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mdp = FiniteMdp::random(2, 2, 2, &mut rng);
        let sol = dual_solve(&mdp, std::f64::consts::LN_2).unwrap();
        assert!(sol.solution.policy.probs().iter().all(|&p| p == 0.5));
        assert!(sol.slackness_residuals().iter().all(|&r| r == 0.0));
        for h in &sol.solution.gaps.h {
            assert!(h.abs() <= 1e-15);
        }
    }

    #[test]
    fn infeasible_target_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mdp = FiniteMdp::random(2, 2, 1, &mut rng);
        let err = dual_solve(&mdp, 0.7).unwrap_err();
        assert!(matches!(err, TabularError::Infeasible { .. }));
        let err = dual_solve_step(&mdp, 0, &TemperatureSchedule::constant(2, 1.0).unwrap(), 0.7).unwrap_err();
        assert!(matches!(err, TabularError::Infeasible { .. }));
    }

    #[test]
    fn step_solution_is_slack_or_tight() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let mdp = FiniteMdp::random(2, 2, 0, &mut rng);
            let step = dual_solve_step(&mdp, 0, &TemperatureSchedule::constant(1, 1.0).unwrap(), 0.5).unwrap();
            assert!(step.entropy_gap.abs() <= 1e-8 || step.alpha == 0.0);
        }
    }

    #[test]
    fn very_low_target_recovers_plain_value_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..10 {
            let mdp = FiniteMdp::random(3, 3, rng.random_range(0..4), &mut rng);
            let sol = dual_solve(&mdp, -10.0).unwrap();
            assert!(sol.schedule.alphas().iter().all(|&a| a == 0.0));
            assert!((sol.dual_value() - plain_value_iteration(&mdp)).abs() <= 1e-12);
        }
    }

    #[test]
    fn zero_target_with_deterministic_optimum_is_slack() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mdp = FiniteMdp::random(2, 2, 3, &mut rng);
        let sol = dual_solve(&mdp, 0.0).unwrap();
        assert!(sol.slackness_residuals().iter().all(|r| r.abs() <= 1e-8));
    }

    #[test]
    fn complementary_slackness_on_random_problems() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for i in 0..40 {
            let h0 = [-1.0, 0.0, 0.3, 0.6][i % 4];
            let mdp = FiniteMdp::random(2 + i % 2, 2, rng.random_range(0..4), &mut rng);
            let sol = dual_solve(&mdp, h0).unwrap();
            assert!(sol.converged);
            for (r, h) in sol.slackness_residuals().iter().zip(&sol.solution.gaps.h) {
                assert!(r.abs() <= 1e-6);
                assert!(*h >= -1e-9);
            }
        }
    }

    #[test]
    fn dual_function_is_midpoint_convex() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..200 {
            let mdp = FiniteMdp::random(2, 3, rng.random_range(0..4), &mut rng);
            let h0 = rng.random_range(-1.0..1.0);
            let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..mdp.steps()).map(|_| rng.random_range(0.0..3.0)).collect() };
            let a = draw(&mut rng);
            let b = draw(&mut rng);
            let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
            let g = |v: Vec<f64>| dual_function(&mdp, &TemperatureSchedule::new(v).unwrap(), h0).unwrap();
            let (ga, gb, gm) = (g(a), g(b), g(mid));
            assert!(gm <= 0.5 * (ga + gb) + 1e-10, "{gm} > ({ga} + {gb})/2");
        }
    }

    #[test]
    fn dual_derivative_is_entropy_gap() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        for _ in 0..20 {
            let mdp = FiniteMdp::random(2, 2, 2, &mut rng);
            let alphas: Vec<f64> = (0..3).map(|_| rng.random_range(0.2..2.0)).collect();
            let h0 = 0.3;
            let sol = soft_backward(&mdp, &TemperatureSchedule::new(alphas.clone()).unwrap(), h0).unwrap();
            for t in 0..3 {
                let step = 1e-6;
                let mut up = alphas.clone();
                let mut down = alphas.clone();
                up[t] += step;
                down[t] -= step;
                let g = |v: Vec<f64>| dual_function(&mdp, &TemperatureSchedule::new(v).unwrap(), h0).unwrap();
                let fd = (g(up) - g(down)) / (2.0 * step);
                assert!((fd - sol.gaps.h[t]).abs() <= 1e-7, "{fd} vs {}", sol.gaps.h[t]);
            }
        }
    }

    #[test]
    fn recovered_policy_entropies_respect_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        for _ in 0..20 {
            let mdp = FiniteMdp::random(3, 4, 2, &mut rng);
            let sol = dual_solve(&mdp, rng.random_range(-1.0..1.3)).unwrap();
            for e in state_entropies(&sol.solution.policy) {
                assert!(e <= max_entropy(4) + 1e-12);
            }
        }
    }
}
