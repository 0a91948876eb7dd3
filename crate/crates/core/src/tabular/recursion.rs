use serde::Serialize;

use super::{marginals, FiniteMdp, PolicyTable, TabularError};
use crate::BackupVariant;

/// Per-step temperatures `α_0..=α_T`, all `≥ 0`. `+∞` is allowed and marks a
/// step whose entropy constraint pins the policy to uniform.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TemperatureSchedule {
    alphas: Vec<f64>,
}

impl TemperatureSchedule {
    pub fn new(alphas: Vec<f64>) -> Result<Self, TabularError> {
        if let Some((t, a)) = alphas.iter().enumerate().find(|(_, a)| !(**a >= 0.0)) {
            return Err(TabularError::Domain(format!("α_{t} = {a} violates α ≥ 0")));
        }
        Ok(Self { alphas })
    }

    pub fn constant(steps: usize, alpha: f64) -> Result<Self, TabularError> {
        Self::new(vec![alpha; steps])
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn get(&self, t: usize) -> f64 {
        self.alphas[t]
    }

    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    pub(crate) fn set(&mut self, t: usize, alpha: f64) {
        debug_assert!(alpha >= 0.0);
        self.alphas[t] = alpha;
    }
}

/// `Q_t(s, a)` for every step plus `Q̄_t = E_{ρ_t}[Q_t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct QTable {
    n_states: usize,
    n_actions: usize,
    q: Vec<f64>,
    pub qbar: Vec<f64>,
}

impl QTable {
    pub fn q(&self, t: usize, s: usize, a: usize) -> f64 {
        self.q[(t * self.n_states + s) * self.n_actions + a]
    }

    pub fn slice(&self, t: usize, s: usize) -> &[f64] {
        let start = (t * self.n_states + s) * self.n_actions;
        &self.q[start..start + self.n_actions]
    }

    pub fn values(&self) -> &[f64] {
        &self.q
    }

    pub fn steps(&self) -> usize {
        self.qbar.len()
    }
}

/// Exact policy evaluation of the soft Q recursion by backward induction.
///
/// `Q_T = r`; for `t < T`
/// `Q_t(s,a) = r(s,a) + E_{s'~p, a'~π_{t+1}}[Q_{t+1}(s',a') - α_{t+1}(log π_{t+1}(a'|s') + w·H₀)]`
/// with `w = 1` for [`BackupVariant::Corrected`] and `w = 0` for
/// [`BackupVariant::MissingTarget`]. Temperatures must be finite.
pub fn evaluate_recursion(
    mdp: &FiniteMdp,
    policy: &PolicyTable,
    alphas: &TemperatureSchedule,
    target_entropy: f64,
    variant: BackupVariant,
) -> Result<QTable, TabularError> {
    policy.check_matches(mdp)?;
    if alphas.len() != mdp.steps() {
        return Err(TabularError::Contract(format!(
            "temperature schedule has {} entries, MDP has {} steps",
            alphas.len(),
            mdp.steps()
        )));
    }
    if let Some(t) = alphas.alphas().iter().position(|a| !a.is_finite()) {
        return Err(TabularError::Contract(format!("α_{t} must be finite for policy evaluation")));
    }
    let (ns, na, steps) = (mdp.n_states(), mdp.n_actions(), mdp.steps());
    let h_weight = variant.target_weight() * target_entropy;
    let mut q = vec![0.0; steps * ns * na];

    let last = steps - 1;
    for s in 0..ns {
        for a in 0..na {
            q[(last * ns + s) * na + a] = mdp.r(s, a);
        }
    }
    for t in (0..last).rev() {
        let alpha_next = alphas.get(t + 1);
        // Soft value of each next state under π_{t+1}.
        let next_value: Vec<f64> = (0..ns)
            .map(|sn| {
                let q_next = &q[((t + 1) * ns + sn) * na..((t + 1) * ns + sn + 1) * na];
                policy
                    .dist(t + 1, sn)
                    .iter()
                    .zip(q_next)
                    .filter(|(&p, _)| p > 0.0)
                    .map(|(&p, &qv)| p * (qv - alpha_next * (p.ln() + h_weight)))
                    .sum()
            })
            .collect();
        for s in 0..ns {
            for a in 0..na {
                let expected: f64 = mdp.next_dist(s, a).iter().zip(&next_value).map(|(p, v)| p * v).sum();
                q[(t * ns + s) * na + a] = mdp.r(s, a) + expected;
            }
        }
    }

    let m = marginals(mdp, policy)?;
    let qbar = (0..steps)
        .map(|t| {
            m.state_action[t]
                .iter()
                .zip(&q[t * ns * na..(t + 1) * ns * na])
                .map(|(w, v)| w * v)
                .sum()
        })
        .collect();
    Ok(QTable {
        n_states: ns,
        n_actions: na,
        q,
        qbar,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::policy_entropy_terms;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_policy(mdp: &FiniteMdp, rng: &mut ChaCha8Rng) -> PolicyTable {
        PolicyTable::from_fn(mdp.steps(), mdp.n_states(), mdp.n_actions(), |_, _| {
            let raw: Vec<f64> = (0..mdp.n_actions()).map(|_| rng.random_range(0.01..1.0)).collect();
            let total: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / total).collect()
        })
        .unwrap()
    }

    #[test]
    fn zero_target_entropy_makes_variants_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mdp = FiniteMdp::random(3, 3, 4, &mut rng);
        let policy = random_policy(&mdp, &mut rng);
        let alphas = TemperatureSchedule::constant(mdp.steps(), 0.4).unwrap();
        let a = evaluate_recursion(&mdp, &policy, &alphas, 0.0, BackupVariant::Corrected).unwrap();
        let b = evaluate_recursion(&mdp, &policy, &alphas, 0.0, BackupVariant::MissingTarget).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn horizon_zero_returns_rewards() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mdp = FiniteMdp::random(2, 3, 0, &mut rng);
        let policy = random_policy(&mdp, &mut rng);
        let alphas = TemperatureSchedule::constant(1, 2.0).unwrap();
        for variant in BackupVariant::ALL {
            let table = evaluate_recursion(&mdp, &policy, &alphas, 0.7, variant).unwrap();
            for s in 0..2 {
                assert_eq!(table.slice(0, s), mdp.rewards(s));
            }
        }
    }

    #[test]
    fn variant_gap_is_accumulated_future_temperature() {
        // Unrolling the two recursions: the difference at t is
        // -H₀·Σ_{k>t} α_k, which is -(T-t)·α·H₀ for a constant schedule.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..25 {
            let horizon = rng.random_range(0..6);
            let mdp = FiniteMdp::random(rng.random_range(1..5), rng.random_range(1..4), horizon, &mut rng);
            let policy = random_policy(&mdp, &mut rng);
            let alphas: Vec<f64> = (0..mdp.steps()).map(|_| rng.random_range(0.0..2.0)).collect();
            let h0 = rng.random_range(-2.0..1.0);
            let sched = TemperatureSchedule::new(alphas.clone()).unwrap();
            let qc = evaluate_recursion(&mdp, &policy, &sched, h0, BackupVariant::Corrected).unwrap();
            let qm = evaluate_recursion(&mdp, &policy, &sched, h0, BackupVariant::MissingTarget).unwrap();
            for t in 0..mdp.steps() {
                let expected = -h0 * alphas[t + 1..].iter().sum::<f64>();
                for s in 0..mdp.n_states() {
                    for a in 0..mdp.n_actions() {
                        assert!((qc.q(t, s, a) - qm.q(t, s, a) - expected).abs() <= 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn qbar_is_marginal_weighted_q() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mdp = FiniteMdp::random(3, 2, 3, &mut rng);
        let policy = random_policy(&mdp, &mut rng);
        let sched = TemperatureSchedule::constant(mdp.steps(), 0.3).unwrap();
        let table = evaluate_recursion(&mdp, &policy, &sched, 0.2, BackupVariant::Corrected).unwrap();
        let m = marginals(&mdp, &policy).unwrap();
        for t in 0..mdp.steps() {
            let mut direct = 0.0;
            for s in 0..3 {
                for a in 0..2 {
                    direct += m.rho(t, s, a, 2) * table.q(t, s, a);
                }
            }
            assert!((table.qbar[t] - direct).abs() <= 1e-12);
        }
    }

    #[test]
    fn corrected_qbar_follows_iterative_system() {
        // Q̄_t = E_{ρ_t}[r] + Q̄_{t+1} + α_{t+1}·h(π_{t+1}).
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mdp = FiniteMdp::random(3, 3, 5, &mut rng);
        let policy = random_policy(&mdp, &mut rng);
        let alphas: Vec<f64> = (0..mdp.steps()).map(|_| rng.random_range(0.1..1.5)).collect();
        let h0 = 0.45;
        let sched = TemperatureSchedule::new(alphas.clone()).unwrap();
        let table = evaluate_recursion(&mdp, &policy, &sched, h0, BackupVariant::Corrected).unwrap();
        let m = marginals(&mdp, &policy).unwrap();
        let gap = policy_entropy_terms(&policy, &m, h0).unwrap();
        for t in 0..mdp.steps() {
            let expected_reward: f64 = (0..3)
                .flat_map(|s| (0..3).map(move |a| (s, a)))
                .map(|(s, a)| m.rho(t, s, a, 3) * mdp.r(s, a))
                .sum();
            let rhs = if t == mdp.horizon() {
                expected_reward
            } else {
                expected_reward + table.qbar[t + 1] + alphas[t + 1] * gap.h[t + 1]
            };
            assert!((table.qbar[t] - rhs).abs() <= 1e-12);
        }
    }

    #[test]
    fn schedule_rejects_negative_and_nan() {
        assert!(TemperatureSchedule::new(vec![0.0, -1e-3]).is_err());
        assert!(TemperatureSchedule::new(vec![f64::NAN]).is_err());
        assert!(TemperatureSchedule::new(vec![0.0, f64::INFINITY]).is_ok());
    }

    #[test]
    fn infinite_temperature_is_rejected_for_evaluation() {
        let mdp = FiniteMdp::new(1, 2, 1, vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0]).unwrap();
        let sched = TemperatureSchedule::new(vec![1.0, f64::INFINITY]).unwrap();
        let err = evaluate_recursion(&mdp, &PolicyTable::uniform(2, 1, 2), &sched, 0.1, BackupVariant::Corrected);
        assert!(matches!(err, Err(TabularError::Contract(_))));
    }
}
