use super::{FiniteMdp, TabularError};

const SUM_TOL: f64 = 1e-12;

/// Time-indexed stochastic policy `π_t(a|s)` for `t = 0..=T`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyTable {
    steps: usize,
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl PolicyTable {
    /// `probs` is laid out `[t][s][a]`.
    pub fn new(steps: usize, n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self, TabularError> {
        if probs.len() != steps * n_states * n_actions {
            return Err(TabularError::Contract(format!(
                "policy table needs {} entries, got {}",
                steps * n_states * n_actions,
                probs.len()
            )));
        }
        for (i, dist) in probs.chunks(n_actions).enumerate() {
            let sum: f64 = dist.iter().sum();
            if dist.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > SUM_TOL {
                return Err(TabularError::Contract(format!(
                    "π[t={}][s={}] is not a distribution (sum {sum})",
                    i / n_states,
                    i % n_states
                )));
            }
        }
        Ok(Self {
            steps,
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn uniform(steps: usize, n_states: usize, n_actions: usize) -> Self {
        let p = 1.0 / n_actions as f64;
        Self {
            steps,
            n_states,
            n_actions,
            probs: vec![p; steps * n_states * n_actions],
        }
    }

    /// Builds a table from one distribution per `(t, s)`, in `t`-major order.
    pub fn from_fn(steps: usize, n_states: usize, n_actions: usize, mut f: impl FnMut(usize, usize) -> Vec<f64>) -> Result<Self, TabularError> {
        let mut probs = Vec::with_capacity(steps * n_states * n_actions);
        for t in 0..steps {
            for s in 0..n_states {
                let dist = f(t, s);
                if dist.len() != n_actions {
                    return Err(TabularError::Contract(format!("π[t={t}][s={s}] has {} actions", dist.len())));
                }
                probs.extend(dist);
            }
        }
        Self::new(steps, n_states, n_actions, probs)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn dist(&self, t: usize, s: usize) -> &[f64] {
        let start = (t * self.n_states + s) * self.n_actions;
        &self.probs[start..start + self.n_actions]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub(crate) fn check_matches(&self, mdp: &FiniteMdp) -> Result<(), TabularError> {
        if self.steps != mdp.steps() || self.n_states != mdp.n_states() || self.n_actions != mdp.n_actions() {
            return Err(TabularError::Contract(format!(
                "policy covers {} steps × {} states × {} actions, MDP has {} × {} × {}",
                self.steps,
                self.n_states,
                self.n_actions,
                mdp.steps(),
                mdp.n_states(),
                mdp.n_actions()
            )));
        }
        Ok(())
    }
}

/// State marginals `d_t(s)` and state-action marginals `ρ_t(s, a)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Marginals {
    pub state: Vec<Vec<f64>>,
    /// `ρ_t` flattened `[s][a]`.
    pub state_action: Vec<Vec<f64>>,
}

impl Marginals {
    pub fn rho(&self, t: usize, s: usize, a: usize, n_actions: usize) -> f64 {
        self.state_action[t][s * n_actions + a]
    }
}

/// Forward propagation of the initial distribution under `policy`.
pub fn marginals(mdp: &FiniteMdp, policy: &PolicyTable) -> Result<Marginals, TabularError> {
    policy.check_matches(mdp)?;
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut state = Vec::with_capacity(mdp.steps());
    let mut state_action = Vec::with_capacity(mdp.steps());
    let mut d = mdp.initial_dist().to_vec();
    for t in 0..mdp.steps() {
        let mut rho = vec![0.0; ns * na];
        let mut next = vec![0.0; ns];
        for s in 0..ns {
            for (a, &pa) in policy.dist(t, s).iter().enumerate() {
                let w = d[s] * pa;
                rho[s * na + a] = w;
                if w != 0.0 {
                    for (n, &p) in next.iter_mut().zip(mdp.next_dist(s, a)) {
                        *n += w * p;
                    }
                }
            }
        }
        state.push(std::mem::replace(&mut d, next));
        state_action.push(rho);
    }
    Ok(Marginals { state, state_action })
}

/// Shannon entropy in nats, with `0·log 0 = 0`.
pub fn entropy(dist: &[f64]) -> f64 {
    -dist.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

/// Per-step entropy gap `h(π_t) = E_{ρ_t}[-log π_t] - H₀`.
#[derive(Clone, Debug, PartialEq)]
pub struct EntropyGap {
    pub h: Vec<f64>,
    pub target: f64,
    /// Steps where a zero-probability action carried positive marginal
    /// weight; the log term there was floored at `log(f64::MIN_POSITIVE)`.
    pub degenerate: Vec<bool>,
}

impl EntropyGap {
    pub fn entropy(&self, t: usize) -> f64 {
        self.h[t] + self.target
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate.iter().any(|&d| d)
    }
}

pub fn policy_entropy_terms(policy: &PolicyTable, rho: &Marginals, target: f64) -> Result<EntropyGap, TabularError> {
    if rho.state_action.len() != policy.steps() {
        return Err(TabularError::Contract(format!(
            "marginals cover {} steps, policy {}",
            rho.state_action.len(),
            policy.steps()
        )));
    }
    let na = policy.n_actions();
    let mut h = Vec::with_capacity(policy.steps());
    let mut degenerate = Vec::with_capacity(policy.steps());
    for (t, rho_t) in rho.state_action.iter().enumerate() {
        let mut ent = 0.0;
        let mut flagged = false;
        for s in 0..policy.n_states() {
            for (a, &p) in policy.dist(t, s).iter().enumerate() {
                let w = rho_t[s * na + a];
                if w == 0.0 {
                    continue;
                }
                let log_p = if p > 0.0 {
                    p.ln()
                } else {
                    flagged = true;
                    f64::MIN_POSITIVE.ln()
                };
                ent -= w * log_p;
            }
        }
        h.push(ent - target);
        degenerate.push(flagged);
    }
    Ok(EntropyGap { h, target, degenerate })
}

/// `π(a) ∝ exp(q(a)/α)` for `α > 0`, normalized after subtracting the max.
pub fn boltzmann_policy(q: &[f64], alpha: f64) -> Result<Vec<f64>, TabularError> {
    if !(alpha > 0.0) {
        return Err(TabularError::Domain(format!(
            "Boltzmann policy needs α > 0, got {alpha}; use greedy_policy for the α = 0 limit"
        )));
    }
    Ok(boltzmann_with_logs(q, alpha).0)
}

/// Boltzmann probabilities together with their exact logarithms.
pub(crate) fn boltzmann_with_logs(q: &[f64], alpha: f64) -> (Vec<f64>, Vec<f64>) {
    let max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> = q.iter().map(|&v| (v - max) / alpha).collect();
    let log_z = scaled.iter().map(|v| v.exp()).sum::<f64>().ln();
    let logs: Vec<f64> = scaled.iter().map(|v| v - log_z).collect();
    (logs.iter().map(|l| l.exp()).collect(), logs)
}

/// Deterministic argmax with lowest-index tie-breaking: the `α → 0` limit.
pub fn greedy_policy(q: &[f64]) -> Vec<f64> {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate() {
        if v > q[best] {
            best = i;
        }
    }
    let mut dist = vec![0.0; q.len()];
    dist[best] = 1.0;
    dist
}
