use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TabularError;

const SUM_TOL: f64 = 1e-12;

/// Finite-horizon MDP with stationary transitions and rewards.
///
/// Decision steps are `t = 0..=horizon`.
#[derive(Clone, Debug, PartialEq)]
pub struct FiniteMdp {
    n_states: usize,
    n_actions: usize,
    horizon: usize,
    /// `p[s, a, s']`, flattened.
    transition: Vec<f64>,
    /// `r[s, a]`, flattened.
    reward: Vec<f64>,
    initial_dist: Vec<f64>,
}

/// JSON interchange layout with nested arrays.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpDocument {
    pub n_states: usize,
    pub n_actions: usize,
    pub horizon: usize,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub reward: Vec<Vec<f64>>,
    pub initial_dist: Vec<f64>,
}

fn check_distribution(what: &str, dist: &[f64]) -> Result<(), TabularError> {
    if dist.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(TabularError::InvalidMdp(format!("{what} has a negative or non-finite entry")));
    }
    let sum: f64 = dist.iter().sum();
    if (sum - 1.0).abs() > SUM_TOL {
        return Err(TabularError::InvalidMdp(format!("{what} sums to {sum}, not 1")));
    }
    Ok(())
}

impl FiniteMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        horizon: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        initial_dist: Vec<f64>,
    ) -> Result<Self, TabularError> {
        if n_states == 0 || n_actions == 0 {
            return Err(TabularError::InvalidMdp("n_states and n_actions must be positive".into()));
        }
        if transition.len() != n_states * n_actions * n_states {
            return Err(TabularError::InvalidMdp(format!(
                "transition has {} entries, expected {}",
                transition.len(),
                n_states * n_actions * n_states
            )));
        }
        if reward.len() != n_states * n_actions {
            return Err(TabularError::InvalidMdp(format!(
                "reward has {} entries, expected {}",
                reward.len(),
                n_states * n_actions
            )));
        }
        if initial_dist.len() != n_states {
            return Err(TabularError::InvalidMdp(format!(
                "initial_dist has {} entries, expected {n_states}",
                initial_dist.len()
            )));
        }
        if let Some(i) = reward.iter().position(|r| !r.is_finite()) {
            return Err(TabularError::InvalidMdp(format!(
                "reward[{}][{}] is not finite",
                i / n_actions,
                i % n_actions
            )));
        }
        for (i, row) in transition.chunks(n_states).enumerate() {
            check_distribution(&format!("transition[{}][{}]", i / n_actions, i % n_actions), row)?;
        }
        check_distribution("initial_dist", &initial_dist)?;
        Ok(Self {
            n_states,
            n_actions,
            horizon,
            transition,
            reward,
            initial_dist,
        })
    }

    /// Random MDP: transition rows and the initial distribution are normalized
    /// uniform draws, rewards uniform in `[-1, 1]`.
    pub fn random<R: Rng + ?Sized>(n_states: usize, n_actions: usize, horizon: usize, rng: &mut R) -> Self {
        let mut normalized = |n: usize| {
            let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
            let total: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / total).collect::<Vec<_>>()
        };
        let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
        for _ in 0..n_states * n_actions {
            transition.extend(normalized(n_states));
        }
        let initial_dist = normalized(n_states);
        let reward = (0..n_states * n_actions).map(|_| rng.random_range(-1.0..1.0)).collect();
        Self::new(n_states, n_actions, horizon, transition, reward, initial_dist).expect("valid random MDP")
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Number of decision steps, `horizon + 1`.
    pub fn steps(&self) -> usize {
        self.horizon + 1
    }

    pub fn p(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transition[(s * self.n_actions + a) * self.n_states + next]
    }

    /// Next-state distribution for `(s, a)`.
    pub fn next_dist(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    pub fn r(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    pub fn rewards(&self, s: usize) -> &[f64] {
        &self.reward[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    /// Same dynamics with a different horizon.
    pub fn with_horizon(&self, horizon: usize) -> Self {
        Self {
            horizon,
            ..self.clone()
        }
    }

    pub fn to_document(&self) -> MdpDocument {
        MdpDocument {
            n_states: self.n_states,
            n_actions: self.n_actions,
            horizon: self.horizon,
            transition: (0..self.n_states)
                .map(|s| (0..self.n_actions).map(|a| self.next_dist(s, a).to_vec()).collect())
                .collect(),
            reward: (0..self.n_states).map(|s| self.rewards(s).to_vec()).collect(),
            initial_dist: self.initial_dist.clone(),
        }
    }

    pub fn from_document(doc: MdpDocument) -> Result<Self, TabularError> {
        let MdpDocument {
            n_states,
            n_actions,
            horizon,
            transition,
            reward,
            initial_dist,
        } = doc;
        if transition.len() != n_states || transition.iter().any(|row| row.len() != n_actions) {
            return Err(TabularError::InvalidMdp(format!(
                "transition must be nested as [{n_states}][{n_actions}][{n_states}]"
            )));
        }
        if reward.len() != n_states || reward.iter().any(|row| row.len() != n_actions) {
            return Err(TabularError::InvalidMdp(format!(
                "reward must be nested as [{n_states}][{n_actions}]"
            )));
        }
        let transition = transition.into_iter().flatten().flatten().collect();
        let reward = reward.into_iter().flatten().collect();
        Self::new(n_states, n_actions, horizon, transition, reward, initial_dist)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("finite MDP serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TabularError> {
        Self::from_document(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, TabularError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TabularError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rejects_rows_that_do_not_sum_to_one() {
        let err = FiniteMdp::new(1, 1, 0, vec![0.9], vec![0.0], vec![1.0]).unwrap_err();
        assert!(err.to_string().contains("transition[0][0]"));
        let err = FiniteMdp::new(1, 1, 0, vec![1.0], vec![0.0], vec![0.5]).unwrap_err();
        assert!(err.to_string().contains("initial_dist"));
    }

    #[test]
    fn rejects_non_finite_rewards() {
        let err = FiniteMdp::new(1, 2, 0, vec![1.0, 1.0], vec![0.0, f64::NAN], vec![1.0]).unwrap_err();
        assert!(err.to_string().contains("reward[0][1]"));
    }

    #[test]
    fn json_round_trip_preserves_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mdp = FiniteMdp::random(3, 2, 4, &mut rng);
        let back = FiniteMdp::from_json(&mdp.to_json()).unwrap();
        assert_eq!(back, mdp);
        let doc: serde_json::Value = serde_json::from_str(&mdp.to_json()).unwrap();
        assert_eq!(doc["transition"][2][1].as_array().unwrap().len(), 3);
        assert_eq!(doc["reward"][0].as_array().unwrap().len(), 2);
    }

    #[test]
    fn ragged_document_is_rejected() {
        let text = r#"{"n_states":1,"n_actions":2,"horizon":0,"transition":[[[1.0]]],"reward":[[0.0,1.0]],"initial_dist":[1.0]}"#;
        assert!(FiniteMdp::from_json(text).is_err());
    }
}
