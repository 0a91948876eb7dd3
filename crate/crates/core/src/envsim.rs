//! Pendulum swing-up and the environment interface the trainer drives.
//!
//! The pendulum starts at a random angle and must be swung up and balanced
//! with a bounded torque. Episodes never terminate; they are truncated after
//! [`EPISODE_LIMIT`] steps so the critic keeps bootstrapping through the time
//! limit.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, RngCore};
use serde::Serialize;
use thiserror::Error;

pub const PENDULUM_ID: &str = "pendulum-v1-local";
pub const EPISODE_LIMIT: usize = 200;
pub const MAX_SPEED: f64 = 8.0;
pub const MAX_TORQUE: f64 = 2.0;
pub const DT: f64 = 0.05;
pub const GRAVITY: f64 = 10.0;
pub const MASS: f64 = 1.0;
pub const LENGTH: f64 = 1.0;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("unknown environment id {0:?}; available: {PENDULUM_ID}")]
    UnknownEnv(String),
    #[error("trajectory dump: {0}")]
    Csv(#[from] csv::Error),
}

/// Box-shaped continuous action space.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionSpace {
    low: Vec<f64>,
    high: Vec<f64>,
}

impl ActionSpace {
    pub fn new(low: Vec<f64>, high: Vec<f64>) -> Result<Self, EnvError> {
        if low.is_empty() || low.len() != high.len() {
            return Err(EnvError::Contract(format!(
                "action bounds must be non-empty and equal length, got {} and {}",
                low.len(),
                high.len()
            )));
        }
        if let Some(i) = (0..low.len()).find(|&i| !(low[i] < high[i]) || !low[i].is_finite() || !high[i].is_finite()) {
            return Err(EnvError::Contract(format!("action bound {i}: need finite low < high")));
        }
        Ok(Self { low, high })
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn low(&self) -> &[f64] {
        &self.low
    }

    pub fn high(&self) -> &[f64] {
        &self.high
    }

    /// `(high - low) / 2` per dimension.
    pub fn half_range(&self) -> Vec<f64> {
        self.low.iter().zip(&self.high).map(|(l, h)| (h - l) / 2.0).collect()
    }

    pub fn center(&self) -> Vec<f64> {
        self.low.iter().zip(&self.high).map(|(l, h)| (h + l) / 2.0).collect()
    }

    /// `|A| = Π (high - low)`.
    pub fn volume(&self) -> f64 {
        self.low.iter().zip(&self.high).map(|(l, h)| h - l).product()
    }

    /// Entropy of the uniform distribution over the box, the largest
    /// differential entropy any policy on this space can have.
    pub fn max_entropy(&self) -> f64 {
        self.low.iter().zip(&self.high).map(|(l, h)| (h - l).ln()).sum()
    }

    pub fn sample_uniform(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.low.iter().zip(&self.high).map(|(&l, &h)| rng.random_range(l..h)).collect()
    }

    pub fn clamp(&self, action: &[f64]) -> Vec<f64> {
        action.iter().zip(self.low.iter().zip(&self.high)).map(|(a, (l, h))| a.clamp(*l, *h)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PendulumState {
    /// Unwrapped angle, 0 is upright.
    pub theta: f64,
    pub theta_dot: f64,
    pub step_index: usize,
}

impl PendulumState {
    pub fn observation(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.theta_dot]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
    pub truncated: bool,
}

impl StepResult {
    pub fn done(&self) -> bool {
        self.terminal || self.truncated
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpisodeOutcome {
    pub return_sum: f64,
    pub length: usize,
    pub truncated: bool,
    pub terminal: bool,
}

/// Episodic control task with a continuous box action space.
pub trait Environment {
    fn id(&self) -> &str;
    fn observation_dim(&self) -> usize;
    fn action_space(&self) -> &ActionSpace;
    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> Result<StepResult, EnvError>;
}

/// Maps an angle into `[-π, π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    (theta + PI).rem_euclid(2.0 * PI) - PI
}

/// Pure pendulum dynamics: returns the next state and the reward of the
/// entry state. `torque` is clamped to the torque limit.
pub fn pendulum_dynamics(state: PendulumState, torque: f64) -> (PendulumState, f64) {
    let u = torque.clamp(-MAX_TORQUE, MAX_TORQUE);
    let PendulumState { theta, theta_dot, step_index } = state;
    let cost = wrap_angle(theta).powi(2) + 0.1 * theta_dot.powi(2) + 0.001 * u.powi(2);
    let new_theta_dot = (theta_dot + (3.0 * GRAVITY / (2.0 * LENGTH) * theta.sin() + 3.0 / (MASS * LENGTH * LENGTH) * u) * DT)
        .clamp(-MAX_SPEED, MAX_SPEED);
    let new_theta = theta + new_theta_dot * DT;
    (
        PendulumState {
            theta: new_theta,
            theta_dot: new_theta_dot,
            step_index: step_index + 1,
        },
        -cost,
    )
}

#[derive(Clone, Debug)]
pub struct Pendulum {
    state: PendulumState,
    space: ActionSpace,
}

impl Default for Pendulum {
    fn default() -> Self {
        Self::new()
    }
}

impl Pendulum {
    pub fn new() -> Self {
        Self {
            state: PendulumState {
                theta: 0.0,
                theta_dot: 0.0,
                step_index: 0,
            },
            space: ActionSpace::new(vec![-MAX_TORQUE], vec![MAX_TORQUE]).expect("valid torque bounds"),
        }
    }

    pub fn state(&self) -> PendulumState {
        self.state
    }

    pub fn set_state(&mut self, state: PendulumState) {
        self.state = state;
    }
}

impl Environment for Pendulum {
    fn id(&self) -> &str {
        PENDULUM_ID
    }

    fn observation_dim(&self) -> usize {
        3
    }

    fn action_space(&self) -> &ActionSpace {
        &self.space
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.state = PendulumState {
            theta: rng.random_range(-PI..=PI),
            theta_dot: rng.random_range(-1.0..=1.0),
            step_index: 0,
        };
        self.state.observation()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult, EnvError> {
        if action.len() != 1 {
            return Err(EnvError::Contract(format!("pendulum takes one torque, got {} values", action.len())));
        }
        if !action[0].is_finite() {
            return Err(EnvError::Contract(format!("non-finite torque {}", action[0])));
        }
        if self.state.step_index >= EPISODE_LIMIT {
            return Err(EnvError::Contract("episode already truncated; call reset".into()));
        }
        let (next, reward) = pendulum_dynamics(self.state, action[0]);
        self.state = next;
        Ok(StepResult {
            observation: next.observation(),
            reward,
            terminal: false,
            truncated: next.step_index >= EPISODE_LIMIT,
        })
    }
}

pub fn make_env(id: &str) -> Result<Pendulum, EnvError> {
    match id {
        PENDULUM_ID => Ok(Pendulum::new()),
        other => Err(EnvError::UnknownEnv(other.to_string())),
    }
}

/// One row of a pendulum trajectory dump.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TrajectoryRecord {
    pub step: usize,
    pub theta: f64,
    pub theta_dot: f64,
    pub action: f64,
    pub reward: f64,
}

/// Writes `step,theta,theta_dot,action,reward` rows.
pub fn write_trajectory_csv(path: &Path, records: &[TrajectoryRecord]) -> Result<(), EnvError> {
    let mut writer = csv::Writer::from_path(path)?;
    for record in records {
        writer.serialize(record)?;
    }
    writer.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Runs one episode to its end, choosing actions with `policy`.
pub fn run_episode<E, F>(env: &mut E, rng: &mut dyn RngCore, mut policy: F) -> Result<EpisodeOutcome, EnvError>
where
    E: Environment + ?Sized,
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let mut obs = env.reset(rng);
    let mut outcome = EpisodeOutcome {
        return_sum: 0.0,
        length: 0,
        truncated: false,
        terminal: false,
    };
    loop {
        let step = env.step(&policy(&obs))?;
        outcome.return_sum += step.reward;
        outcome.length += 1;
        if step.done() {
            outcome.truncated = step.truncated;
            outcome.terminal = step.terminal;
            return Ok(outcome);
        }
        obs = step.observation;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn at(theta: f64, theta_dot: f64) -> PendulumState {
        PendulumState {
            theta,
            theta_dot,
            step_index: 0,
        }
    }

    #[test]
    fn upright_rest_is_a_fixed_point() {
        let (next, reward) = pendulum_dynamics(at(0.0, 0.0), 0.0);
        assert_eq!((next.theta, next.theta_dot), (0.0, 0.0));
        assert_eq!(reward, 0.0);
    }

    #[test]
    fn hanging_down_costs_pi_squared() {
        let (_, reward) = pendulum_dynamics(at(PI, 0.0), 0.0);
        assert!((reward + 9.869604401089358).abs() <= 1e-12);
    }

    #[test]
    fn single_step_matches_straight_line_update() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let theta = rng.random_range(-3.0..3.0);
            let theta_dot = rng.random_range(-2.0..2.0);
            let (next, _) = pendulum_dynamics(at(theta, theta_dot), 0.0);
            let accel = 15.0 * f64::sin(theta);
            let w = theta_dot + accel * 0.05;
            assert!(w.abs() < 8.0);
            assert!((next.theta_dot - w).abs() <= 1e-15);
            assert!((next.theta - (theta + w * 0.05)).abs() <= 1e-15);
        }
    }

    #[test]
    fn torque_is_clamped_before_use() {
        let (a, ra) = pendulum_dynamics(at(0.3, 0.1), 50.0);
        let (b, rb) = pendulum_dynamics(at(0.3, 0.1), 2.0);
        assert_eq!(a, b);
        assert_eq!(ra, rb);
    }

    #[test]
    fn reset_is_reproducible_and_observation_on_circle() {
        let mut env = Pendulum::new();
        let a = env.reset(&mut ChaCha8Rng::seed_from_u64(11));
        let b = env.reset(&mut ChaCha8Rng::seed_from_u64(11));
        assert_eq!(a, b);
        assert!((a[0] * a[0] + a[1] * a[1] - 1.0).abs() <= 1e-12);
        assert!(a[2].abs() <= 1.0);
    }

    #[test]
    fn reset_angle_is_centered() {
        let mut env = Pendulum::new();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 100_000;
        let mean = (0..n).map(|_| {
            env.reset(&mut rng);
            env.state().theta
        }).sum::<f64>() / n as f64;
        // Uniform on [-π, π] has standard deviation π/√3.
        let se = PI / 3f64.sqrt() / (n as f64).sqrt();
        assert!(mean.abs() <= 3.0 * se, "mean {mean}, 3σ {}", 3.0 * se);
    }

    #[test]
    fn episodes_truncate_at_the_limit() {
        let mut env = Pendulum::new();
        let outcome = run_episode(&mut env, &mut ChaCha8Rng::seed_from_u64(1), |_| vec![0.0]).unwrap();
        assert_eq!(outcome.length, EPISODE_LIMIT);
        assert!(outcome.truncated && !outcome.terminal);
        assert!(matches!(env.step(&[0.0]), Err(EnvError::Contract(_))));
    }

    #[test]
    fn rejects_bad_actions() {
        let mut env = Pendulum::new();
        env.reset(&mut ChaCha8Rng::seed_from_u64(1));
        assert!(matches!(env.step(&[f64::NAN]), Err(EnvError::Contract(_))));
        assert!(matches!(env.step(&[0.0, 1.0]), Err(EnvError::Contract(_))));
    }

    #[test]
    fn pendulum_action_space_volume() {
        let env = Pendulum::new();
        assert_eq!(env.action_space().volume(), 4.0);
        assert!((env.action_space().max_entropy() - 4f64.ln()).abs() <= 1e-15);
        assert!(make_env("cartpole").is_err());
    }

    #[test]
    fn trajectories_are_deterministic_and_dump_to_csv() {
        let roll = || {
            let mut env = Pendulum::new();
            let mut rng = ChaCha8Rng::seed_from_u64(21);
            env.reset(&mut rng);
            let mut records = Vec::new();
            for step in 0..50 {
                let u = rng.random_range(-2.0..2.0);
                let before = env.state();
                let result = env.step(&[u]).unwrap();
                records.push(TrajectoryRecord {
                    step,
                    theta: before.theta,
                    theta_dot: before.theta_dot,
                    action: u,
                    reward: result.reward,
                });
            }
            records
        };
        let first = roll();
        assert_eq!(first, roll());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trajectory.csv");
        write_trajectory_csv(&path, &first).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("step,theta,theta_dot,action,reward\n"));
        assert_eq!(text.lines().count(), 51);
    }

    proptest! {
        #[test]
        fn reward_and_speed_stay_bounded(theta in -20.0..20.0f64, theta_dot in -8.0..8.0f64, u in -10.0..10.0f64) {
            let (next, reward) = pendulum_dynamics(at(theta, theta_dot), u);
            prop_assert!(next.theta_dot.abs() <= MAX_SPEED);
            prop_assert!(reward <= 0.0);
            prop_assert!(reward >= -(PI * PI + 0.1 * 64.0 + 0.001 * 4.0));
        }

        #[test]
        fn wrapped_angle_is_in_range(theta in -100.0..100.0f64) {
            let w = wrap_angle(theta);
            prop_assert!((-PI..PI).contains(&w));
            prop_assert!((w.sin() - theta.sin()).abs() <= 1e-9);
        }
    }
}
