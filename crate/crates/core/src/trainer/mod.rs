//! Replay buffer, training loop, evaluation and the paired backup-variant
//! experiment.
//!
//! A run directory holds `config.json`, `metrics.csv`, `checkpoint_<step>.json`
//! every `checkpoint_interval` steps, and `checkpoint_final.json`. All
//! randomness is drawn from independent ChaCha8 streams of the configured
//! seed, so a run is a pure function of its config.

mod config;
mod fig1;
mod replay;

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{sample_action, AgentError, Networks, SacAgent};
use crate::diffcore::{DiffError, ParamTree};
use crate::envsim::{make_env, EnvError, Environment};

pub use config::{RunConfig, RNG_NAME};
pub use fig1::{fig1_experiment, fig1_config, Fig1Run, Fig1Summary, FIG1_ALPHA0, FIG1_ENTROPY_TOLERANCE, FIG1_TARGET_ENTROPY};
pub use replay::{ReplayBuffer, Transition};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFIG_FILE: &str = "config.json";
pub const FINAL_CHECKPOINT: &str = "checkpoint_final.json";

/// Column order of `metrics.csv`.
pub const METRICS_HEADER: [&str; 10] = [
    "env_step",
    "episode_return",
    "alpha",
    "log_alpha",
    "mean_batch_entropy",
    "critic_loss",
    "actor_loss",
    "temperature_loss",
    "eval_return_mean",
    "eval_return_std",
];

const INIT_STREAM: u64 = 0;
const ENV_STREAM: u64 = 1;
const ACTION_STREAM: u64 = 2;
const UPDATE_STREAM: u64 = 3;
const EVAL_STREAM: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config field {field}: {message}")]
    Config { field: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("metrics log: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
}

impl TrainError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        TrainError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// One line of `metrics.csv`. Fields that do not apply at a step are empty.
///
/// Loss and entropy columns average every update since the previous row;
/// `alpha` and `log_alpha` are the values after the latest update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub env_step: u64,
    pub episode_return: Option<f64>,
    pub alpha: f64,
    pub log_alpha: f64,
    pub mean_batch_entropy: Option<f64>,
    pub critic_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    pub temperature_loss: Option<f64>,
    pub eval_return_mean: Option<f64>,
    pub eval_return_std: Option<f64>,
}

/// Reads a metrics file written by [`train`].
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>, TrainError> {
    let file = File::open(path).map_err(|e| TrainError::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != METRICS_HEADER {
        return Err(TrainError::Config {
            field: path.display().to_string(),
            message: format!("unexpected metrics header {header:?}"),
        });
    }
    Ok(reader.deserialize().collect::<Result<_, _>>()?)
}

/// Undiscounted returns of deterministic-policy episodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub returns: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl EvalStats {
    fn from_returns(returns: Vec<f64>) -> Self {
        let n = returns.len() as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
        let min = returns.iter().copied().fold(f64::INFINITY, f64::min);
        let max = returns.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self {
            returns,
            mean,
            std: var.sqrt(),
            min,
            max,
        }
    }
}

/// Runs `episodes` episodes acting with the policy mean. Episode start states
/// come from `seed`, so the same parameters and seed give the same numbers.
pub fn evaluate(params: &ParamTree, config: &RunConfig, episodes: usize, seed: u64) -> Result<EvalStats, TrainError> {
    if episodes == 0 {
        return Err(TrainError::Config {
            field: "episodes".into(),
            message: "must be at least 1".into(),
        });
    }
    let mut env = make_env(&config.env_id)?;
    let nets = Networks {
        obs_dim: env.observation_dim(),
        action_dim: env.action_space().dim(),
        hidden: config.agent.hidden_sizes.clone(),
    };
    let space = env.action_space().clone();
    let mut rng = stream(seed, EVAL_STREAM);
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut obs = env.reset(&mut rng);
        let mut total = 0.0;
        loop {
            let (action, _) = sample_action(params, &nets, &space, &obs, &mut rng, true)?;
            let step = env.step(&action)?;
            total += step.reward;
            if step.done() {
                break;
            }
            obs = step.observation;
        }
        returns.push(total);
    }
    Ok(EvalStats::from_returns(returns))
}

/// Loads `config.json` and a checkpoint from a run directory.
pub fn load_run(dir: &Path, checkpoint: Option<&str>) -> Result<(RunConfig, ParamTree), TrainError> {
    let config = RunConfig::load(&dir.join(CONFIG_FILE))?;
    let path = dir.join(checkpoint.unwrap_or(FINAL_CHECKPOINT));
    let params = ParamTree::load(&path).map_err(|e| match e {
        DiffError::Io(source) => TrainError::io(&path, source),
        other => TrainError::Config {
            field: path.display().to_string(),
            message: other.to_string(),
        },
    })?;
    Ok((config, params))
}

/// Result of [`train`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub rows: Vec<MetricsRow>,
    pub params: ParamTree,
    pub updates: u64,
    pub final_eval: Option<EvalStats>,
    /// Set when an update produced a non-finite value and the run stopped.
    pub diverged: Option<String>,
    pub warnings: Vec<String>,
}

#[derive(Default)]
struct Running {
    critic: f64,
    actor: f64,
    temperature: f64,
    entropy: f64,
    count: u64,
}

impl Running {
    fn mean(&self, total: f64) -> Option<f64> {
        (self.count > 0).then(|| total / self.count as f64)
    }
}

struct Sink {
    dir: PathBuf,
    writer: csv::Writer<BufWriter<File>>,
}

impl Sink {
    fn create(dir: &Path, config: &RunConfig) -> Result<Self, TrainError> {
        std::fs::create_dir_all(dir).map_err(|e| TrainError::io(dir, e))?;
        let config_path = dir.join(CONFIG_FILE);
        std::fs::write(&config_path, config.to_json()).map_err(|e| TrainError::io(&config_path, e))?;
        let metrics_path = dir.join(METRICS_FILE);
        let file = File::create(&metrics_path).map_err(|e| TrainError::io(&metrics_path, e))?;
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(BufWriter::new(file));
        writer.write_record(METRICS_HEADER)?;
        writer.flush().map_err(|e| TrainError::io(&metrics_path, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            writer,
        })
    }

    fn row(&mut self, row: &MetricsRow) -> Result<(), TrainError> {
        self.writer.serialize(row)?;
        self.writer.flush().map_err(|e| TrainError::io(&self.dir.join(METRICS_FILE), e))
    }

    fn checkpoint(&self, name: &str, params: &ParamTree) -> Result<(), TrainError> {
        let path = self.dir.join(name);
        params.save(&path).map_err(|e| match e {
            DiffError::Io(source) => TrainError::io(&path, source),
            other => TrainError::Diff(other),
        })
    }
}

/// Trains one agent. With `run_dir` set, artifacts are written as the run
/// progresses.
///
/// Each step acts (uniformly at random during warmup, from the stochastic
/// policy afterwards), stores the transition and, once warmup is over,
/// performs one update from a minibatch of stored transitions. A row is
/// emitted every `log_interval` steps, at every episode end and at every
/// evaluation; rows falling on the same step are merged.
pub fn train(config: &RunConfig, run_dir: Option<&Path>) -> Result<TrainOutcome, TrainError> {
    let warnings = config.validate()?;
    for w in &warnings {
        warn!("{w}");
    }
    let mut env = make_env(&config.env_id)?;
    let space = env.action_space().clone();
    let mut agent = SacAgent::new(config.agent.clone(), env.observation_dim(), space.clone(), &mut stream(config.seed, INIT_STREAM))?;
    let mut env_rng = stream(config.seed, ENV_STREAM);
    let mut action_rng = stream(config.seed, ACTION_STREAM);
    let mut update_rng = stream(config.seed, UPDATE_STREAM);
    let mut buffer = ReplayBuffer::new(config.replay_capacity);
    let mut sink = run_dir.map(|d| Sink::create(d, config)).transpose()?;

    let mut rows = Vec::new();
    let mut running = Running::default();
    let mut updates = 0;
    let mut final_eval = None;
    let mut diverged = None;
    let mut obs = env.reset(&mut env_rng);
    let mut episode_return = 0.0;

    for step in 1..=config.total_steps {
        let action = if step <= config.warmup_steps {
            space.sample_uniform(&mut action_rng)
        } else {
            agent.act(&obs, &mut action_rng, false)?
        };
        let result = env.step(&action)?;
        episode_return += result.reward;
        let done = result.done();
        buffer.push(Transition {
            obs: std::mem::take(&mut obs),
            action,
            reward: result.reward,
            next_obs: result.observation.clone(),
            terminal: result.terminal,
            truncated: result.truncated,
        });
        obs = result.observation;

        if step > config.warmup_steps {
            let batch = buffer.sample(&mut update_rng, config.batch_size);
            match agent.update(&batch, &mut update_rng) {
                Ok(stats) => {
                    updates += 1;
                    running.critic += stats.critic_loss;
                    running.actor += stats.actor_loss;
                    running.temperature += stats.temperature_loss;
                    running.entropy += stats.mean_entropy;
                    running.count += 1;
                }
                Err(AgentError::Diverged(reason)) => {
                    warn!("run diverged at step {step}: {reason}");
                    let row = MetricsRow {
                        env_step: step,
                        episode_return: None,
                        alpha: agent.alpha(),
                        log_alpha: agent.log_alpha(),
                        mean_batch_entropy: None,
                        critic_loss: Some(f64::NAN),
                        actor_loss: Some(f64::NAN),
                        temperature_loss: Some(f64::NAN),
                        eval_return_mean: None,
                        eval_return_std: None,
                    };
                    if let Some(s) = sink.as_mut() {
                        s.row(&row)?;
                    }
                    rows.push(row);
                    diverged = Some(format!("step {step}: {reason}"));
                    break;
                }
                Err(other) => return Err(other.into()),
            }
        }

        let finished = if done {
            let r = episode_return;
            episode_return = 0.0;
            obs = env.reset(&mut env_rng);
            Some(r)
        } else {
            None
        };
        let last = step == config.total_steps;
        let eval_due = last || (config.eval_interval > 0 && step % config.eval_interval == 0);
        let eval = if eval_due {
            let stats = evaluate(agent.params(), config, config.eval_episodes, config.seed)?;
            info!("step {step}: eval return {:.1} ± {:.1}, α = {:.4}", stats.mean, stats.std, agent.alpha());
            Some(stats)
        } else {
            None
        };

        if step % config.log_interval == 0 || finished.is_some() || eval.is_some() {
            let row = MetricsRow {
                env_step: step,
                episode_return: finished,
                alpha: agent.alpha(),
                log_alpha: agent.log_alpha(),
                mean_batch_entropy: running.mean(running.entropy),
                critic_loss: running.mean(running.critic),
                actor_loss: running.mean(running.actor),
                temperature_loss: running.mean(running.temperature),
                eval_return_mean: eval.as_ref().map(|e| e.mean),
                eval_return_std: eval.as_ref().map(|e| e.std),
            };
            running = Running::default();
            if let Some(s) = sink.as_mut() {
                s.row(&row)?;
            }
            rows.push(row);
        }
        if let Some(s) = &sink {
            if step % config.checkpoint_interval == 0 {
                s.checkpoint(&format!("checkpoint_{step}.json"), agent.params())?;
            }
        }
        if last {
            final_eval = eval;
        }
    }

    if let Some(s) = &sink {
        s.checkpoint(FINAL_CHECKPOINT, agent.params())?;
    }
    Ok(TrainOutcome {
        rows,
        params: agent.params().clone(),
        updates,
        final_eval,
        diverged,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> RunConfig {
        let mut cfg = RunConfig {
            total_steps: 600,
            warmup_steps: 200,
            batch_size: 32,
            replay_capacity: 1000,
            log_interval: 100,
            eval_interval: 300,
            eval_episodes: 2,
            checkpoint_interval: 250,
            ..RunConfig::default()
        };
        cfg.agent.hidden_sizes = vec![16, 16];
        cfg
    }

    #[test]
    fn zero_steps_leaves_only_the_initial_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            total_steps: 0,
            ..small_config()
        };
        let out = train(&cfg, Some(dir.path())).unwrap();
        assert!(out.rows.is_empty());
        assert_eq!(out.updates, 0);
        let mut files: Vec<String> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        files.sort();
        assert_eq!(files, [FINAL_CHECKPOINT, CONFIG_FILE, METRICS_FILE]);
        assert!(read_metrics(&dir.path().join(METRICS_FILE)).unwrap().is_empty());
        let (loaded_cfg, params) = load_run(dir.path(), None).unwrap();
        assert_eq!(loaded_cfg, cfg);
        let fresh = SacAgent::new(cfg.agent.clone(), 3, make_env(&cfg.env_id).unwrap().action_space().clone(), &mut stream(cfg.seed, INIT_STREAM)).unwrap();
        assert_eq!(&params, fresh.params());
    }

    #[test]
    fn run_writes_rows_checkpoints_and_counts_updates() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config();
        let out = train(&cfg, Some(dir.path())).unwrap();
        assert_eq!(out.updates, 400);
        assert!(out.diverged.is_none());
        let steps: Vec<u64> = out.rows.iter().map(|r| r.env_step).collect();
        assert_eq!(steps, [100, 200, 300, 400, 500, 600]);
        assert!(out.rows.windows(2).all(|w| w[0].env_step < w[1].env_step));
        assert!(out.rows[1].episode_return.is_some());
        assert!(out.rows[0].episode_return.is_none());
        assert!(out.rows[1].critic_loss.is_none(), "no updates during warmup");
        assert!(out.rows[2].critic_loss.is_some());
        assert!(out.rows[2].eval_return_mean.is_some() && out.rows[5].eval_return_mean.is_some());
        assert!(out.rows[3].eval_return_mean.is_none());
        assert_eq!(out.final_eval.as_ref().unwrap().mean, out.rows[5].eval_return_mean.unwrap());
        assert_eq!(read_metrics(&dir.path().join(METRICS_FILE)).unwrap(), out.rows);
        for name in ["checkpoint_250.json", "checkpoint_500.json", FINAL_CHECKPOINT] {
            assert!(dir.path().join(name).exists(), "{name}");
        }
        let header = std::fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
        assert_eq!(header.lines().next().unwrap(), METRICS_HEADER.join(","));
    }

    #[test]
    fn identical_configs_give_identical_metrics_files() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let cfg = small_config();
        train(&cfg, Some(a.path())).unwrap();
        train(&cfg, Some(b.path())).unwrap();
        for name in [METRICS_FILE, FINAL_CHECKPOINT, CONFIG_FILE] {
            assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap(), "{name}");
        }
    }

    #[test]
    fn different_seeds_give_different_runs() {
        let cfg = small_config();
        let other = RunConfig { seed: 1, ..cfg.clone() };
        assert_ne!(train(&cfg, None).unwrap().rows, train(&other, None).unwrap().rows);
    }

    #[test]
    fn divergence_stops_the_run_with_a_diagnostic_row() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_config();
        cfg.agent.critic_lr = 1e300;
        cfg.agent.actor_lr = 1e300;
        let out = train(&cfg, Some(dir.path())).unwrap();
        let reason = out.diverged.expect("a 1e300 learning rate must diverge");
        let last = out.rows.last().unwrap();
        assert!(last.critic_loss.unwrap().is_nan(), "{reason}");
        assert!(last.env_step <= cfg.total_steps);
        assert!(out.params.is_finite());
        assert_eq!(ParamTree::load(&dir.path().join(FINAL_CHECKPOINT)).unwrap(), out.params);
        assert_eq!(read_metrics(&dir.path().join(METRICS_FILE)).unwrap().len(), out.rows.len());
    }

    #[test]
    fn evaluation_is_repeatable_and_single_episodes_have_no_spread() {
        let cfg = small_config();
        let params = SacAgent::new(cfg.agent.clone(), 3, make_env(&cfg.env_id).unwrap().action_space().clone(), &mut stream(3, INIT_STREAM))
            .unwrap()
            .params()
            .clone();
        let a = evaluate(&params, &cfg, 3, 9).unwrap();
        assert_eq!(a, evaluate(&params, &cfg, 3, 9).unwrap());
        assert_eq!(a.returns.len(), 3);
        assert!(a.min <= a.mean && a.mean <= a.max);
        assert_eq!(evaluate(&params, &cfg, 1, 9).unwrap().std, 0.0);
        assert!(evaluate(&params, &cfg, 0, 9).is_err());
    }

    #[test]
    fn random_actor_scores_in_the_untrained_band() {
        let cfg = RunConfig::default();
        let mut means = Vec::new();
        for seed in 0..5 {
            let params = SacAgent::new(cfg.agent.clone(), 3, make_env(&cfg.env_id).unwrap().action_space().clone(), &mut stream(seed, INIT_STREAM))
                .unwrap()
                .params()
                .clone();
            means.push(evaluate(&params, &cfg, 5, seed).unwrap().mean);
        }
        let overall = means.iter().sum::<f64>() / means.len() as f64;
        assert!((-1900.0..=-700.0).contains(&overall), "{means:?}");
    }

    #[test]
    fn warmup_trajectories_do_not_depend_on_the_backup_variant() {
        let cfg = small_config();
        let mut other = cfg.clone();
        other.agent.variant = crate::BackupVariant::MissingTarget;
        let a = train(&cfg, None).unwrap();
        let b = train(&other, None).unwrap();
        let warmup = |rows: &[MetricsRow]| rows.iter().filter(|r| r.env_step <= cfg.warmup_steps).cloned().collect::<Vec<_>>();
        assert_eq!(warmup(&a.rows).len(), 2);
        assert_eq!(warmup(&a.rows), warmup(&b.rows));
        assert_ne!(a.rows, b.rows);
    }
}
