use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{train, MetricsRow, RunConfig, TrainError, TrainOutcome};
use crate::BackupVariant;

pub const FIG1_TARGET_ENTROPY: f64 = 0.5;
pub const FIG1_ALPHA0: f64 = 1.0;
/// Allowed distance in nats between the corrected run's final-third batch
/// entropy and the target.
pub const FIG1_ENTROPY_TOLERANCE: f64 = 0.25;

/// `base` with the experiment's target entropy, initial temperature and the
/// given backup.
pub fn fig1_config(base: &RunConfig, variant: BackupVariant) -> RunConfig {
    let mut cfg = base.clone();
    cfg.agent.target_entropy = FIG1_TARGET_ENTROPY;
    cfg.agent.alpha0 = FIG1_ALPHA0;
    cfg.agent.variant = variant;
    cfg
}

/// Final-third statistics of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fig1Run {
    pub variant: BackupVariant,
    pub run_dir: PathBuf,
    pub steps_completed: u64,
    pub diverged: Option<String>,
    /// Mean of `alpha` over rows in the final third of the schedule.
    pub final_third_alpha: Option<f64>,
    pub final_third_log_alpha: Option<f64>,
    pub final_third_entropy: Option<f64>,
    pub final_eval_return_mean: Option<f64>,
    pub final_eval_return_std: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fig1Summary {
    pub seed: u64,
    pub total_steps: u64,
    pub target_entropy: f64,
    pub alpha0: f64,
    /// Rows with `env_step` above this count as the final third.
    pub final_third_start: u64,
    pub corrected: Fig1Run,
    pub missing_target: Fig1Run,
    /// `|corrected entropy - H₀| ≤ FIG1_ENTROPY_TOLERANCE`.
    pub corrected_entropy_on_target: bool,
    /// Missing-target run's final-third mean α is strictly larger.
    pub missing_target_alpha_higher: bool,
}

impl Fig1Summary {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}

fn mean_of(rows: &[&MetricsRow], f: impl Fn(&MetricsRow) -> Option<f64>) -> Option<f64> {
    let values: Vec<f64> = rows.iter().filter_map(|r| f(r)).collect();
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn summarize(variant: BackupVariant, run_dir: PathBuf, outcome: &TrainOutcome, start: u64) -> Fig1Run {
    // The diagnostic row of a diverged run carries no statistics.
    let tail: Vec<&MetricsRow> = outcome
        .rows
        .iter()
        .filter(|r| r.env_step > start && !r.critic_loss.is_some_and(f64::is_nan))
        .collect();
    Fig1Run {
        variant,
        run_dir,
        steps_completed: outcome.rows.last().map_or(0, |r| r.env_step),
        diverged: outcome.diverged.clone(),
        final_third_alpha: mean_of(&tail, |r| Some(r.alpha)),
        final_third_log_alpha: mean_of(&tail, |r| Some(r.log_alpha)),
        final_third_entropy: mean_of(&tail, |r| r.mean_batch_entropy),
        final_eval_return_mean: outcome.final_eval.as_ref().map(|e| e.mean),
        final_eval_return_std: outcome.final_eval.as_ref().map(|e| e.std),
    }
}

/// Trains the corrected and missing-target variants from the same seed into
/// `out/corrected` and `out/missing_target`, then writes `out/summary.json`.
/// With `parallel` the two runs share nothing and train on two threads.
pub fn fig1_experiment(base: &RunConfig, out: &Path, parallel: bool) -> Result<Fig1Summary, TrainError> {
    let corrected_cfg = fig1_config(base, BackupVariant::Corrected);
    let missing_cfg = fig1_config(base, BackupVariant::MissingTarget);
    corrected_cfg.validate()?;
    let corrected_dir = out.join(BackupVariant::Corrected.as_str());
    let missing_dir = out.join(BackupVariant::MissingTarget.as_str());

    let (corrected, missing) = if parallel {
        std::thread::scope(|s| {
            let handle = s.spawn(|| train(&missing_cfg, Some(&missing_dir)));
            let corrected = train(&corrected_cfg, Some(&corrected_dir));
            let missing = handle.join().expect("training thread panicked");
            (corrected, missing)
        })
    } else {
        (train(&corrected_cfg, Some(&corrected_dir)), train(&missing_cfg, Some(&missing_dir)))
    };
    let (corrected, missing) = (corrected?, missing?);

    let start = base.total_steps * 2 / 3;
    let corrected = summarize(BackupVariant::Corrected, corrected_dir, &corrected, start);
    let missing_target = summarize(BackupVariant::MissingTarget, missing_dir, &missing, start);
    let corrected_entropy_on_target = corrected
        .final_third_entropy
        .is_some_and(|h| (h - FIG1_TARGET_ENTROPY).abs() <= FIG1_ENTROPY_TOLERANCE);
    let missing_target_alpha_higher = match (missing_target.final_third_alpha, corrected.final_third_alpha) {
        (Some(m), Some(c)) => m > c,
        _ => false,
    };
    let summary = Fig1Summary {
        seed: base.seed,
        total_steps: base.total_steps,
        target_entropy: FIG1_TARGET_ENTROPY,
        alpha0: FIG1_ALPHA0,
        final_third_start: start,
        corrected,
        missing_target,
        corrected_entropy_on_target,
        missing_target_alpha_higher,
    };
    let path = out.join("summary.json");
    std::fs::write(&path, summary.to_json()).map_err(|e| TrainError::io(&path, e))?;
    Ok(summary)
}
