//! Command-line driver: `train`, `eval`, `verify`, `fig1` and `plot`.
//!
//! [`run_cli`] returns the process exit code: 0 on success, 1 for usage and
//! file errors, 2 for validation and numeric errors.

pub mod plot;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use entropic_sac::tabular::{verify_duality_report, FiniteMdp, TabularError, DEFAULT_GRID_RESOLUTION};
use entropic_sac::trainer::{
    evaluate, fig1_experiment, load_run, train, RunConfig, TrainError, CONFIG_FILE, FIG1_TARGET_ENTROPY,
};
use entropic_sac::BackupVariant;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use thiserror::Error;

use crate::plot::{plot_metrics, ChartSpec};

/// Caps how many trainings `fig1` runs at once.
pub const THREADS_ENV: &str = "ENTROPIC_SAC_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },
    #[error("{0}")]
    Validation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::File { .. } => 1,
            CliError::Validation(_) => 2,
        }
    }

    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::File {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }

    pub(crate) fn from_csv(path: &Path, e: csv::Error) -> Self {
        match e.kind() {
            csv::ErrorKind::Io(_) => CliError::File {
                path: path.to_path_buf(),
                message: e.to_string(),
            },
            _ => CliError::Validation(format!("{}: {e}", path.display())),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Io { path, source } => CliError::File {
                path,
                message: source.to_string(),
            },
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<TabularError> for CliError {
    fn from(e: TabularError) -> Self {
        match e {
            TabularError::Io(message) => CliError::Usage(message),
            other => CliError::Validation(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "entropic-sac", version, about = "Entropy-constrained soft actor-critic with a duality verifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one agent from a JSON config.
    Train(TrainArgs),
    /// Evaluate a run's checkpoint with the deterministic policy.
    Eval(EvalArgs),
    /// Compare the dual solver with a brute-force primal search on a tabular MDP.
    Verify(VerifyArgs),
    /// Train the corrected and missing-target backups side by side.
    Fig1(Fig1Args),
    /// Chart metrics columns against env_step as SVG.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    variant: Option<BackupVariant>,
    #[arg(long = "target-entropy", allow_negative_numbers = true)]
    target_entropy: Option<f64>,
    #[arg(long)]
    alpha0: Option<f64>,
    #[arg(long)]
    steps: Option<u64>,
    /// Accept a target entropy above the action box bound with a warning.
    #[arg(long)]
    allow_entropy_above_bound: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
    /// Run directory; defaults to `runs/<variant>_seed<seed>`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long, default_value_t = 10)]
    episodes: usize,
    /// Defaults to the run's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint file inside the run directory.
    #[arg(long, default_value = "checkpoint_final.json")]
    checkpoint: String,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Path to an MDP JSON document, or `random`.
    #[arg(long, default_value = "random")]
    mdp: String,
    #[arg(long, default_value_t = 0.3, allow_negative_numbers = true)]
    h0: f64,
    #[arg(long, default_value_t = DEFAULT_GRID_RESOLUTION)]
    grid: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Horizon of a random MDP, or a replacement horizon for a loaded one.
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long, default_value_t = 2)]
    states: usize,
    #[arg(long, default_value_t = 2)]
    actions: usize,
    /// Also write the report here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct Fig1Args {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<u64>,
    /// Base config; the experiment fixes target entropy, α₀ and the variant.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PlotArgs {
    /// Run directory; repeat to overlay runs.
    #[arg(long, required = true)]
    run: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "alpha")]
    columns: Vec<String>,
    /// Defaults to `<first run>/<columns>.svg`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    title: Option<String>,
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Reads a possibly partial config file and fills every missing field with
/// its default, so the persisted config is complete. Unknown fields are
/// rejected.
pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let patch: Value =
        serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    if !patch.is_object() {
        return Err(CliError::Validation(format!("{}: config must be a JSON object", path.display())));
    }
    let mut full = serde_json::to_value(RunConfig::default()).expect("default config serializes");
    merge(&mut full, patch);
    serde_json::from_value(full).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn apply(cfg: &mut RunConfig, o: &Overrides) {
    if let Some(seed) = o.seed {
        cfg.seed = seed;
    }
    if let Some(v) = o.variant {
        cfg.agent.variant = v;
    }
    if let Some(h) = o.target_entropy {
        cfg.agent.target_entropy = h;
    }
    if let Some(a) = o.alpha0 {
        cfg.agent.alpha0 = a;
    }
    if let Some(n) = o.steps {
        cfg.total_steps = n;
    }
    if o.allow_entropy_above_bound {
        cfg.allow_entropy_above_bound = true;
    }
}

fn print_warnings(cfg: &RunConfig) -> Result<(), CliError> {
    for w in cfg.validate()? {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&args.config)?;
    apply(&mut cfg, &args.overrides);
    print_warnings(&cfg)?;
    let out = args
        .out
        .unwrap_or_else(|| PathBuf::from("runs").join(format!("{}_seed{}", cfg.agent.variant, cfg.seed)));
    let outcome = train(&cfg, Some(&out))?;
    let summary = json!({
        "run_dir": out,
        "steps": outcome.rows.last().map_or(0, |r| r.env_step),
        "updates": outcome.updates,
        "final_eval": outcome.final_eval,
        "diverged": outcome.diverged,
    });
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    match outcome.diverged {
        Some(reason) => Err(CliError::Validation(format!(
            "training diverged ({reason}); last finite checkpoint kept in {}",
            out.display()
        ))),
        None => Ok(()),
    }
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    if args.episodes == 0 {
        return Err(CliError::Validation("--episodes must be at least 1".into()));
    }
    let (cfg, params) = load_run(&args.run, Some(&args.checkpoint))?;
    let stats = evaluate(&params, &cfg, args.episodes, args.seed.unwrap_or(cfg.seed))?;
    println!("{}", serde_json::to_string_pretty(&stats).expect("stats serialize"));
    Ok(())
}

fn cmd_verify(args: VerifyArgs) -> Result<(), CliError> {
    let mdp = if args.mdp == "random" {
        if args.states == 0 || args.actions == 0 {
            return Err(CliError::Validation("--states and --actions must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
        FiniteMdp::random(args.states, args.actions, args.horizon.unwrap_or(2), &mut rng)
    } else {
        let path = Path::new(&args.mdp);
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mdp = FiniteMdp::from_json(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        match args.horizon {
            Some(h) => mdp.with_horizon(h),
            None => mdp,
        }
    };
    let report = verify_duality_report(&mdp, args.h0, args.grid)?;
    let text = report.to_json();
    if let Some(path) = &args.report {
        std::fs::write(path, &text).map_err(|e| CliError::io(path, e))?;
    }
    println!("{text}");
    Ok(())
}

/// Worker threads allowed by `ENTROPIC_SAC_THREADS`, defaulting to the
/// machine's parallelism.
pub fn thread_cap() -> Result<usize, CliError> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::Validation(format!("{THREADS_ENV}={v:?} is not a positive integer"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn cmd_fig1(args: Fig1Args) -> Result<(), CliError> {
    let mut base = match &args.config {
        Some(path) => load_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        base.seed = seed;
    }
    if let Some(steps) = args.steps {
        base.total_steps = steps;
    }
    let summary = fig1_experiment(&base, &args.out, thread_cap()? >= 2)?;
    let runs = vec![summary.corrected.run_dir.clone(), summary.missing_target.run_dir.clone()];
    plot_metrics(&ChartSpec {
        runs,
        columns: vec!["alpha".into()],
        out: args.out.join("alpha_comparison.svg"),
        title: format!("α with target entropy {FIG1_TARGET_ENTROPY}, seed {}", base.seed),
    })?;
    println!("{}", summary.to_json());
    Ok(())
}

fn cmd_plot(args: PlotArgs) -> Result<(), CliError> {
    for run in &args.run {
        if !run.join(CONFIG_FILE).exists() && !run.join("metrics.csv").exists() {
            return Err(CliError::File {
                path: run.clone(),
                message: "not a run directory (no metrics.csv)".into(),
            });
        }
    }
    let out = args
        .out
        .unwrap_or_else(|| args.run[0].join(format!("{}.svg", args.columns.join("_"))));
    let title = args.title.unwrap_or_else(|| format!("{} vs env_step", args.columns.join(", ")));
    plot_metrics(&ChartSpec {
        runs: args.run,
        columns: args.columns,
        out: out.clone(),
        title,
    })?;
    println!("{}", out.display());
    Ok(())
}

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Fig1(a) => cmd_fig1(a),
        Command::Plot(a) => cmd_plot(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_configs_are_completed_with_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"seed": 5, "agent": {"target_entropy": -0.5}}"#).unwrap();
        let cfg = load_config(&path).unwrap();
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.agent.target_entropy, -0.5);
        assert_eq!(cfg.agent.gamma, RunConfig::default().agent.gamma);
    }

    #[test]
    fn unknown_and_mistyped_fields_are_validation_errors() {
        let dir = tempfile::tempdir().unwrap();
        for body in [r#"{"sed": 5}"#, r#"{"agent": {"gamma": "high"}}"#, "[1, 2]", "{"] {
            let path = dir.path().join("c.json");
            std::fs::write(&path, body).unwrap();
            let err = load_config(&path).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{body}: {err}");
            assert!(err.to_string().contains("c.json"), "{err}");
        }
    }

    #[test]
    fn overrides_land_in_the_config() {
        let mut cfg = RunConfig::default();
        let o = Overrides {
            seed: Some(3),
            variant: Some(BackupVariant::MissingTarget),
            target_entropy: Some(0.5),
            alpha0: Some(2.0),
            steps: Some(10),
            allow_entropy_above_bound: true,
        };
        apply(&mut cfg, &o);
        assert_eq!(
            (cfg.seed, cfg.agent.variant, cfg.agent.target_entropy, cfg.agent.alpha0, cfg.total_steps),
            (3, BackupVariant::MissingTarget, 0.5, 2.0, 10)
        );
        assert!(cfg.allow_entropy_above_bound);
    }
}
