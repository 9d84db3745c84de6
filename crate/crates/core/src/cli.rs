//! Command implementations behind the `terse` binary.
//!
//! Each command returns a [`CliError`] carrying the process exit code:
//! 2 for configuration or input problems, 3 for runtime or numerical
//! failures.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::env::{Environment, TaskEnv};
use crate::error::Error;
use crate::exec;
use crate::gspo::AdvantageMode;
use crate::policy::PolicyParams;
use crate::trainer::{self, EvalSummary, FinalStats, IterationMetrics};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const POLICY_FILE: &str = "policy.txt";
pub const EVAL_FILE: &str = "final_eval.json";
pub const SWEEP_FILE: &str = "sweep.jsonl";
pub const ABLATION_FILE: &str = "ablation.jsonl";

const EVAL_STREAM: u64 = 0xe7a1;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::PolicyFormat { .. } | Error::InvalidInput(_) => {
                CliError::Config(e.to_string())
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Loads the config and applies the `--seed` override.
pub fn load_config(path: &Path, seed: Option<u64>) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.trainer.seed = s;
    }
    Ok(cfg)
}

fn output_dir(cfg: &RunConfig, out: Option<&Path>) -> CliResult<PathBuf> {
    let dir = out
        .map(Path::to_path_buf)
        .or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs"));
    fs::create_dir_all(&dir)
        .map_err(|e| CliError::Config(format!("output dir {} is not writable: {e}", dir.display())))?;
    Ok(dir)
}

/// Held-out evaluation stream for a given seed; shared by `train` and `eval`
/// so the two agree exactly on the same parameters.
pub fn evaluate_with_seed(
    params: &PolicyParams,
    env: &TaskEnv,
    n: usize,
    max_len: usize,
    seed: u64,
) -> crate::Result<EvalSummary> {
    trainer::evaluate(params, env, n, max_len, &mut exec::stream(seed, &[EVAL_STREAM]))
}

pub fn write_metrics<W: Write>(mut w: W, history: &[IterationMetrics]) -> std::io::Result<()> {
    for m in history {
        serde_json::to_writer(&mut w, m)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    for r in rows {
        serde_json::to_writer(&mut w, r).map_err(|e| CliError::Runtime(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Outcome of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub history: Vec<IterationMetrics>,
    #[serde(skip)]
    pub params: Option<PolicyParams>,
    pub final_stats: Option<FinalStats>,
    pub eval: EvalSummary,
}

/// Trains under `cfg` without touching the filesystem.
pub fn run_training(cfg: &RunConfig) -> CliResult<RunOutcome> {
    let env = cfg.build_env()?;
    let (history, params) = trainer::train(cfg.trainer_config(), env.clone())?;
    let eval = evaluate_with_seed(&params, &env, cfg.trainer.eval_episodes, cfg.trainer.max_len, cfg.trainer.seed)?;
    let final_stats = FinalStats::from_history(&history, cfg.trainer.final_window);
    Ok(RunOutcome { history, params: Some(params), final_stats, eval })
}

/// `train`: writes the metrics log, final parameters, final evaluation and
/// the resolved config into the output directory.
pub fn cmd_train(config: &Path, out: Option<&Path>, seed: Option<u64>) -> CliResult<RunOutcome> {
    let cfg = load_config(config, seed)?;
    let dir = output_dir(&cfg, out)?;
    let outcome = run_training(&cfg)?;

    let path = dir.join(METRICS_FILE);
    let f = File::create(&path).map_err(|e| io_err(&path, e))?;
    write_metrics(BufWriter::new(f), &outcome.history).map_err(|e| io_err(&path, e))?;

    let path = dir.join(POLICY_FILE);
    let f = File::create(&path).map_err(|e| io_err(&path, e))?;
    let params = outcome.params.as_ref().expect("training returns parameters");
    let mut w = BufWriter::new(f);
    params.save(&mut w)?;
    w.flush().map_err(|e| io_err(&path, e))?;

    let path = dir.join(EVAL_FILE);
    let text = serde_json::to_string(&outcome.eval).map_err(|e| CliError::Runtime(e.to_string()))?;
    fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))?;

    let path = dir.join("config.toml");
    fs::write(&path, cfg.to_toml()).map_err(|e| io_err(&path, e))?;
    Ok(outcome)
}

/// `eval`: greedy evaluation of saved parameters on `n` episodes.
pub fn cmd_eval(params_path: &Path, config: &Path, n: Option<usize>, seed: Option<u64>) -> CliResult<EvalSummary> {
    let cfg = load_config(config, seed)?;
    let n = n.unwrap_or(cfg.trainer.eval_episodes);
    if n == 0 {
        return Err(CliError::Config("n must be >= 1".into()));
    }
    let f = File::open(params_path)
        .map_err(|e| CliError::Config(format!("cannot open {}: {e}", params_path.display())))?;
    let params = PolicyParams::load(BufReader::new(f))?;
    let env = cfg.build_env()?;
    let vocab = env.vocabulary();
    if params.vocab_size() != vocab.size()
        || params.eos_id() != vocab.eos_id()
        || params.summary_len() != env.summary_len()
    {
        return Err(CliError::Config(format!(
            "{} does not match the configured environment",
            params_path.display()
        )));
    }
    Ok(evaluate_with_seed(&params, &env, n, cfg.trainer.max_len, cfg.trainer.seed)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda_tok: f64,
    pub final_success: f64,
    pub final_mean_tokens: f64,
    pub eval_success: f64,
    pub eval_mean_tokens: f64,
}

/// Checks sweep values: at least two, finite, nonnegative, no duplicates.
pub fn validate_sweep_values(values: &[f64]) -> CliResult<()> {
    if values.len() < 2 {
        return Err(CliError::Config(format!("sweep needs at least 2 values, got {}", values.len())));
    }
    for (i, v) in values.iter().enumerate() {
        if !(v.is_finite() && *v >= 0.0) {
            return Err(CliError::Config(format!("sweep value {v} must be finite and >= 0")));
        }
        if values[..i].contains(v) {
            return Err(CliError::Config(format!("duplicate sweep value {v}")));
        }
    }
    Ok(())
}

fn lambda_variant(base: &RunConfig, lambda_tok: f64) -> RunConfig {
    let mut cfg = base.clone();
    cfg.reward.lambda_tok = lambda_tok;
    cfg.budget.lambda_tok_init = Some(lambda_tok);
    cfg
}

/// One run per `lambda_tok` value on shared seeds; rows sorted by value.
pub fn sweep_lambda(base: &RunConfig, values: &[f64]) -> CliResult<Vec<SweepRow>> {
    validate_sweep_values(values)?;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted
        .into_iter()
        .map(|v| {
            let o = run_training(&lambda_variant(base, v))?;
            let fs = o.final_stats.unwrap_or(FinalStats { success: 0.0, mean_tokens: 0.0 });
            Ok(SweepRow {
                lambda_tok: v,
                final_success: fs.success,
                final_mean_tokens: fs.mean_tokens,
                eval_success: o.eval.success_rate,
                eval_mean_tokens: o.eval.mean_tokens,
            })
        })
        .collect()
}

pub fn cmd_sweep(config: &Path, values: &[f64], out: Option<&Path>, seed: Option<u64>) -> CliResult<Vec<SweepRow>> {
    validate_sweep_values(values)?;
    let cfg = load_config(config, seed)?;
    let dir = output_dir(&cfg, out)?;
    let rows = sweep_lambda(&cfg, values)?;
    write_jsonl(&dir.join(SWEEP_FILE), &rows)?;
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    /// Token penalty removed (and the dual controller off).
    NoTokenPenalty,
    /// Advantages are centered rewards without std normalization.
    NoGroupnorm,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Full, Variant::NoTokenPenalty, Variant::NoGroupnorm];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoTokenPenalty => "no_token_penalty",
            Variant::NoGroupnorm => "no_groupnorm",
        }
    }

    pub fn apply(self, base: &RunConfig) -> RunConfig {
        let mut cfg = base.clone();
        match self {
            Variant::Full => {}
            Variant::NoTokenPenalty => {
                cfg.reward.lambda_tok = 0.0;
                cfg.budget.budget_enabled = false;
                cfg.budget.lambda_tok_init = Some(0.0);
            }
            Variant::NoGroupnorm => cfg.gspo.advantage = AdvantageMode::Centered,
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub seed: u64,
    pub final_success: f64,
    pub final_mean_tokens: f64,
    pub eval_success: f64,
    pub eval_mean_tokens: f64,
}

/// Runs every variant on seeds `seed..seed + n_seeds`; rows grouped by seed.
pub fn ablate(base: &RunConfig, n_seeds: usize) -> CliResult<Vec<AblationRow>> {
    if n_seeds == 0 {
        return Err(CliError::Config("seeds must be >= 1".into()));
    }
    let mut rows = Vec::with_capacity(n_seeds * Variant::ALL.len());
    for k in 0..n_seeds as u64 {
        let seed = base.trainer.seed + k;
        for variant in Variant::ALL {
            let mut cfg = variant.apply(base);
            cfg.trainer.seed = seed;
            let o = run_training(&cfg)?;
            let fs = o.final_stats.unwrap_or(FinalStats { success: 0.0, mean_tokens: 0.0 });
            rows.push(AblationRow {
                variant,
                seed,
                final_success: fs.success,
                final_mean_tokens: fs.mean_tokens,
                eval_success: o.eval.success_rate,
                eval_mean_tokens: o.eval.mean_tokens,
            });
        }
    }
    Ok(rows)
}

pub fn cmd_ablate(config: &Path, out: Option<&Path>, seed: Option<u64>, n_seeds: usize) -> CliResult<Vec<AblationRow>> {
    let cfg = load_config(config, seed)?;
    let dir = output_dir(&cfg, out)?;
    let rows = ablate(&cfg, n_seeds)?;
    write_jsonl(&dir.join(ABLATION_FILE), &rows)?;
    Ok(rows)
}

/// Plain-text table for terminal output.
pub fn format_ablation(rows: &[AblationRow]) -> String {
    let mut s = format!("{:<18} {:>6} {:>10} {:>10} {:>10} {:>10}\n", "variant", "seed", "success", "tokens", "eval_succ", "eval_tok");
    for r in rows {
        s += &format!(
            "{:<18} {:>6} {:>10.4} {:>10.4} {:>10.4} {:>10.4}\n",
            r.variant.label(),
            r.seed,
            r.final_success,
            r.final_mean_tokens,
            r.eval_success,
            r.eval_mean_tokens
        );
    }
    s
}

pub fn format_sweep(rows: &[SweepRow]) -> String {
    let mut s = format!("{:>10} {:>10} {:>10} {:>10} {:>10}\n", "lambda_tok", "success", "tokens", "eval_succ", "eval_tok");
    for r in rows {
        s += &format!(
            "{:>10} {:>10.4} {:>10.4} {:>10.4} {:>10.4}\n",
            r.lambda_tok, r.final_success, r.final_mean_tokens, r.eval_success, r.eval_mean_tokens
        );
    }
    s
}
