//! Run configuration: a sectioned TOML file.
//!
//! ```toml
//! [reward]
//! lambda_tok = 0.05      # required
//! lambda_turn = 0.0
//! lambda_rep = 0.0
//!
//! [gspo]
//! eps_clip = 0.2
//! eps_std = 1e-8
//! exact_mode = false     # true forces eps_std = 0
//! advantage = "group_norm"   # or "centered"
//!
//! [budget]
//! budget_enabled = false
//! budget_B = 1.0
//! budget_eta = 0.01
//! lambda_tok_init = 0.0  # defaults to reward.lambda_tok
//!
//! [trainer]
//! batch_size = 32
//! group_size = 8
//! learning_rate = 4.0
//! iterations = 300
//! seed = 0
//!
//! [env]
//! kind = "key_echo"      # or "relay_sum"
//!
//! [output]
//! dir = "runs/example"
//! ```
//!
//! Only `reward.lambda_tok` is mandatory. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::budget::BudgetController;
use crate::env::{EnvKind, KeyEchoEnv, RelaySumEnv, TaskEnv};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::gspo::{AdvantageMode, ClipConfig};
use crate::reward::RewardWeights;
use crate::trainer::TrainerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub reward: RewardSection,
    #[serde(default)]
    pub gspo: GspoSection,
    #[serde(default)]
    pub budget: BudgetSection,
    #[serde(default)]
    pub trainer: TrainerSection,
    #[serde(default)]
    pub env: EnvSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardSection {
    pub lambda_tok: f64,
    #[serde(default)]
    pub lambda_turn: f64,
    #[serde(default)]
    pub lambda_rep: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GspoSection {
    pub eps_clip: f64,
    pub eps_std: f64,
    pub exact_mode: bool,
    pub advantage: AdvantageMode,
}

impl Default for GspoSection {
    fn default() -> Self {
        let c = ClipConfig::default();
        Self { eps_clip: c.eps_clip, eps_std: c.eps_std, exact_mode: false, advantage: AdvantageMode::GroupNorm }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BudgetSection {
    pub budget_enabled: bool,
    #[serde(rename = "budget_B", skip_serializing_if = "Option::is_none")]
    pub budget_b: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget_eta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_tok_init: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerSection {
    pub batch_size: usize,
    pub group_size: usize,
    pub learning_rate: f64,
    pub iterations: usize,
    pub sync_every: usize,
    pub max_len: usize,
    pub seed: u64,
    pub context_order: usize,
    pub epochs: usize,
    pub momentum: bool,
    pub parallel: bool,
    /// Greedy evaluation episodes after training.
    pub eval_episodes: usize,
    /// Trailing iterations averaged into the final success and token figures.
    pub final_window: usize,
}

impl Default for TrainerSection {
    fn default() -> Self {
        let t = TrainerConfig::default();
        Self {
            batch_size: t.batch_size,
            group_size: t.group_size,
            learning_rate: t.learning_rate,
            iterations: t.iterations,
            sync_every: t.sync_every,
            max_len: t.max_len,
            seed: t.seed,
            context_order: t.context_order,
            epochs: t.epochs,
            momentum: t.momentum,
            parallel: true,
            eval_episodes: 200,
            final_window: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSection {
    pub kind: EnvKind,
    /// key_echo only.
    pub keys: usize,
    pub distractors: usize,
    pub query_len: usize,
}

impl Default for EnvSection {
    fn default() -> Self {
        Self { kind: EnvKind::KeyEcho, keys: 4, distractors: 8, query_len: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

fn check(cond: bool, key: &str, msg: impl std::fmt::Display) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::config(format!("{key}: {msg}")))
    }
}

fn nonneg(key: &str, v: f64) -> Result<()> {
    check(v.is_finite() && v >= 0.0, key, format!("must be finite and >= 0, got {v}"))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config always serializes")
    }

    /// Checks every numeric constraint, naming the offending `section.key`.
    pub fn validate(&self) -> Result<()> {
        let r = &self.reward;
        nonneg("reward.lambda_tok", r.lambda_tok)?;
        nonneg("reward.lambda_turn", r.lambda_turn)?;
        nonneg("reward.lambda_rep", r.lambda_rep)?;

        let g = &self.gspo;
        check(g.eps_clip > 0.0 && g.eps_clip < 1.0, "gspo.eps_clip", format!("must lie in (0, 1), got {}", g.eps_clip))?;
        nonneg("gspo.eps_std", g.eps_std)?;

        let b = &self.budget;
        if let Some(init) = b.lambda_tok_init {
            nonneg("budget.lambda_tok_init", init)?;
        }
        if b.budget_enabled {
            let target = b.budget_b.ok_or_else(|| Error::config("budget.budget_B: required when budget_enabled = true"))?;
            check(target.is_finite() && target > 0.0, "budget.budget_B", format!("must be > 0, got {target}"))?;
            let eta = b.budget_eta.ok_or_else(|| Error::config("budget.budget_eta: required when budget_enabled = true"))?;
            check(eta.is_finite() && eta > 0.0, "budget.budget_eta", format!("must be > 0, got {eta}"))?;
        }

        let t = &self.trainer;
        check(t.batch_size >= 1, "trainer.batch_size", "must be >= 1")?;
        check(t.group_size >= 2, "trainer.group_size", format!("must be >= 2, got {}", t.group_size))?;
        check(
            t.learning_rate.is_finite() && t.learning_rate >= 0.0,
            "trainer.learning_rate",
            format!("must be finite and >= 0, got {}", t.learning_rate),
        )?;
        check(t.sync_every >= 1, "trainer.sync_every", "must be >= 1")?;
        check(t.max_len >= 1, "trainer.max_len", "must be >= 1")?;
        check(t.epochs >= 1, "trainer.epochs", "must be >= 1")?;
        check(t.eval_episodes >= 1, "trainer.eval_episodes", "must be >= 1")?;
        check(t.final_window >= 1, "trainer.final_window", "must be >= 1")?;

        let e = &self.env;
        if e.kind == EnvKind::KeyEcho {
            check(e.keys >= 1, "env.keys", "must be >= 1")?;
            check(e.distractors >= 1, "env.distractors", "must be >= 1")?;
            check(e.query_len >= 1, "env.query_len", "must be >= 1")?;
        }
        Ok(())
    }

    pub fn clip(&self) -> ClipConfig {
        let eps_std = if self.gspo.exact_mode { 0.0 } else { self.gspo.eps_std };
        ClipConfig { eps_clip: self.gspo.eps_clip, eps_std }
    }

    pub fn trainer_config(&self) -> TrainerConfig {
        let t = &self.trainer;
        let weights = RewardWeights {
            lambda_tok: self.reward.lambda_tok,
            lambda_turn: self.reward.lambda_turn,
            lambda_rep: self.reward.lambda_rep,
        };
        let b = &self.budget;
        let lambda0 = b.lambda_tok_init.unwrap_or(self.reward.lambda_tok);
        let budget = if b.budget_enabled {
            BudgetController {
                lambda_tok: lambda0,
                target_budget: b.budget_b.unwrap_or(1.0),
                step: b.budget_eta.unwrap_or(0.01),
                enabled: true,
            }
        } else {
            BudgetController::disabled(lambda0)
        };
        TrainerConfig {
            batch_size: t.batch_size,
            group_size: t.group_size,
            learning_rate: t.learning_rate,
            iterations: t.iterations,
            sync_every: t.sync_every,
            max_len: t.max_len,
            seed: t.seed,
            context_order: t.context_order,
            epochs: t.epochs,
            momentum: t.momentum,
            clip: self.clip(),
            advantage: self.gspo.advantage,
            weights,
            budget,
            execution: if t.parallel { Execution::Parallel } else { Execution::Sequential },
        }
    }

    pub fn build_env(&self) -> Result<TaskEnv> {
        Ok(match self.env.kind {
            EnvKind::KeyEcho => TaskEnv::KeyEcho(
                KeyEchoEnv::new(self.env.keys, self.env.distractors, self.env.query_len)
                    .map_err(|e| Error::config(format!("env: {e}")))?,
            ),
            EnvKind::RelaySum => TaskEnv::RelaySum(RelaySumEnv::new()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[reward]\nlambda_tok = 0.05\n";

    fn err_text(text: &str) -> String {
        RunConfig::from_toml(text).unwrap_err().to_string()
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let c = RunConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.trainer, TrainerSection::default());
        assert_eq!(c.env.kind, EnvKind::KeyEcho);
        let t = c.trainer_config();
        assert_eq!(t.weights.lambda_tok, 0.05);
        assert!(!t.budget.enabled);
    }

    #[test]
    fn missing_lambda_tok_is_named() {
        assert!(err_text("[reward]\nlambda_turn = 0.1\n").contains("lambda_tok"));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(err_text("[reward]\nlambda_tok = 0.05\nlamda_rep = 0.1\n").contains("lamda_rep"));
        assert!(err_text("[reward]\nlambda_tok = 0.05\n[trainer]\nbatchsize = 3\n").contains("batchsize"));
        assert!(RunConfig::from_toml("[reward]\nlambda_tok = 0.05\n[extra]\nx = 1\n").is_err());
    }

    #[test]
    fn constraint_errors_name_key() {
        assert!(err_text("[reward]\nlambda_tok = -1.0\n").contains("reward.lambda_tok"));
        assert!(err_text("[reward]\nlambda_tok = 0.1\n[trainer]\ngroup_size = 1\n").contains("trainer.group_size"));
        assert!(err_text("[reward]\nlambda_tok = 0.1\n[gspo]\neps_clip = 1.5\n").contains("gspo.eps_clip"));
        assert!(err_text("[reward]\nlambda_tok = 0.1\n[budget]\nbudget_enabled = true\nbudget_eta = 0.1\n")
            .contains("budget.budget_B"));
    }

    #[test]
    fn budget_and_exact_mode_mapping() {
        let c = RunConfig::from_toml(
            "[reward]\nlambda_tok = 0.02\n[budget]\nbudget_enabled = true\nbudget_B = 1.0\nbudget_eta = 0.05\n[gspo]\nexact_mode = true\n",
        )
        .unwrap();
        let t = c.trainer_config();
        assert_eq!(t.budget, BudgetController { lambda_tok: 0.02, target_budget: 1.0, step: 0.05, enabled: true });
        assert_eq!(t.clip.eps_std, 0.0);
    }

    #[test]
    fn reserialized_config_reparses_equal() {
        let text = "[reward]\nlambda_tok = 0.05\nlambda_rep = 0.01\n[budget]\nbudget_enabled = true\nbudget_B = 2.0\nbudget_eta = 0.003\n[trainer]\nseed = 42\nlearning_rate = 1e-3\n[env]\nkind = \"relay_sum\"\n[output]\ndir = \"out/x\"\n";
        let c = RunConfig::from_toml(text).unwrap();
        let again = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(c, again);
        let minimal = RunConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(RunConfig::from_toml(&minimal.to_toml()).unwrap(), minimal);
    }
}
