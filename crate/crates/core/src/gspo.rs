//! Sequence-level clipped surrogate objective.
//!
//! For a group of `G` responses sampled from the frozen old policy:
//!
//! * advantages are rewards standardized within the group (population std),
//! * each response gets a length-normalized importance ratio
//!   `s_i = exp((log π(y_i) - log π_old(y_i)) / |y_i|)`,
//! * the objective is the group mean of `min(s_i A_i, clip(s_i, 1-ε, 1+ε) A_i)`.
//!
//! Advantages and old log-probabilities are constants with respect to the
//! parameters. Ratio arithmetic stays in log space until the single `exp`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{LogitTable, PolicyParams};
use crate::vocab::TokenSequence;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipConfig {
    /// Half-width of the ratio trust band.
    pub eps_clip: f64,
    /// Added to the group standard deviation before dividing. Zero selects
    /// exact mode, where zero-spread groups are an error.
    pub eps_std: f64,
}

impl Default for ClipConfig {
    fn default() -> Self {
        Self { eps_clip: 0.2, eps_std: 1e-8 }
    }
}

impl ClipConfig {
    pub fn new(eps_clip: f64, eps_std: f64) -> Result<Self> {
        let c = Self { eps_clip, eps_std };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps_clip > 0.0 && self.eps_clip < 1.0) {
            return Err(Error::invalid(format!("eps_clip must lie in (0, 1), got {}", self.eps_clip)));
        }
        if !(self.eps_std.is_finite() && self.eps_std >= 0.0) {
            return Err(Error::invalid(format!("eps_std must be >= 0, got {}", self.eps_std)));
        }
        Ok(())
    }
}

/// How rewards inside a group are turned into advantages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvantageMode {
    /// `(r - mean) / (std + eps_std)`.
    #[default]
    GroupNorm,
    /// `r - mean`, no scale normalization.
    Centered,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageSet {
    pub values: Vec<f64>,
    pub group_mean: f64,
    pub group_std: f64,
}

fn group_moments(rewards: &[f64]) -> Result<(f64, f64, bool)> {
    if rewards.len() < 2 {
        return Err(Error::invalid(format!("group size {} is below 2", rewards.len())));
    }
    if let Some(r) = rewards.iter().find(|r| !r.is_finite()) {
        return Err(Error::NonFinite(format!("group reward {r}")));
    }
    let g = rewards.len() as f64;
    let constant = rewards.iter().all(|&r| r == rewards[0]);
    if constant {
        return Ok((rewards[0], 0.0, true));
    }
    let mean = rewards.iter().sum::<f64>() / g;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / g;
    Ok((mean, var.sqrt(), false))
}

pub fn normalize_advantages(rewards: &[f64], eps_std: f64) -> Result<AdvantageSet> {
    let (mean, std, constant) = group_moments(rewards)?;
    if constant {
        if eps_std == 0.0 {
            return Err(Error::DegenerateGroup);
        }
        return Ok(AdvantageSet { values: vec![0.0; rewards.len()], group_mean: mean, group_std: 0.0 });
    }
    let denom = std + eps_std;
    let values = rewards.iter().map(|r| (r - mean) / denom).collect();
    Ok(AdvantageSet { values, group_mean: mean, group_std: std })
}

/// Mean-centered rewards without the std division.
pub fn centered_advantages(rewards: &[f64]) -> Result<AdvantageSet> {
    let (mean, std, constant) = group_moments(rewards)?;
    let values = if constant {
        vec![0.0; rewards.len()]
    } else {
        rewards.iter().map(|r| r - mean).collect()
    };
    Ok(AdvantageSet { values, group_mean: mean, group_std: std })
}

pub fn advantages(rewards: &[f64], mode: AdvantageMode, eps_std: f64) -> Result<AdvantageSet> {
    match mode {
        AdvantageMode::GroupNorm => normalize_advantages(rewards, eps_std),
        AdvantageMode::Centered => centered_advantages(rewards),
    }
}

/// `exp((logp_new - logp_old) / seq_len)`.
pub fn seq_importance_ratio(logp_new: f64, logp_old: f64, seq_len: usize) -> Result<f64> {
    if seq_len == 0 {
        return Err(Error::invalid("sequence length must be >= 1"));
    }
    if !logp_new.is_finite() || !logp_old.is_finite() {
        return Err(Error::NonFinite(format!("log-probs ({logp_new}, {logp_old})")));
    }
    Ok(((logp_new - logp_old) / seq_len as f64).exp())
}

pub fn clipped_term(s: f64, adv: f64, eps_clip: f64) -> f64 {
    let clipped = s.clamp(1.0 - eps_clip, 1.0 + eps_clip);
    (s * adv).min(clipped * adv)
}

/// Whether the unclipped product attains the min (ties count as unclipped),
/// i.e. whether the sample carries gradient.
pub fn unclipped_active(s: f64, adv: f64, eps_clip: f64) -> bool {
    if adv >= 0.0 {
        s <= 1.0 + eps_clip
    } else {
        s >= 1.0 - eps_clip
    }
}

/// One query with `G` responses drawn from the old policy.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    pub query: TokenSequence,
    pub responses: Vec<TokenSequence>,
    pub rewards: Vec<f64>,
    pub logp_old: Vec<f64>,
}

impl RolloutGroup {
    pub fn new(
        query: TokenSequence,
        responses: Vec<TokenSequence>,
        rewards: Vec<f64>,
        logp_old: Vec<f64>,
    ) -> Result<Self> {
        let g = responses.len();
        if g < 2 {
            return Err(Error::invalid(format!("group size {g} is below 2")));
        }
        if rewards.len() != g || logp_old.len() != g {
            return Err(Error::invalid(format!(
                "group lists disagree: {g} responses, {} rewards, {} old log-probs",
                rewards.len(),
                logp_old.len()
            )));
        }
        if responses.iter().any(TokenSequence::is_empty) {
            return Err(Error::EmptySequence);
        }
        Ok(Self { query, responses, rewards, logp_old })
    }

    /// Builds a group, scoring `logp_old` under `old`.
    pub fn with_old_policy(
        query: TokenSequence,
        responses: Vec<TokenSequence>,
        rewards: Vec<f64>,
        old: &PolicyParams,
    ) -> Result<Self> {
        let logp_old = responses
            .iter()
            .map(|y| old.log_prob_sequence(&query, y))
            .collect::<Result<Vec<_>>>()?;
        Self::new(query, responses, rewards, logp_old)
    }

    pub fn group_size(&self) -> usize {
        self.responses.len()
    }
}

/// Objective value, gradient and clipped-sample count for one group.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateEval {
    pub objective: f64,
    pub gradient: LogitTable,
    pub clipped: usize,
}

/// Evaluates the surrogate and its gradient with precomputed advantages.
pub fn evaluate_surrogate(
    group: &RolloutGroup,
    advantages: &[f64],
    params: &PolicyParams,
    eps_clip: f64,
) -> Result<SurrogateEval> {
    let g = group.group_size();
    if advantages.len() != g {
        return Err(Error::invalid("advantage count does not match group size"));
    }
    let inv_g = 1.0 / g as f64;
    let mut objective = 0.0;
    let mut gradient = LogitTable::zeros(params.vocab_size());
    let mut clipped = 0;
    for ((y, &lp_old), &adv) in group.responses.iter().zip(&group.logp_old).zip(advantages) {
        let lp_new = params.log_prob_sequence(&group.query, y)?;
        let s = seq_importance_ratio(lp_new, lp_old, y.len())?;
        objective += clipped_term(s, adv, eps_clip);
        if !unclipped_active(s, adv, eps_clip) {
            clipped += 1;
            continue;
        }
        if adv != 0.0 {
            let grad = params.grad_log_prob_sequence(&group.query, y)?;
            gradient.add_scaled(&grad, adv * s / y.len() as f64 * inv_g);
        }
    }
    Ok(SurrogateEval { objective: objective * inv_g, gradient, clipped })
}

pub fn gspo_objective(group: &RolloutGroup, params: &PolicyParams, cfg: &ClipConfig) -> Result<f64> {
    let adv = normalize_advantages(&group.rewards, cfg.eps_std)?;
    Ok(evaluate_surrogate(group, &adv.values, params, cfg.eps_clip)?.objective)
}

pub fn gspo_gradient(
    group: &RolloutGroup,
    params: &PolicyParams,
    cfg: &ClipConfig,
) -> Result<LogitTable> {
    let adv = normalize_advantages(&group.rewards, cfg.eps_std)?;
    Ok(evaluate_surrogate(group, &adv.values, params, cfg.eps_clip)?.gradient)
}
