//! Training loop: grouped rollouts from the frozen old policy, composite
//! rewards, group advantages, one or more surrogate ascent steps, periodic
//! old-policy sync and the optional dual update on the token penalty.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::budget::BudgetController;
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::gspo::{self, AdvantageMode, ClipConfig, RolloutGroup};
use crate::policy::{LogitTable, PolicyParams};
use crate::reward::{self, RewardBreakdown, RewardWeights};

pub const MOMENTUM_DECAY: f64 = 0.9;

// Stream tags for seed derivation.
const QUERY_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub batch_size: usize,
    pub group_size: usize,
    pub learning_rate: f64,
    pub iterations: usize,
    pub sync_every: usize,
    pub max_len: usize,
    pub seed: u64,
    pub context_order: usize,
    /// Ascent steps per rollout batch.
    pub epochs: usize,
    pub momentum: bool,
    pub clip: ClipConfig,
    pub advantage: AdvantageMode,
    pub weights: RewardWeights,
    pub budget: BudgetController,
    pub execution: Execution,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            group_size: 8,
            learning_rate: 4.0,
            iterations: 300,
            sync_every: 1,
            max_len: 8,
            seed: 0,
            context_order: 1,
            epochs: 1,
            momentum: false,
            clip: ClipConfig::default(),
            advantage: AdvantageMode::GroupNorm,
            weights: RewardWeights { lambda_tok: 0.05, lambda_turn: 0.0, lambda_rep: 0.0 },
            budget: BudgetController::disabled(0.05),
            execution: Execution::default(),
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("sync_every", self.sync_every),
            ("max_len", self.max_len),
            ("epochs", self.epochs),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be >= 1")));
            }
        }
        if self.group_size < 2 {
            return Err(Error::invalid(format!("group_size must be >= 2, got {}", self.group_size)));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::invalid(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        self.clip.validate()?;
        self.weights.validate()?;
        self.budget.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub mean_reward: f64,
    pub mean_task_reward: f64,
    pub mean_tokens: f64,
    pub mean_turns: f64,
    pub mean_repetition: f64,
    pub objective_value: f64,
    pub gradient_norm: f64,
    /// Token penalty used to score this iteration's rollouts.
    pub lambda_tok_current: f64,
    pub clip_fraction: f64,
}

/// Rollouts for one query, before any gradient step.
struct ScoredGroup {
    group: RolloutGroup,
    advantages: Vec<f64>,
    breakdowns: Vec<RewardBreakdown>,
}

pub struct Trainer<E: Environment> {
    cfg: TrainerConfig,
    env: E,
    params: PolicyParams,
    old_params: PolicyParams,
    velocity: Option<LogitTable>,
    budget: BudgetController,
    iteration: usize,
}

impl<E: Environment> Trainer<E> {
    /// Fresh trainer with uniform (all-zero) logits.
    pub fn new(cfg: TrainerConfig, env: E) -> Result<Self> {
        cfg.validate()?;
        let params = PolicyParams::uniform(env.vocabulary(), env.summary_len(), cfg.context_order);
        Ok(Self {
            old_params: params.snapshot(),
            params,
            velocity: None,
            budget: cfg.budget,
            iteration: 0,
            cfg,
            env,
        })
    }

    /// Replaces both the current and old policy.
    pub fn with_params(mut self, params: PolicyParams) -> Self {
        self.old_params = params.snapshot();
        self.params = params;
        self
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn old_params(&self) -> &PolicyParams {
        &self.old_params
    }

    pub fn budget(&self) -> &BudgetController {
        &self.budget
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.cfg
    }

    pub fn env(&self) -> &E {
        &self.env
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn into_params(self) -> PolicyParams {
        self.params
    }

    fn current_weights(&self) -> RewardWeights {
        let mut w = self.cfg.weights;
        if self.budget.enabled {
            w.lambda_tok = self.budget.lambda_tok;
        }
        w
    }

    /// Query `index` of the batch at `iteration`. Depends only on the seed,
    /// never on the policy, so runs sharing a seed see the same queries.
    pub fn query(&self, iteration: usize, index: usize) -> crate::vocab::TokenSequence {
        let path = [iteration as u64, index as u64, QUERY_STREAM];
        self.env.generate_query(&mut exec::stream(self.cfg.seed, &path))
    }

    fn collect_group(&self, query_index: usize, weights: &RewardWeights) -> Result<ScoredGroup> {
        let (seed, it) = (self.cfg.seed, self.iteration as u64);
        let b = query_index as u64;
        let query = self.query(self.iteration, query_index);
        let obs = self.env.observation(&query);
        let vocab = self.env.vocabulary();
        let g = self.cfg.group_size;
        let mut responses = Vec::with_capacity(g);
        let mut breakdowns = Vec::with_capacity(g);
        for i in 0..g {
            let mut rng = exec::stream(seed, &[it, b, i as u64]);
            let y = self.old_params.sample_sequence(&obs, &mut rng, self.cfg.max_len);
            let task = self.env.task_reward(&query, &y);
            breakdowns.push(reward::composite_reward(task, &y, vocab, weights));
            responses.push(y);
        }
        let rewards = breakdowns.iter().map(|r| r.total).collect();
        let group = RolloutGroup::with_old_policy(obs, responses, rewards, &self.old_params)?;
        let advantages =
            gspo::advantages(&group.rewards, self.cfg.advantage, self.cfg.clip.eps_std)?.values;
        Ok(ScoredGroup { group, advantages, breakdowns })
    }

    /// One pass of the training loop body.
    pub fn run_iteration(&mut self) -> Result<IterationMetrics> {
        let weights = self.current_weights();
        let groups = self
            .cfg
            .execution
            .map(self.cfg.batch_size, |b| self.collect_group(b, &weights))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;

        let n_groups = groups.len() as f64;
        let n_samples = groups.len() * self.cfg.group_size;
        let mut objective_sum = 0.0;
        let mut grad_norm_sum = 0.0;
        let mut clipped_total = 0usize;
        for _ in 0..self.cfg.epochs {
            let params = &self.params;
            let eps_clip = self.cfg.clip.eps_clip;
            let evals = self
                .cfg
                .execution
                .map(groups.len(), |i| {
                    gspo::evaluate_surrogate(&groups[i].group, &groups[i].advantages, params, eps_clip)
                })
                .into_iter()
                .collect::<Result<Vec<_>>>()?;

            // fixed-order reduction
            let mut grad = LogitTable::zeros(self.params.vocab_size());
            let mut objective = 0.0;
            for e in &evals {
                grad.add_scaled(&e.gradient, 1.0 / n_groups);
                objective += e.objective;
                clipped_total += e.clipped;
            }
            objective /= n_groups;
            if !objective.is_finite() || !grad.all_finite() {
                return Err(Error::NonFinite(format!(
                    "surrogate objective or gradient at iteration {}",
                    self.iteration
                )));
            }
            objective_sum += objective;
            grad_norm_sum += grad.norm();

            let step = if self.cfg.momentum {
                let v = self.velocity.get_or_insert_with(|| LogitTable::zeros(grad.width()));
                v.scale(MOMENTUM_DECAY);
                v.add_scaled(&grad, 1.0);
                v.clone()
            } else {
                grad
            };
            self.params.apply(&step, self.cfg.learning_rate);
        }

        if (self.iteration + 1).is_multiple_of(self.cfg.sync_every) {
            self.old_params = self.params.snapshot();
        }

        let all = groups.iter().flat_map(|g| &g.breakdowns);
        let n = n_samples as f64;
        let mut m = IterationMetrics {
            iteration: self.iteration,
            mean_reward: 0.0,
            mean_task_reward: 0.0,
            mean_tokens: 0.0,
            mean_turns: 0.0,
            mean_repetition: 0.0,
            objective_value: objective_sum / self.cfg.epochs as f64,
            gradient_norm: grad_norm_sum / self.cfg.epochs as f64,
            lambda_tok_current: weights.lambda_tok,
            clip_fraction: clipped_total as f64 / (n * self.cfg.epochs as f64),
        };
        for r in all {
            m.mean_reward += r.total;
            m.mean_task_reward += r.task;
            m.mean_tokens += r.tokens as f64;
            m.mean_turns += r.turns as f64;
            m.mean_repetition += r.repetition as f64;
        }
        m.mean_reward /= n;
        m.mean_task_reward /= n;
        m.mean_tokens /= n;
        m.mean_turns /= n;
        m.mean_repetition /= n;

        if self.budget.enabled {
            self.budget.update(m.mean_tokens)?;
        }
        self.iteration += 1;
        Ok(m)
    }

    /// Runs the configured number of iterations.
    pub fn run(&mut self) -> Result<Vec<IterationMetrics>> {
        (0..self.cfg.iterations).map(|_| self.run_iteration()).collect()
    }
}

/// Trains from a uniform policy; returns the metrics history and final
/// parameters.
pub fn train<E: Environment>(
    cfg: TrainerConfig,
    env: E,
) -> Result<(Vec<IterationMetrics>, PolicyParams)> {
    let mut trainer = Trainer::new(cfg, env)?;
    let history = trainer.run()?;
    Ok((history, trainer.into_params()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub success_rate: f64,
    pub mean_tokens: f64,
    pub mean_turns: f64,
}

/// Greedy-decoding evaluation on `n` fresh queries.
pub fn evaluate<E: Environment, R: Rng + ?Sized>(
    params: &PolicyParams,
    env: &E,
    n: usize,
    max_len: usize,
    rng: &mut R,
) -> Result<EvalSummary> {
    if n == 0 {
        return Err(Error::invalid("evaluation needs at least one episode"));
    }
    if max_len == 0 {
        return Err(Error::invalid("max_len must be >= 1"));
    }
    let vocab = env.vocabulary();
    let (mut success, mut tokens, mut turns) = (0.0, 0usize, 0usize);
    for _ in 0..n {
        let query = env.generate_query(rng);
        let y = params.greedy_sequence(&env.observation(&query), max_len);
        success += env.task_reward(&query, &y);
        tokens += reward::count_tokens(&y, vocab);
        turns += reward::count_turns(&y, vocab);
    }
    let n_f = n as f64;
    Ok(EvalSummary {
        episodes: n,
        success_rate: success / n_f,
        mean_tokens: tokens as f64 / n_f,
        mean_turns: turns as f64 / n_f,
    })
}

/// Averages over the trailing `window` iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinalStats {
    pub success: f64,
    pub mean_tokens: f64,
}

impl FinalStats {
    pub fn from_history(history: &[IterationMetrics], window: usize) -> Option<Self> {
        if history.is_empty() || window == 0 {
            return None;
        }
        let tail = &history[history.len().saturating_sub(window)..];
        let n = tail.len() as f64;
        Some(Self {
            success: tail.iter().map(|m| m.mean_task_reward).sum::<f64>() / n,
            mean_tokens: tail.iter().map(|m| m.mean_tokens).sum::<f64>() / n,
        })
    }
}
