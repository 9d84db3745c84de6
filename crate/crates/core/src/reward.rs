//! Communication-aware reward: task score minus token, turn and repetition
//! penalties.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::{TokenSequence, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub lambda_tok: f64,
    pub lambda_turn: f64,
    pub lambda_rep: f64,
}

impl RewardWeights {
    pub fn new(lambda_tok: f64, lambda_turn: f64, lambda_rep: f64) -> Result<Self> {
        let w = Self { lambda_tok, lambda_turn, lambda_rep };
        w.validate()?;
        Ok(w)
    }

    pub fn zero() -> Self {
        Self { lambda_tok: 0.0, lambda_turn: 0.0, lambda_rep: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_tok", self.lambda_tok),
            ("lambda_turn", self.lambda_turn),
            ("lambda_rep", self.lambda_rep),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub task: f64,
    pub tokens: usize,
    pub turns: usize,
    pub repetition: usize,
    pub total: f64,
}

/// Non-EOS tokens in `y`.
pub fn count_tokens(y: &TokenSequence, vocab: &Vocabulary) -> usize {
    y.content(vocab.eos_id()).count()
}

/// Separator-delimited segments; an empty message has zero turns.
pub fn count_turns(y: &TokenSequence, vocab: &Vocabulary) -> usize {
    if count_tokens(y, vocab) == 0 {
        return 0;
    }
    1 + y.tokens().iter().filter(|&&t| t == vocab.turn_sep_id()).count()
}

/// Bigram occurrences minus distinct bigrams over the non-EOS tokens.
pub fn repetition_score(y: &TokenSequence, vocab: &Vocabulary) -> usize {
    let content: Vec<_> = y.content(vocab.eos_id()).collect();
    if content.len() < 2 {
        return 0;
    }
    let occurrences = content.len() - 1;
    let distinct: HashSet<_> = content.windows(2).map(|w| (w[0], w[1])).collect();
    occurrences - distinct.len()
}

pub fn composite_reward(
    r_task: f64,
    y: &TokenSequence,
    vocab: &Vocabulary,
    w: &RewardWeights,
) -> RewardBreakdown {
    let tokens = count_tokens(y, vocab);
    let turns = count_turns(y, vocab);
    let repetition = repetition_score(y, vocab);
    let total = r_task
        - w.lambda_tok * tokens as f64
        - w.lambda_turn * turns as f64
        - w.lambda_rep * repetition as f64;
    RewardBreakdown { task: r_task, tokens, turns, repetition, total }
}
