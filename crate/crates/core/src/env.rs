//! Toy signaling tasks.
//!
//! A single learned sender observes a query and emits a message; a fixed
//! programmatic receiver scores it with a binary exact-match reward. Each
//! task admits a one-token message with full reward, so every extra token is
//! pure cost.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::{TokenId, TokenSequence, Vocabulary};

pub const EOS: TokenId = 0;
pub const SEP: TokenId = 1;
const FIRST_CONTENT: TokenId = 2;

pub trait Environment: Send + Sync {
    fn vocabulary(&self) -> &Vocabulary;

    fn generate_query<R: Rng + ?Sized>(&self, rng: &mut R) -> TokenSequence;

    /// Binary score in `[0, 1]`, deterministic in `(query, y)`.
    fn task_reward(&self, query: &TokenSequence, y: &TokenSequence) -> f64;

    /// What the sender conditions on when answering `query`.
    fn observation(&self, query: &TokenSequence) -> TokenSequence {
        query.clone()
    }

    /// Number of observation tokens the policy keys on.
    fn summary_len(&self) -> usize {
        1
    }

    /// A shortest response with full task reward.
    fn reference_response(&self, query: &TokenSequence) -> TokenSequence;
}

/// One key token hidden among distractors; the message must name the key.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyEchoEnv {
    keys: usize,
    distractors: usize,
    query_len: usize,
    vocab: Vocabulary,
}

impl KeyEchoEnv {
    pub fn new(keys: usize, distractors: usize, query_len: usize) -> Result<Self> {
        if keys == 0 || distractors == 0 {
            return Err(Error::invalid("key_echo needs at least one key and one distractor"));
        }
        if query_len == 0 {
            return Err(Error::invalid("key_echo query_len must be >= 1"));
        }
        let mut named = BTreeMap::new();
        for i in 0..keys {
            named.insert(format!("key{i}"), FIRST_CONTENT + i as TokenId);
        }
        for i in 0..distractors {
            named.insert(format!("noise{i}"), FIRST_CONTENT + (keys + i) as TokenId);
        }
        let vocab = Vocabulary::new(2 + keys + distractors, EOS, SEP, named)?;
        Ok(Self { keys, distractors, query_len, vocab })
    }

    pub fn is_key(&self, t: TokenId) -> bool {
        (FIRST_CONTENT..FIRST_CONTENT + self.keys as TokenId).contains(&t)
    }

    pub fn key_of(&self, query: &TokenSequence) -> Option<TokenId> {
        query.tokens().iter().copied().find(|&t| self.is_key(t))
    }

    pub fn keys(&self) -> usize {
        self.keys
    }
}

impl Default for KeyEchoEnv {
    fn default() -> Self {
        Self::new(4, 8, 4).expect("default key_echo sizes are valid")
    }
}

impl Environment for KeyEchoEnv {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn generate_query<R: Rng + ?Sized>(&self, rng: &mut R) -> TokenSequence {
        let first_noise = FIRST_CONTENT + self.keys as TokenId;
        let mut tokens: Vec<TokenId> = (0..self.query_len)
            .map(|_| first_noise + rng.random_range(0..self.distractors) as TokenId)
            .collect();
        let pos = rng.random_range(0..self.query_len);
        tokens[pos] = FIRST_CONTENT + rng.random_range(0..self.keys) as TokenId;
        TokenSequence::new(tokens)
    }

    fn task_reward(&self, query: &TokenSequence, y: &TokenSequence) -> f64 {
        match self.key_of(query) {
            Some(k) if y.content(EOS).any(|t| t == k) => 1.0,
            _ => 0.0,
        }
    }

    /// The sender sees the key it holds; the distractors are the receiver's
    /// problem.
    fn observation(&self, query: &TokenSequence) -> TokenSequence {
        TokenSequence::new(self.key_of(query).into_iter().collect())
    }

    fn reference_response(&self, query: &TokenSequence) -> TokenSequence {
        TokenSequence::new(self.key_of(query).into_iter().chain([EOS]).collect())
    }
}

/// Two digits in, their sum mod 10 out.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaySumEnv {
    vocab: Vocabulary,
}

impl RelaySumEnv {
    pub fn new() -> Self {
        let named = (0..10).map(|d| (format!("digit{d}"), Self::digit(d))).collect();
        let vocab = Vocabulary::new(12, EOS, SEP, named).expect("relay_sum vocabulary is valid");
        Self { vocab }
    }

    pub fn digit(d: u32) -> TokenId {
        FIRST_CONTENT + d
    }

    pub fn digit_value(t: TokenId) -> Option<u32> {
        (FIRST_CONTENT..FIRST_CONTENT + 10).contains(&t).then(|| t - FIRST_CONTENT)
    }

    fn answer(query: &TokenSequence) -> Option<TokenId> {
        let mut digits = query.tokens().iter().filter_map(|&t| Self::digit_value(t));
        let a = digits.next()?;
        let b = digits.next()?;
        Some(Self::digit((a + b) % 10))
    }
}

impl Default for RelaySumEnv {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for RelaySumEnv {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn generate_query<R: Rng + ?Sized>(&self, rng: &mut R) -> TokenSequence {
        let a = rng.random_range(0..10);
        let b = rng.random_range(0..10);
        TokenSequence::new(vec![Self::digit(a), Self::digit(b)])
    }

    fn task_reward(&self, query: &TokenSequence, y: &TokenSequence) -> f64 {
        match Self::answer(query) {
            Some(ans) if y.content(EOS).any(|t| t == ans) => 1.0,
            _ => 0.0,
        }
    }

    /// Both digits are needed, so the policy keys on a two-token summary.
    fn summary_len(&self) -> usize {
        2
    }

    fn reference_response(&self, query: &TokenSequence) -> TokenSequence {
        TokenSequence::new(Self::answer(query).into_iter().chain([EOS]).collect())
    }
}

/// Environment selection as it appears in run configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    KeyEcho,
    RelaySum,
}

/// Config-selected environment.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskEnv {
    KeyEcho(KeyEchoEnv),
    RelaySum(RelaySumEnv),
}

macro_rules! dispatch {
    ($self:ident, $e:ident => $body:expr) => {
        match $self {
            TaskEnv::KeyEcho($e) => $body,
            TaskEnv::RelaySum($e) => $body,
        }
    };
}

impl Environment for TaskEnv {
    fn vocabulary(&self) -> &Vocabulary {
        dispatch!(self, e => e.vocabulary())
    }

    fn generate_query<R: Rng + ?Sized>(&self, rng: &mut R) -> TokenSequence {
        dispatch!(self, e => e.generate_query(rng))
    }

    fn task_reward(&self, query: &TokenSequence, y: &TokenSequence) -> f64 {
        dispatch!(self, e => e.task_reward(query, y))
    }

    fn observation(&self, query: &TokenSequence) -> TokenSequence {
        dispatch!(self, e => e.observation(query))
    }

    fn summary_len(&self) -> usize {
        dispatch!(self, e => e.summary_len())
    }

    fn reference_response(&self, query: &TokenSequence) -> TokenSequence {
        dispatch!(self, e => e.reference_response(query))
    }
}
