//! Tabular autoregressive softmax policy.
//!
//! Each decoding step is conditioned on a [`ContextKey`]: the last
//! `summary_len` tokens of the query followed by the last `context_order`
//! generated tokens (left-padded with [`BOS`]). Every key owns a row of
//! vocabulary-length logits; keys that were never written read as all zeros,
//! i.e. the uniform distribution, so every sequence keeps positive
//! probability.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::Rng;

use crate::error::{Error, Result};
use crate::vocab::{TokenId, TokenSequence, Vocabulary, BOS};

/// Query summary followed by decoding history.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ContextKey(Vec<TokenId>);

impl ContextKey {
    pub fn new(tokens: Vec<TokenId>) -> Self {
        Self(tokens)
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.0
    }
}

/// Conditioning state while decoding one response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyContext {
    query_summary: Vec<TokenId>,
    history: Vec<TokenId>,
}

impl PolicyContext {
    /// Initial context for `query`: history is all [`BOS`].
    pub fn initial(query: &TokenSequence, summary_len: usize, context_order: usize) -> Self {
        let q = query.tokens();
        let take = summary_len.min(q.len());
        let mut query_summary = vec![BOS; summary_len - take];
        query_summary.extend_from_slice(&q[q.len() - take..]);
        Self { query_summary, history: vec![BOS; context_order] }
    }

    /// Shifts `t` into the history window.
    pub fn push(&mut self, t: TokenId) {
        if !self.history.is_empty() {
            self.history.rotate_left(1);
            let last = self.history.len() - 1;
            self.history[last] = t;
        }
    }

    pub fn history(&self) -> &[TokenId] {
        &self.history
    }

    pub fn query_summary(&self) -> &[TokenId] {
        &self.query_summary
    }

    pub fn key(&self) -> ContextKey {
        let mut k = Vec::with_capacity(self.query_summary.len() + self.history.len());
        k.extend_from_slice(&self.query_summary);
        k.extend_from_slice(&self.history);
        ContextKey(k)
    }
}

/// Sparse table of vocabulary-length rows keyed by context.
///
/// Used both for policy logits and for gradients of the same shape. Missing
/// rows are zero. Rows are kept in key order so reductions over the table are
/// reproducible.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitTable {
    width: usize,
    rows: BTreeMap<ContextKey, Vec<f64>>,
}

impl LogitTable {
    pub fn zeros(width: usize) -> Self {
        Self { width, rows: BTreeMap::new() }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, key: &ContextKey) -> Option<&[f64]> {
        self.rows.get(key).map(Vec::as_slice)
    }

    /// Mutable row, inserted as zeros if absent.
    pub fn row_mut(&mut self, key: ContextKey) -> &mut [f64] {
        let width = self.width;
        self.rows.entry(key).or_insert_with(|| vec![0.0; width])
    }

    pub fn insert(&mut self, key: ContextKey, row: Vec<f64>) -> Result<()> {
        if row.len() != self.width {
            return Err(Error::invalid(format!(
                "row has length {}, expected {}",
                row.len(),
                self.width
            )));
        }
        self.rows.insert(key, row);
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ContextKey, &[f64])> {
        self.rows.iter().map(|(k, v)| (k, v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &LogitTable, scale: f64) {
        debug_assert_eq!(self.width, other.width);
        for (k, row) in &other.rows {
            let dst = self.row_mut(k.clone());
            for (d, s) in dst.iter_mut().zip(row) {
                *d += scale * s;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for row in self.rows.values_mut() {
            row.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn dot(&self, other: &LogitTable) -> f64 {
        self.rows
            .iter()
            .filter_map(|(k, a)| other.rows.get(k).map(|b| (a, b)))
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.rows.values().flatten().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.rows.values().flatten().all(|x| x.is_finite())
    }
}

/// Numerically stable log-softmax.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&l| l - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

/// Parameters of the tabular policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    vocab_size: usize,
    eos_id: TokenId,
    summary_len: usize,
    context_order: usize,
    logits: LogitTable,
}

impl PolicyParams {
    /// All-zero logits over a bare vocabulary size; allows toy sizes below
    /// the [`Vocabulary`] minimum.
    pub fn new(vocab_size: usize, eos_id: TokenId, summary_len: usize, context_order: usize) -> Result<Self> {
        if vocab_size < 2 || eos_id as usize >= vocab_size {
            return Err(Error::invalid(format!(
                "need vocab_size >= 2 and eos_id < vocab_size, got {vocab_size} and {eos_id}"
            )));
        }
        Ok(Self { vocab_size, eos_id, summary_len, context_order, logits: LogitTable::zeros(vocab_size) })
    }

    /// All-zero logits over `vocab`.
    pub fn uniform(vocab: &Vocabulary, summary_len: usize, context_order: usize) -> Self {
        Self {
            vocab_size: vocab.size(),
            eos_id: vocab.eos_id(),
            summary_len,
            context_order,
            logits: LogitTable::zeros(vocab.size()),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn eos_id(&self) -> TokenId {
        self.eos_id
    }

    pub fn summary_len(&self) -> usize {
        self.summary_len
    }

    pub fn context_order(&self) -> usize {
        self.context_order
    }

    pub fn logits(&self) -> &LogitTable {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut LogitTable {
        &mut self.logits
    }

    /// Independent deep copy, used as the frozen old policy.
    pub fn snapshot(&self) -> PolicyParams {
        self.clone()
    }

    pub fn initial_context(&self, query: &TokenSequence) -> PolicyContext {
        PolicyContext::initial(query, self.summary_len, self.context_order)
    }

    /// Log-probabilities over the whole vocabulary at `key`.
    pub fn log_probs(&self, key: &ContextKey) -> Vec<f64> {
        match self.logits.get(key) {
            Some(row) => log_softmax(row),
            None => vec![-(self.vocab_size as f64).ln(); self.vocab_size],
        }
    }

    pub fn log_prob_token(&self, ctx: &PolicyContext, t: TokenId) -> Result<f64> {
        self.check_token(t)?;
        Ok(self.log_probs(&ctx.key())[t as usize])
    }

    /// Sum of per-step log-probabilities of `y` given `query`.
    pub fn log_prob_sequence(&self, query: &TokenSequence, y: &TokenSequence) -> Result<f64> {
        if y.is_empty() {
            return Err(Error::EmptySequence);
        }
        let mut ctx = self.initial_context(query);
        let mut total = 0.0;
        for &t in y.tokens() {
            self.check_token(t)?;
            total += self.log_probs(&ctx.key())[t as usize];
            ctx.push(t);
        }
        Ok(total)
    }

    /// Gradient of [`log_prob_sequence`](Self::log_prob_sequence) with
    /// respect to the logits: `onehot(y_t) - softmax` accumulated per
    /// visited context.
    pub fn grad_log_prob_sequence(
        &self,
        query: &TokenSequence,
        y: &TokenSequence,
    ) -> Result<LogitTable> {
        if y.is_empty() {
            return Err(Error::EmptySequence);
        }
        let mut grad = LogitTable::zeros(self.vocab_size);
        let mut ctx = self.initial_context(query);
        for &t in y.tokens() {
            self.check_token(t)?;
            let key = ctx.key();
            let lp = self.log_probs(&key);
            let row = grad.row_mut(key);
            for (g, l) in row.iter_mut().zip(&lp) {
                *g -= l.exp();
            }
            row[t as usize] += 1.0;
            ctx.push(t);
        }
        Ok(grad)
    }

    /// Draws a response token by token until EOS or `max_len` tokens.
    pub fn sample_sequence<R: Rng + ?Sized>(
        &self,
        query: &TokenSequence,
        rng: &mut R,
        max_len: usize,
    ) -> TokenSequence {
        self.decode(query, max_len, |lp| sample_index(lp, rng.random::<f64>()))
    }

    /// Argmax decoding; ties go to the lowest token ID.
    pub fn greedy_sequence(&self, query: &TokenSequence, max_len: usize) -> TokenSequence {
        self.decode(query, max_len, |lp| {
            let mut best = 0;
            for (i, &l) in lp.iter().enumerate() {
                if l > lp[best] {
                    best = i;
                }
            }
            best
        })
    }

    fn decode(
        &self,
        query: &TokenSequence,
        max_len: usize,
        mut pick: impl FnMut(&[f64]) -> usize,
    ) -> TokenSequence {
        let mut ctx = self.initial_context(query);
        let mut out = Vec::with_capacity(max_len.min(64));
        while out.len() < max_len.max(1) {
            let t = pick(&self.log_probs(&ctx.key())) as TokenId;
            out.push(t);
            if t == self.eos_id {
                break;
            }
            ctx.push(t);
        }
        TokenSequence::new(out)
    }

    /// `θ += scale * step`.
    pub fn apply(&mut self, step: &LogitTable, scale: f64) {
        if scale != 0.0 {
            self.logits.add_scaled(step, scale);
        }
    }

    fn check_token(&self, t: TokenId) -> Result<()> {
        if (t as usize) < self.vocab_size {
            Ok(())
        } else {
            Err(Error::TokenOutOfRange { token: t, size: self.vocab_size })
        }
    }

    /// Writes the text table format:
    ///
    /// ```text
    /// terse-policy 1
    /// vocab_size <n>
    /// eos_id <id>
    /// summary_len <n>
    /// context_order <m>
    /// rows <count>
    /// <key tokens, `bos` for padding> | <n logits>
    /// ```
    ///
    /// Rows appear in key order; floats use the shortest representation that
    /// parses back to the same bits.
    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "terse-policy 1")?;
        writeln!(w, "vocab_size {}", self.vocab_size)?;
        writeln!(w, "eos_id {}", self.eos_id)?;
        writeln!(w, "summary_len {}", self.summary_len)?;
        writeln!(w, "context_order {}", self.context_order)?;
        writeln!(w, "rows {}", self.logits.len())?;
        let mut line = String::new();
        for (key, row) in self.logits.iter() {
            line.clear();
            for (i, &t) in key.tokens().iter().enumerate() {
                if i > 0 {
                    line.push(' ');
                }
                if t == BOS {
                    line.push_str("bos");
                } else {
                    let _ = write!(line, "{t}");
                }
            }
            line.push_str(" |");
            for x in row {
                let _ = write!(line, " {x}");
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn load<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().enumerate();
        let mut next = |what: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((i, l)) => Ok((i + 1, l?)),
                None => Err(Error::PolicyFormat { line: 0, msg: format!("missing {what}") }),
            }
        };
        let (n, magic) = next("header")?;
        if magic.trim() != "terse-policy 1" {
            return Err(Error::PolicyFormat { line: n, msg: "bad header".into() });
        }
        let mut header = |name: &str| -> Result<usize> {
            let (n, l) = next(name)?;
            l.strip_prefix(name)
                .and_then(|rest| rest.trim().parse().ok())
                .ok_or_else(|| Error::PolicyFormat { line: n, msg: format!("expected `{name} <int>`") })
        };
        let vocab_size = header("vocab_size")?;
        let eos_id = header("eos_id")? as TokenId;
        let summary_len = header("summary_len")?;
        let context_order = header("context_order")?;
        let rows = header("rows")?;
        if (eos_id as usize) >= vocab_size {
            return Err(Error::PolicyFormat { line: 3, msg: "eos_id out of range".into() });
        }
        let mut logits = LogitTable::zeros(vocab_size);
        for _ in 0..rows {
            let (n, l) = next("row")?;
            let bad = |msg: &str| Error::PolicyFormat { line: n, msg: msg.into() };
            let (key_part, vals) = l.split_once('|').ok_or_else(|| bad("missing `|`"))?;
            let key = key_part
                .split_whitespace()
                .map(|tok| match tok {
                    "bos" => Ok(BOS),
                    s => s
                        .parse::<TokenId>()
                        .ok()
                        .filter(|&t| (t as usize) < vocab_size)
                        .ok_or_else(|| bad("bad key token")),
                })
                .collect::<Result<Vec<_>>>()?;
            if key.len() != summary_len + context_order {
                return Err(bad("key length does not match summary_len + context_order"));
            }
            let row = vals
                .split_whitespace()
                .map(|s| s.parse::<f64>().ok().filter(|x| x.is_finite()))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| bad("bad logit"))?;
            if row.len() != vocab_size {
                return Err(bad("row length does not match vocab_size"));
            }
            logits.insert(ContextKey(key), row)?;
        }
        Ok(Self { vocab_size, eos_id, summary_len, context_order, logits })
    }
}

/// Inverse-CDF draw from log-probabilities given a uniform `u` in [0, 1).
fn sample_index(log_probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &l) in log_probs.iter().enumerate() {
        acc += l.exp();
        if u < acc {
            return i;
        }
    }
    // u landed in the rounding gap above the final cumulative sum
    log_probs
        .iter()
        .rposition(|l| *l > f64::NEG_INFINITY)
        .unwrap_or(log_probs.len() - 1)
}
