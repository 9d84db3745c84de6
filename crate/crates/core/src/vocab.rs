//! Token identifiers, vocabularies and emitted sequences.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

/// Marker used to left-pad decoding history. Never a valid vocabulary entry.
pub const BOS: TokenId = u32::MAX;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    size: usize,
    eos_id: TokenId,
    turn_sep_id: TokenId,
    named: BTreeMap<String, TokenId>,
}

impl Vocabulary {
    pub fn new(
        size: usize,
        eos_id: TokenId,
        turn_sep_id: TokenId,
        named: BTreeMap<String, TokenId>,
    ) -> Result<Self> {
        if size < 4 {
            return Err(Error::invalid(format!("vocabulary size {size} is below 4")));
        }
        if eos_id == turn_sep_id {
            return Err(Error::invalid("eos_id and turn_sep_id must differ"));
        }
        for (label, &id) in std::iter::once(("eos", &eos_id))
            .chain(std::iter::once(("turn_sep", &turn_sep_id)))
            .chain(named.iter().map(|(k, v)| (k.as_str(), v)))
        {
            if id as usize >= size {
                return Err(Error::invalid(format!(
                    "token `{label}` = {id} is out of range for size {size}"
                )));
            }
        }
        Ok(Self { size, eos_id, turn_sep_id, named })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn eos_id(&self) -> TokenId {
        self.eos_id
    }

    pub fn turn_sep_id(&self) -> TokenId {
        self.turn_sep_id
    }

    pub fn token(&self, label: &str) -> Option<TokenId> {
        self.named.get(label).copied()
    }

    pub fn named(&self) -> &BTreeMap<String, TokenId> {
        &self.named
    }

    pub fn contains(&self, t: TokenId) -> bool {
        (t as usize) < self.size
    }
}

/// A response or query: an ordered run of token IDs.
///
/// Sampled responses end either with EOS or at the decoding length cap; both
/// count as terminated.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence {
    tokens: Vec<TokenId>,
}

impl TokenSequence {
    pub fn new(tokens: Vec<TokenId>) -> Self {
        Self { tokens }
    }

    /// Builds a sequence and checks every token against `vocab`.
    pub fn checked(tokens: Vec<TokenId>, vocab: &Vocabulary) -> Result<Self> {
        if let Some(&bad) = tokens.iter().find(|&&t| !vocab.contains(t)) {
            return Err(Error::TokenOutOfRange { token: bad, size: vocab.size() });
        }
        Ok(Self { tokens })
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn ends_with(&self, t: TokenId) -> bool {
        self.tokens.last() == Some(&t)
    }

    /// Tokens other than `eos`, in order.
    pub fn content(&self, eos: TokenId) -> impl Iterator<Item = TokenId> + '_ {
        self.tokens.iter().copied().filter(move |&t| t != eos)
    }
}

impl From<Vec<TokenId>> for TokenSequence {
    fn from(tokens: Vec<TokenId>) -> Self {
        Self::new(tokens)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_small_or_colliding_vocab() {
        assert!(Vocabulary::new(3, 0, 1, BTreeMap::new()).is_err());
        assert!(Vocabulary::new(5, 1, 1, BTreeMap::new()).is_err());
        let mut named = BTreeMap::new();
        named.insert("k".to_string(), 9);
        assert!(Vocabulary::new(5, 0, 1, named).is_err());
    }

    #[test]
    fn checked_sequence_rejects_out_of_range() {
        let v = Vocabulary::new(4, 0, 1, BTreeMap::new()).unwrap();
        assert!(TokenSequence::checked(vec![2, 3, 0], &v).is_ok());
        assert!(matches!(
            TokenSequence::checked(vec![2, 4], &v),
            Err(Error::TokenOutOfRange { token: 4, size: 4 })
        ));
    }
}
