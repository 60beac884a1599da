//! Word-level closed vocabulary.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tokens::{TokenId, RESERVED, UNK_ID};

/// Token/id bijection with the five reserved tokens at fixed ids.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens
    }
}

impl Vocabulary {
    /// Build from the non-reserved word list; reserved tokens are prepended.
    pub fn new<S: AsRef<str>>(words: &[S]) -> Result<Self> {
        let mut tokens: Vec<String> = RESERVED.iter().map(|(w, _)| w.to_string()).collect();
        tokens.extend(words.iter().map(|w| w.as_ref().to_string()));
        Self::from_full_list(tokens)
    }

    /// Build from the complete token list, reserved tokens included.
    pub fn from_full_list(tokens: Vec<String>) -> Result<Self> {
        for (word, id) in RESERVED {
            if tokens.get(id).map(String::as_str) != Some(word) {
                return Err(Error::Vocab(format!(
                    "reserved token {word:?} missing from id {id}"
                )));
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(|c| c.is_whitespace() || c == '|') {
                return Err(Error::Vocab(format!(
                    "token {t:?} contains forbidden characters"
                )));
            }
            if index.insert(t.clone(), id).is_some() {
                return Err(Error::Vocab(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Encode words; unknown words map to the unk token.
    pub fn encode(&self, words: &[&str]) -> Vec<TokenId> {
        words.iter().map(|w| self.id(w).unwrap_or(UNK_ID)).collect()
    }

    /// Decode ids into words. Out-of-range ids are an error.
    pub fn decode(&self, ids: &[TokenId]) -> Result<Vec<&str>> {
        ids.iter()
            .map(|&id| {
                self.token(id)
                    .ok_or_else(|| Error::Vocab(format!("token id {id} out of range")))
            })
            .collect()
    }

    /// Ids eligible as random replacement tokens (everything non-reserved).
    pub fn replacement_ids(&self) -> std::ops::Range<TokenId> {
        RESERVED.len()..self.tokens.len()
    }
}
