use std::collections::BTreeSet;

use super::Suggestion;
use crate::corpus::tokenize;
use crate::vocab::{Special, TokenId, VocabKind, Vocabulary};

pub const DEFAULT_BLOCKED_WORDS: [&str; 6] = ["he", "him", "his", "she", "her", "hers"];

/// Words a suggestion may never contain, compared case-insensitively.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenFilter {
    words: BTreeSet<String>,
    ids: Vec<TokenId>,
}

impl TokenFilter {
    /// Blocks the gendered pronouns plus `extra`. With a word vocabulary
    /// the matching ids are also masked during search; wordpiece pieces
    /// are shared with other words, so there only whole suggestions are
    /// checked.
    pub fn new<'a, I>(vocab: &Vocabulary, extra: I) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let words: BTreeSet<String> = DEFAULT_BLOCKED_WORDS
            .iter()
            .copied()
            .chain(extra)
            .map(str::to_lowercase)
            .collect();
        let mut ids = Vec::new();
        if vocab.kind() == VocabKind::Word {
            for (id, tok) in vocab.tokens().iter().enumerate() {
                if words.contains(&tok.to_lowercase()) {
                    ids.push(id as TokenId);
                }
            }
        }
        TokenFilter { words, ids }
    }

    pub fn blocked_ids(&self) -> &[TokenId] {
        &self.ids
    }

    pub fn blocks_word(&self, word: &str) -> bool {
        self.words.contains(&word.to_lowercase())
    }
}

/// Drops the whole suggestion when it contains a blocked word or a
/// normalization special.
pub fn filter_suggestion(s: Suggestion, filter: &TokenFilter) -> Option<Suggestion> {
    let has_special = s
        .tokens
        .iter()
        .any(|t| Special::NORMALIZATION.iter().any(|sp| sp.id() == *t));
    let words = tokenize(&s.text);
    let has_blocked = words.iter().any(|w| filter.blocks_word(w));
    let has_special_text = words.iter().any(|w| Special::parse(w).is_some());
    if has_special || has_blocked || has_special_text {
        None
    } else {
        Some(s)
    }
}
