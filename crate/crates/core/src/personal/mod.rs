//! Per-user Katz n-gram models and their interpolation with the global
//! model.

mod blend;
mod store;

pub use blend::{blend, pad_distribution, BlendedModel, InterpolationConfig};
pub use store::{user_hash, PersonalMeta, PersonalStore};

use std::collections::HashMap;

use crate::corpus::{encode, CleanMessage};
use crate::error::{Error, Result};
use crate::ngram::{estimate_katz, BackoffAutomaton, BuildReport, CountTable, DEFAULT_CUTOFF};
use crate::vocab::{Special, TokenId, VocabKind, Vocabulary};

pub const DEFAULT_MIN_COUNT: u64 = 2;
pub const DEFAULT_MAX_PERSONAL_VOCAB: usize = 4000;
/// Below this many sentences a user is served by the global model alone.
pub const MIN_SENTENCES: usize = 50;

/// Body words seen at least `min_count` times, most frequent first (ties
/// lexicographic), at most `max_size` of them.
pub fn extract_personal_vocab(msgs: &[CleanMessage], min_count: u64, max_size: usize) -> Result<Vocabulary> {
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for m in msgs {
        for w in m.body_tokens() {
            if Special::parse(w).is_none() {
                *counts.entry(w).or_insert(0) += 1;
            }
        }
    }
    let mut words: Vec<(&str, u64)> = counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
    words.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    words.truncate(max_size);
    Vocabulary::new(VocabKind::Word, words.into_iter().map(|(w, _)| w))
}

/// Global tokens followed by the personal words the global vocabulary
/// lacks, so global ids carry over unchanged. Wordpiece vocabularies can
/// already spell every word and are returned as they are.
pub fn union_vocab(global: &Vocabulary, personal: &Vocabulary) -> Result<Vocabulary> {
    let mut union = global.clone();
    if global.kind() == VocabKind::Word {
        for w in personal.regular_tokens() {
            if union.id(w).is_none() {
                union.push(w.clone())?;
            }
        }
    }
    Ok(union)
}

#[derive(Debug, Clone)]
pub struct PersonalModel {
    pub user_id: String,
    /// `None` when the user has too little data; serve the global model.
    pub automaton: Option<BackoffAutomaton>,
    pub personal_vocab: Vocabulary,
    pub union_vocab: Vocabulary,
    pub trained_at: i64,
    pub order: usize,
    pub sentences: usize,
    pub report: Option<BuildReport>,
}

impl PersonalModel {
    pub fn is_active(&self) -> bool {
        self.automaton.is_some()
    }

    /// Wraps an automaton read back from ARPA. Its symbols must be the
    /// global vocabulary followed by the personal words.
    pub fn from_automaton(user_id: &str, automaton: BackoffAutomaton, global: &Vocabulary) -> Result<Self> {
        let symbols = automaton.symbols();
        if symbols.len() < global.len() || symbols[..global.len()] != *global.tokens() {
            return Err(Error::invalid(
                "n-gram model symbols do not start with the global vocabulary",
            ));
        }
        let personal_vocab = Vocabulary::new(VocabKind::Word, symbols[global.len()..].iter().cloned())?;
        let union_vocab = union_vocab(global, &personal_vocab)?;
        if union_vocab.tokens() != symbols {
            return Err(Error::invalid("n-gram model symbols do not form a union vocabulary"));
        }
        Ok(PersonalModel {
            user_id: user_id.to_string(),
            order: automaton.order(),
            automaton: Some(automaton),
            personal_vocab,
            union_vocab,
            trained_at: 0,
            sentences: 0,
            report: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PersonalOptions {
    pub order: usize,
    pub min_count: u64,
    pub max_vocab: usize,
}

impl Default for PersonalOptions {
    fn default() -> Self {
        PersonalOptions {
            order: crate::ngram::DEFAULT_ORDER,
            min_count: DEFAULT_MIN_COUNT,
            max_vocab: DEFAULT_MAX_PERSONAL_VOCAB,
        }
    }
}

/// Body sentences of `msgs` encoded over `union`.
pub fn personal_sentences(msgs: &[CleanMessage], union: &Vocabulary) -> Vec<Vec<TokenId>> {
    msgs.iter()
        .flat_map(|m| m.body.iter())
        .map(|s| encode(union, s.iter().map(String::as_str)))
        .filter(|s| !s.is_empty())
        .collect()
}

/// Builds a user's model from their preprocessed sent messages.
pub fn train_personal(
    user_id: &str,
    msgs: &[CleanMessage],
    global: &Vocabulary,
    opts: &PersonalOptions,
    trained_at: i64,
) -> Result<PersonalModel> {
    if !(2..=4).contains(&opts.order) {
        return Err(Error::invalid(format!("personal model order must be 2..=4, got {}", opts.order)));
    }
    let personal_vocab = extract_personal_vocab(msgs, opts.min_count, opts.max_vocab)?;
    let union_vocab = union_vocab(global, &personal_vocab)?;
    let sentences = personal_sentences(msgs, &union_vocab);
    let (automaton, report) = if sentences.len() < MIN_SENTENCES {
        (None, None)
    } else {
        let table = CountTable::from_sentences(sentences.iter().map(Vec::as_slice), opts.order);
        let (aut, report) = estimate_katz(&table, union_vocab.tokens(), DEFAULT_CUTOFF)?;
        (Some(aut), Some(report))
    };
    Ok(PersonalModel {
        user_id: user_id.to_string(),
        automaton,
        personal_vocab,
        union_vocab,
        trained_at,
        order: opts.order,
        sentences: sentences.len(),
        report,
    })
}
