use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::vocab::{Special, VocabKind, Vocabulary, NUM_SPECIALS};

/// Specials followed by the `size - NUM_SPECIALS` most frequent tokens.
/// Equal frequencies are ordered lexicographically so ids are reproducible.
pub fn build_word_vocab<'a, I>(tokens: I, size: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a str>,
{
    if size <= NUM_SPECIALS {
        return Err(Error::invalid(format!(
            "vocabulary size {size} leaves no room after {NUM_SPECIALS} specials"
        )));
    }
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for t in tokens {
        if Special::parse(t).is_none() {
            *counts.entry(t).or_insert(0) += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::invalid("cannot build a vocabulary from an empty corpus"));
    }
    let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(size - NUM_SPECIALS);
    Vocabulary::new(VocabKind::Word, ranked.into_iter().map(|(t, _)| t))
}
