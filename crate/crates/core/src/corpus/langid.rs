use std::collections::HashSet;
use std::sync::OnceLock;

use super::tokenize::tokenize;

pub const UNDETERMINED: &str = "und";

const LISTS: &[(&str, &str)] = &[
    ("de", include_str!("../../data/stopwords/de.txt")),
    ("en", include_str!("../../data/stopwords/en.txt")),
    ("es", include_str!("../../data/stopwords/es.txt")),
    ("fr", include_str!("../../data/stopwords/fr.txt")),
    ("it", include_str!("../../data/stopwords/it.txt")),
    ("pt", include_str!("../../data/stopwords/pt.txt")),
];

fn stoplists() -> &'static [(&'static str, HashSet<&'static str>)] {
    static SETS: OnceLock<Vec<(&'static str, HashSet<&'static str>)>> = OnceLock::new();
    SETS.get_or_init(|| {
        LISTS
            .iter()
            .map(|(tag, text)| (*tag, text.lines().map(str::trim).filter(|l| !l.is_empty()).collect()))
            .collect()
    })
}

pub fn supported_languages() -> impl Iterator<Item = &'static str> {
    LISTS.iter().map(|(tag, _)| *tag)
}

/// Language whose stopword list covers the largest share of word tokens.
/// Ties and texts without any hit yield [`UNDETERMINED`].
pub fn detect_language(text: &str) -> String {
    let words: Vec<String> = tokenize(text)
        .into_iter()
        .filter(|t| t.chars().next().is_some_and(char::is_alphabetic))
        .map(|t| t.to_lowercase())
        .collect();
    if words.is_empty() {
        return UNDETERMINED.to_string();
    }
    let mut best: Option<(&str, usize)> = None;
    let mut tied = false;
    for (tag, set) in stoplists() {
        let hits = words.iter().filter(|w| set.contains(w.as_str())).count();
        match best {
            Some((_, b)) if hits == b => tied = true,
            Some((_, b)) if hits < b => {}
            _ => {
                best = Some((tag, hits));
                tied = false;
            }
        }
    }
    match best {
        Some((tag, hits)) if hits > 0 && !tied => tag.to_string(),
        _ => UNDETERMINED.to_string(),
    }
}

pub(crate) fn is_stopword(lang: &str, word_lower: &str) -> bool {
    stoplists()
        .iter()
        .find(|(tag, _)| *tag == lang)
        .is_some_and(|(_, set)| set.contains(word_lower))
}
