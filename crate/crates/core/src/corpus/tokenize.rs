use std::sync::OnceLock;

use regex::Regex;

fn token_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"<(?:URL|EMAIL|PHONE|NAME)>|\p{N}+(?:[.,:]\p{N}+)*|[\p{L}\p{M}\p{N}]+(?:'[\p{L}\p{M}]+)*|[^\s\p{L}\p{M}\p{N}]",
        )
        .unwrap()
    })
}

/// Splits text into word, number, normalization-special and single-character
/// punctuation tokens. Typographic apostrophes are folded to `'`.
pub fn tokenize(text: &str) -> Vec<String> {
    let text = text.replace('\u{2019}', "'");
    token_re()
        .find_iter(&text)
        .map(|m| m.as_str().to_string())
        .collect()
}

/// Splits typed text into complete tokens and the trailing partial word.
///
/// The last token counts as partial when the text does not end in whitespace
/// and that token is a word or number (punctuation is always complete).
pub fn split_partial(text: &str) -> (Vec<String>, String) {
    let mut toks = tokenize(text);
    let ends_open = text.chars().last().is_some_and(|c| !c.is_whitespace());
    if ends_open {
        if let Some(last) = toks.last() {
            let wordish = last
                .chars()
                .next()
                .is_some_and(|c| c.is_alphanumeric());
            if wordish && text.replace('\u{2019}', "'").ends_with(last.as_str()) {
                let partial = toks.pop().unwrap();
                return (toks, partial);
            }
        }
    }
    (toks, String::new())
}
