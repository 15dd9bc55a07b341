use crate::dist::Distribution;
use crate::vocab::{Special, TokenId, VocabKind, Vocabulary, CONTINUATION};

/// The string a token contributes at the start of a word, or `None` for
/// continuation pieces, which cannot start one.
pub fn surface(vocab: &Vocabulary, id: TokenId) -> Option<&str> {
    let tok = vocab.token(id)?;
    match vocab.kind() {
        VocabKind::Wordpiece if tok.starts_with(CONTINUATION) => None,
        _ => Some(tok),
    }
}

/// Keeps only tokens whose surface string starts with `partial` and
/// renormalizes them. An empty partial leaves `dist` unchanged; `None`
/// means no token is feasible.
pub fn constrain_first_step(dist: &Distribution, partial: &str, vocab: &Vocabulary) -> Option<Distribution> {
    if partial.is_empty() {
        return Some(dist.clone());
    }
    let mut out = dist.clone();
    for (id, l) in out.as_mut_slice().iter_mut().enumerate() {
        let ok = surface(vocab, id as TokenId).is_some_and(|s| s.starts_with(partial));
        if !ok {
            *l = f64::NEG_INFINITY;
        }
    }
    out.renormalize().then_some(out)
}

fn attaches_left(tok: &str) -> bool {
    matches!(tok, "." | "," | "!" | "?") || tok.starts_with('\'')
}

/// Joins tokens into text, dropping `<EOS>`. Punctuation and
/// apostrophe-led tokens attach to the previous word; continuation pieces
/// lose their marker and attach as well.
pub fn detokenize(vocab: &Vocabulary, tokens: &[TokenId]) -> String {
    let mut out = String::new();
    for &id in tokens {
        if id == Special::Eos.id() {
            continue;
        }
        let Some(tok) = vocab.token(id) else { continue };
        if let Some(rest) = tok.strip_prefix(CONTINUATION).filter(|_| vocab.kind() == VocabKind::Wordpiece) {
            out.push_str(rest);
            continue;
        }
        if !out.is_empty() && !attaches_left(tok) {
            out.push(' ');
        }
        out.push_str(tok);
    }
    out
}
