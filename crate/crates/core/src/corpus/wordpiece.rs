//! Subword vocabulary learned by greedy pair merges, encoded by greedy
//! longest match.
//!
//! Word-initial pieces are bare; every other piece carries the `##`
//! continuation marker, so `"hello"` may encode as `["he", "##llo"]`.

use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::vocab::{Special, TokenId, VocabKind, Vocabulary, CONTINUATION, NUM_SPECIALS};

fn bare(piece: &str) -> &str {
    piece.strip_prefix(CONTINUATION).unwrap_or(piece)
}

fn merged(left: &str, right: &str) -> String {
    let mut s = String::with_capacity(left.len() + right.len());
    s.push_str(left);
    s.push_str(bare(right));
    s
}

fn split_word(word: &str) -> Vec<String> {
    word.chars()
        .enumerate()
        .map(|(i, c)| {
            if i == 0 {
                c.to_string()
            } else {
                format!("{CONTINUATION}{c}")
            }
        })
        .collect()
}

/// Learns a shared wordpiece vocabulary over several corpora.
///
/// Starts from the character inventory (initial and continuation forms of
/// every character seen) and repeatedly merges the most frequent adjacent
/// pair until the vocabulary reaches `size` or no pair remains. Ties prefer
/// the lexicographically smaller merged surface string, then the
/// word-initial pair.
pub fn build_wordpiece_vocab<'a, I, C>(corpora: I, size: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = C>,
    C: IntoIterator<Item = &'a str>,
{
    let mut word_counts: HashMap<&str, u64> = HashMap::new();
    for corpus in corpora {
        for w in corpus {
            if Special::parse(w).is_none() {
                *word_counts.entry(w).or_insert(0) += 1;
            }
        }
    }
    if word_counts.is_empty() {
        return Err(Error::invalid("cannot build a vocabulary from an empty corpus"));
    }
    let mut words: Vec<(Vec<String>, u64)> = word_counts
        .into_iter()
        .map(|(w, c)| (split_word(w), c))
        .collect();
    words.sort();

    let inventory: BTreeSet<String> = words.iter().flat_map(|(s, _)| s.iter().cloned()).collect();
    let needed = NUM_SPECIALS + inventory.len();
    if size < needed {
        return Err(Error::invalid(format!(
            "vocabulary size {size} is below specials plus character inventory ({needed})"
        )));
    }
    let mut vocab = Vocabulary::new(VocabKind::Wordpiece, inventory)?;

    while vocab.len() < size {
        let mut pairs: HashMap<(&str, &str), u64> = HashMap::new();
        for (syms, count) in &words {
            for w in syms.windows(2) {
                *pairs.entry((w[0].as_str(), w[1].as_str())).or_insert(0) += count;
            }
        }
        let Some((left, right)) = pairs
            .into_iter()
            .map(|((l, r), c)| (c, merged(bare(l), r), !l.starts_with(CONTINUATION), l, r))
            .max_by(|a, b| {
                a.0.cmp(&b.0)
                    .then_with(|| b.1.cmp(&a.1))
                    .then_with(|| a.2.cmp(&b.2))
                    .then_with(|| (b.3, b.4).cmp(&(a.3, a.4)))
            })
            .map(|(_, _, _, l, r)| (l.to_string(), r.to_string()))
        else {
            break;
        };

        let piece = merged(&left, &right);
        for (syms, _) in &mut words {
            let mut i = 0;
            while i + 1 < syms.len() {
                if syms[i] == left && syms[i + 1] == right {
                    syms[i] = piece.clone();
                    syms.remove(i + 1);
                }
                i += 1;
            }
        }
        if vocab.id(&piece).is_none() {
            vocab.push(piece)?;
        }
    }
    Ok(vocab)
}

/// Appends the pieces of `word` to `out`. Specials map to themselves; a word
/// with a character the vocabulary cannot cover becomes a single `<UNK>`.
pub fn encode_wordpiece(vocab: &Vocabulary, word: &str, out: &mut Vec<TokenId>) {
    if let Some(sp) = Special::parse(word) {
        out.push(sp.id());
        return;
    }
    let bounds: Vec<usize> = word
        .char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(word.len()))
        .collect();
    let mark = out.len();
    let mut start = 0;
    let mut buf = String::new();
    while start + 1 < bounds.len() {
        let mut found = None;
        for end in (start + 1..bounds.len()).rev() {
            buf.clear();
            if start > 0 {
                buf.push_str(CONTINUATION);
            }
            buf.push_str(&word[bounds[start]..bounds[end]]);
            if let Some(id) = vocab.id(&buf) {
                found = Some((id, end));
                break;
            }
        }
        match found {
            Some((id, end)) => {
                out.push(id);
                start = end;
            }
            None => {
                out.truncate(mark);
                out.push(Special::Unk.id());
                return;
            }
        }
    }
}
