//! ARPA text serialization.
//!
//! ```text
//! \data\
//! ngram 1=3
//! ngram 2=2
//!
//! \1-grams:
//! -0.301030 a -0.096910
//! ...
//!
//! \end\
//! ```
//!
//! Fields are tab-separated. Weights are written with six decimals, so a model is a fixed point after
//! one write/read cycle.

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

use super::automaton::{BackoffAutomaton, Entry, LOG10_ZERO, START_SYMBOL};
use super::count::START;
use crate::vocab::TokenId;

#[derive(Debug, Error, PartialEq)]
pub enum ArpaError {
    #[error("missing `\\data\\` header")]
    MissingData,
    #[error("line {line}: malformed header: {text}")]
    BadHeader { line: usize, text: String },
    #[error("line {line}: {msg}")]
    BadEntry { line: usize, msg: String },
    #[error("line {line}: non-numeric weight `{text}`")]
    BadNumber { line: usize, text: String },
    #[error("{order}-grams: header declares {declared} entries, found {found}")]
    CountMismatch {
        order: usize,
        declared: usize,
        found: usize,
    },
    #[error("missing `\\end\\` marker (file truncated?)")]
    MissingEnd,
    #[error("invalid model: {0}")]
    Model(String),
}

/// Renders the automaton in ARPA format.
pub fn serialize_arpa(aut: &BackoffAutomaton) -> String {
    let mut entries = aut.entries();
    // the start symbol is listed among the unigrams whenever it is a history
    if aut.order() > 1 && !entries.iter().any(|e| e.gram == [START]) {
        entries.push(Entry {
            gram: vec![START],
            log10: LOG10_ZERO,
            backoff: None,
        });
        entries.sort_by(|a, b| (a.gram.len(), &a.gram).cmp(&(b.gram.len(), &b.gram)));
    }
    let mut counts = vec![0usize; aut.order()];
    for e in &entries {
        counts[e.gram.len() - 1] += 1;
    }

    let mut out = String::new();
    out.push_str("\\data\\\n");
    for (k, c) in counts.iter().enumerate() {
        let _ = writeln!(out, "ngram {}={}", k + 1, c);
    }
    let mut cur = 0;
    for e in &entries {
        if e.gram.len() != cur {
            cur = e.gram.len();
            let _ = write!(out, "\n\\{cur}-grams:\n");
        }
        let _ = write!(out, "{:.6}", e.log10);
        for &t in &e.gram {
            out.push('\t');
            out.push_str(aut.symbol(t));
        }
        if let Some(bo) = e.backoff {
            let _ = write!(out, "\t{bo:.6}");
        }
        out.push('\n');
    }
    out.push_str("\n\\end\\\n");
    out
}

/// Parses ARPA text. Unigram order defines symbol ids; `<s>` is the start
/// symbol and is never predicted.
pub fn parse_arpa(text: &str) -> Result<BackoffAutomaton, ArpaError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));

    for (_, line) in lines.by_ref() {
        if line == "\\data\\" {
            break;
        }
    }
    let mut declared: Vec<usize> = Vec::new();
    let mut pending = None;
    for (no, line) in lines.by_ref() {
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("ngram ") {
            let (k, c) = rest.split_once('=').ok_or_else(|| ArpaError::BadHeader {
                line: no,
                text: line.into(),
            })?;
            let k: usize = k.trim().parse().map_err(|_| ArpaError::BadHeader {
                line: no,
                text: line.into(),
            })?;
            let c: usize = c.trim().parse().map_err(|_| ArpaError::BadHeader {
                line: no,
                text: line.into(),
            })?;
            if k != declared.len() + 1 {
                return Err(ArpaError::BadHeader {
                    line: no,
                    text: line.into(),
                });
            }
            declared.push(c);
        } else {
            pending = Some((no, line));
            break;
        }
    }
    if declared.is_empty() {
        return Err(if pending.is_none() && !text.contains("\\data\\") {
            ArpaError::MissingData
        } else {
            ArpaError::BadHeader {
                line: pending.map(|p| p.0).unwrap_or(0),
                text: "no `ngram k=N` lines".into(),
            }
        });
    }
    let order = declared.len();

    let mut symbols: Vec<String> = Vec::new();
    let mut ids: HashMap<String, TokenId> = HashMap::new();
    let mut raw: Vec<(usize, Vec<String>, f64, Option<f64>)> = Vec::new();
    let mut section: Option<usize> = None;
    let mut found = vec![0usize; order];
    let mut ended = false;

    let mut next = pending;
    loop {
        let (no, line) = match next.take() {
            Some(x) => x,
            None => match lines.next() {
                Some(x) => x,
                None => break,
            },
        };
        if line.is_empty() {
            continue;
        }
        if line == "\\end\\" {
            ended = true;
            break;
        }
        if line.starts_with('\\') {
            let k = line
                .strip_prefix('\\')
                .and_then(|s| s.strip_suffix("-grams:"))
                .and_then(|s| s.parse::<usize>().ok())
                .filter(|&k| k >= 1 && k <= order)
                .ok_or_else(|| ArpaError::BadHeader {
                    line: no,
                    text: line.into(),
                })?;
            if let Some(prev) = section {
                check_count(prev, &declared, &found)?;
                if k != prev + 1 {
                    return Err(ArpaError::BadHeader {
                        line: no,
                        text: line.into(),
                    });
                }
            } else if k != 1 {
                return Err(ArpaError::BadHeader {
                    line: no,
                    text: line.into(),
                });
            }
            section = Some(k);
            continue;
        }
        let k = section.ok_or_else(|| ArpaError::BadEntry {
            line: no,
            msg: "entry outside any n-gram section".into(),
        })?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != k + 1 && fields.len() != k + 2 {
            return Err(ArpaError::BadEntry {
                line: no,
                msg: format!("expected {} or {} fields, found {}", k + 1, k + 2, fields.len()),
            });
        }
        let weight = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| ArpaError::BadNumber {
                    line: no,
                    text: s.into(),
                })
        };
        let logp = weight(fields[0])?;
        let backoff = if fields.len() == k + 2 {
            Some(weight(fields[k + 1])?)
        } else {
            None
        };
        let toks: Vec<String> = fields[1..=k].iter().map(|s| s.to_string()).collect();
        if k == 1 && toks[0] != START_SYMBOL {
            if ids.contains_key(&toks[0]) {
                return Err(ArpaError::BadEntry {
                    line: no,
                    msg: format!("duplicate unigram `{}`", toks[0]),
                });
            }
            ids.insert(toks[0].clone(), symbols.len() as TokenId);
            symbols.push(toks[0].clone());
        }
        found[k - 1] += 1;
        raw.push((no, toks, logp, backoff));
    }
    if !ended {
        return Err(ArpaError::MissingEnd);
    }
    match section {
        Some(k) => {
            check_count(k, &declared, &found)?;
            for (kk, _) in declared.iter().enumerate().skip(k) {
                check_count(kk + 1, &declared, &found)?;
            }
        }
        None => check_count(1, &declared, &found)?,
    }

    let mut entries = Vec::with_capacity(raw.len());
    for (no, toks, log10, backoff) in raw {
        let gram = toks
            .iter()
            .map(|t| {
                if t == START_SYMBOL {
                    Ok(START)
                } else {
                    ids.get(t).copied().ok_or_else(|| ArpaError::BadEntry {
                        line: no,
                        msg: format!("token `{t}` has no unigram entry"),
                    })
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        entries.push(Entry {
            gram,
            log10,
            backoff,
        });
    }
    BackoffAutomaton::from_entries(order, symbols, entries).map_err(|e| ArpaError::Model(e.to_string()))
}

fn check_count(k: usize, declared: &[usize], found: &[usize]) -> Result<(), ArpaError> {
    if declared[k - 1] != found[k - 1] {
        return Err(ArpaError::CountMismatch {
            order: k,
            declared: declared[k - 1],
            found: found[k - 1],
        });
    }
    Ok(())
}
