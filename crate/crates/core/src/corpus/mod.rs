//! E-mail ingestion: cleaning, language filtering, vocabulary learning and
//! training-example construction.

mod examples;
mod langid;
mod preprocess;
mod tokenize;
mod vocab_build;
mod wordpiece;

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::{TokenId, VocabKind, Vocabulary};

pub use examples::{
    locale_id, locale_table, make_examples, ContextFeatures, ExampleMode, TimeBucket,
    TrainingExample, DEFAULT_MAX_TARGET_LEN, NUM_LOCALES,
};
pub(crate) use examples::pack;
pub use langid::{detect_language, supported_languages, UNDETERMINED};
pub use preprocess::{count_tokens, normalize_entities, Preprocessor, NAME_FREQUENCY_CUTOFF};
pub use tokenize::{split_partial, tokenize};
pub use vocab_build::build_word_vocab;
pub use wordpiece::{build_wordpiece_vocab, encode_wordpiece};

/// One raw e-mail record as found in the input corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawMessage {
    #[serde(default)]
    pub subject: String,
    #[serde(default)]
    pub previous_body: Option<String>,
    pub body: String,
    /// Seconds since the Unix epoch.
    pub timestamp: i64,
    pub locale: String,
    /// Declared language; when absent the language is detected from the text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language: Option<String>,
    /// Offset of the sender's local time from UTC.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utc_offset_minutes: Option<i32>,
}

impl RawMessage {
    pub fn validate(&self) -> Result<()> {
        if self.body.trim().is_empty() {
            return Err(Error::invalid("message body is empty"));
        }
        if !is_locale_tag(&self.locale) {
            return Err(Error::invalid(format!(
                "locale `{}` is not of the form xx-XX",
                self.locale
            )));
        }
        Ok(())
    }
}

pub(crate) fn is_locale_tag(s: &str) -> bool {
    let b = s.as_bytes();
    b.len() == 5
        && b[0].is_ascii_lowercase()
        && b[1].is_ascii_lowercase()
        && b[2] == b'-'
        && b[3].is_ascii_uppercase()
        && b[4].is_ascii_uppercase()
}

/// A message after cleaning. Body text is kept as sentences of tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanMessage {
    pub subject: Vec<String>,
    pub previous_body: Vec<String>,
    pub body: Vec<Vec<String>>,
    pub timestamp: i64,
    pub locale: String,
    pub language: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utc_offset_minutes: Option<i32>,
}

impl CleanMessage {
    pub fn body_tokens(&self) -> impl Iterator<Item = &str> {
        self.body.iter().flatten().map(String::as_str)
    }

    /// Every token of every field.
    pub fn all_tokens(&self) -> impl Iterator<Item = &str> {
        self.subject
            .iter()
            .chain(self.previous_body.iter())
            .map(String::as_str)
            .chain(self.body_tokens())
    }

    /// Renders the message back into raw form, one sentence per line.
    pub fn to_raw(&self) -> RawMessage {
        RawMessage {
            subject: self.subject.join(" "),
            previous_body: if self.previous_body.is_empty() {
                None
            } else {
                Some(self.previous_body.join(" "))
            },
            body: self
                .body
                .iter()
                .map(|s| s.join(" "))
                .collect::<Vec<_>>()
                .join("\n"),
            timestamp: self.timestamp,
            locale: self.locale.clone(),
            language: Some(self.language.clone()),
            utc_offset_minutes: self.utc_offset_minutes,
        }
    }
}

/// Encodes surface tokens with `vocab`: whole-word lookup for word
/// vocabularies, greedy longest-match pieces for wordpiece ones.
pub fn encode<'a, I>(vocab: &Vocabulary, words: I) -> Vec<TokenId>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut out = Vec::new();
    for w in words {
        match vocab.kind() {
            VocabKind::Word => out.push(vocab.id_or_unk(w)),
            VocabKind::Wordpiece => encode_wordpiece(vocab, w, &mut out),
        }
    }
    out
}

/// Reads JSON-lines records. Blank lines are skipped; errors carry the line
/// number.
pub fn read_jsonl<T, R>(r: R) -> Result<Vec<T>>
where
    T: for<'de> Deserialize<'de>,
    R: BufRead,
{
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::parse(i + 1, e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize, W: Write>(mut w: W, records: &[T]) -> Result<()> {
    for rec in records {
        serde_json::to_writer(&mut w, rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
