use std::collections::HashMap;
use std::sync::OnceLock;

use regex::Regex;

use super::langid::{detect_language, is_stopword, UNDETERMINED};
use super::tokenize::tokenize;
use super::{CleanMessage, RawMessage};
use crate::vocab::Special;

/// Capitalized tokens seen fewer times than this are treated as names.
pub const NAME_FREQUENCY_CUTOFF: u64 = 10;

struct Patterns {
    url: Regex,
    email: Regex,
    phone: Regex,
    forward: Regex,
    salutation: Regex,
    salutation_line: Regex,
    close: Regex,
}

fn patterns() -> &'static Patterns {
    static P: OnceLock<Patterns> = OnceLock::new();
    P.get_or_init(|| Patterns {
        url: Regex::new(r"(?i)\b(?:https?://|www\.)[^\s<>]*[^\s<>.,!?;:)\]]").unwrap(),
        email: Regex::new(r"[\w.+-]+@[\w-]+(?:\.[\w-]+)+").unwrap(),
        phone: Regex::new(r"\+?\d[\d ().-]{6,}\d").unwrap(),
        forward: Regex::new(
            r"^\s*(?:-{2,}\s*(?:Forwarded message|Original Message)\s*-{2,}|Begin forwarded message:|On .+ wrote:\s*$|From: .+)",
        )
        .unwrap(),
        salutation: Regex::new(r"^\s*(?:Hi|Hello|Dear|Hey)\b[^,!\n]*[,!]").unwrap(),
        // a short greeting line; a sentence terminator means it is content
        salutation_line: Regex::new(r"^\s*(?:Hi|Hello|Dear|Hey)\b[^\n.?!]*$").unwrap(),
        close: Regex::new(
            r"(?:^|[\s.!?])(?:Best(?: regards| wishes)?|Kind regards|Warm regards|Regards|Thanks|Thank you|Many thanks|Cheers|Sincerely|Yours truly)\s*,(?:\s*\p{Lu}[\p{L}'.-]*(?:\s+\p{Lu}[\p{L}'.-]*)?)?\s*$",
        )
        .unwrap(),
    })
}

/// Counts surface tokens over raw bodies, subjects and previous bodies; the
/// table feeds the name rule of [`Preprocessor`].
pub fn count_tokens<'a, I>(msgs: I) -> HashMap<String, u64>
where
    I: IntoIterator<Item = &'a RawMessage>,
{
    let mut counts = HashMap::new();
    for m in msgs {
        let fields = [Some(&m.subject), m.previous_body.as_ref(), Some(&m.body)];
        for text in fields.into_iter().flatten() {
            for t in tokenize(text) {
                *counts.entry(t).or_insert(0) += 1;
            }
        }
    }
    counts
}

/// Cleans raw messages for one target language.
#[derive(Debug, Clone)]
pub struct Preprocessor {
    lang: String,
    counts: HashMap<String, u64>,
}

impl Preprocessor {
    pub fn new(lang: impl Into<String>) -> Self {
        Preprocessor {
            lang: lang.into(),
            counts: HashMap::new(),
        }
    }

    /// Corpus frequencies for the name rule. Without them every capitalized,
    /// non-initial, non-stopword token is replaced by `<NAME>`.
    pub fn with_counts(mut self, counts: HashMap<String, u64>) -> Self {
        self.counts = counts;
        self
    }

    pub fn language(&self) -> &str {
        &self.lang
    }

    /// Returns `None` when the message is in another language or nothing of
    /// the body survives cleaning.
    pub fn preprocess(&self, msg: &RawMessage) -> Option<CleanMessage> {
        let language = match &msg.language {
            Some(l) => l.clone(),
            None => detect_language(&format!("{} {}", msg.subject, msg.body)),
        };
        if language != self.lang && language != UNDETERMINED {
            return None;
        }

        // entities first so the salutation rules see the text a second pass would
        let body = replace_entities(&strip_quoted(&msg.body));
        let body = strip_salutation_and_close(&body);
        let body = self.sentences(&body);
        if body.is_empty() {
            return None;
        }
        let subject = self.flat(&msg.subject);
        let previous_body = msg
            .previous_body
            .as_deref()
            .map(|p| self.flat(&strip_quoted(p)))
            .unwrap_or_default();

        Some(CleanMessage {
            subject,
            previous_body,
            body,
            timestamp: msg.timestamp,
            locale: msg.locale.clone(),
            language: self.lang.clone(),
            utc_offset_minutes: msg.utc_offset_minutes,
        })
    }

    fn flat(&self, text: &str) -> Vec<String> {
        self.sentences(text).into_iter().flatten().collect()
    }

    /// Normalizes, tokenizes and splits on line breaks and `.`/`!`/`?`.
    fn sentences(&self, text: &str) -> Vec<Vec<String>> {
        let text = replace_entities(text);
        let mut out = Vec::new();
        for line in text.lines() {
            let mut cur: Vec<String> = Vec::new();
            for tok in tokenize(line) {
                let end = matches!(tok.as_str(), "." | "!" | "?");
                cur.push(tok);
                if end {
                    out.push(std::mem::take(&mut cur));
                }
            }
            if !cur.is_empty() {
                out.push(cur);
            }
        }
        for sentence in &mut out {
            for tok in sentence.iter_mut().skip(1) {
                if self.is_name(tok) {
                    *tok = Special::Name.as_str().to_string();
                }
            }
        }
        out
    }

    fn is_name(&self, tok: &str) -> bool {
        let mut chars = tok.chars();
        let capitalized = chars.next().is_some_and(char::is_uppercase)
            && tok.chars().any(char::is_lowercase);
        if !capitalized {
            return false;
        }
        if is_stopword(&self.lang, &tok.to_lowercase()) {
            return false;
        }
        self.counts.get(tok).copied().unwrap_or(0) < NAME_FREQUENCY_CUTOFF
    }
}

/// Replaces URLs, e-mail addresses and phone numbers by their special
/// tokens, as preprocessing does.
pub fn normalize_entities(text: &str) -> String {
    replace_entities(text)
}

fn replace_entities(text: &str) -> String {
    let p = patterns();
    let text = p.url.replace_all(text, " <URL> ");
    let text = p.email.replace_all(&text, " <EMAIL> ");
    let text = p.phone.replace_all(&text, " <PHONE> ");
    text.into_owned()
}

/// Drops `>`-quoted lines and everything from a forward/reply header on.
fn strip_quoted(text: &str) -> String {
    let p = patterns();
    let mut kept = Vec::new();
    for line in text.lines() {
        if p.forward.is_match(line) {
            break;
        }
        if line.trim_start().starts_with('>') {
            continue;
        }
        kept.push(line);
    }
    kept.join("\n")
}

fn strip_salutation_and_close(text: &str) -> String {
    let p = patterns();
    let mut text = text.trim().to_string();
    loop {
        let before = text.len();
        if let Some(m) = p.salutation.find(&text) {
            text = text[m.end()..].trim().to_string();
        } else {
            let first = text.lines().next().unwrap_or("");
            if p.salutation_line.is_match(first) && first.split_whitespace().count() <= 4 {
                text = text[first.len()..].trim().to_string();
            }
        }
        if let Some(m) = p.close.find(&text) {
            // keep a sentence terminator swallowed by the leading class
            let lead = m.as_str().chars().next().filter(|c| matches!(c, '.' | '!' | '?'));
            text = text[..m.start()].trim().to_string();
            text.extend(lead);
        }
        if text.len() == before {
            return text;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(body: &str) -> RawMessage {
        RawMessage {
            subject: String::new(),
            previous_body: None,
            body: body.into(),
            timestamp: 0,
            locale: "en-US".into(),
            language: Some("en".into()),
            utc_offset_minutes: None,
        }
    }

    fn body_tokens(body: &str) -> Vec<String> {
        let clean = Preprocessor::new("en").preprocess(&raw(body)).unwrap();
        clean.body_tokens().map(str::to_string).collect()
    }

    #[test]
    fn url_email_phone_replaced() {
        assert_eq!(body_tokens("Visit http://x.co now"), ["Visit", "<URL>", "now"]);
        assert_eq!(
            body_tokens("mail bob@example.com or call +1 (555) 123-4567 today"),
            ["mail", "<EMAIL>", "or", "call", "<PHONE>", "today"]
        );
    }

    #[test]
    fn quoted_lines_dropped() {
        assert_eq!(body_tokens("> old text\nThanks!"), ["Thanks", "!"]);
        assert_eq!(
            body_tokens("Sounds good.\nOn Mon, Jan 1, Bob wrote:\nall of this goes"),
            ["Sounds", "good", "."]
        );
    }

    #[test]
    fn salutation_and_close_removed() {
        assert_eq!(body_tokens("Hi John, lunch? Best, Mary"), ["lunch", "?"]);
        assert_eq!(
            body_tokens("Hello team\nthe build is green.\nThanks,\nAlex"),
            ["the", "build", "is", "green", "."]
        );
        assert_eq!(body_tokens("Sure thing. Cheers,"), ["Sure", "thing", "."]);
    }

    #[test]
    fn rare_capitalized_tokens_become_names() {
        let toks = body_tokens("we met Priya at noon. Priya agreed");
        assert_eq!(toks, ["we", "met", "<NAME>", "at", "noon", ".", "Priya", "agreed"]);
        let mut counts = HashMap::new();
        counts.insert("Priya".to_string(), 12);
        let clean = Preprocessor::new("en")
            .with_counts(counts)
            .preprocess(&raw("we met Priya"))
            .unwrap();
        assert_eq!(clean.body[0], ["we", "met", "Priya"]);
    }

    #[test]
    fn other_languages_filtered() {
        let mut m = raw("el la de que y los las");
        m.language = None;
        assert!(Preprocessor::new("en").preprocess(&m).is_none());
        assert!(Preprocessor::new("es").preprocess(&m).is_some());
    }

    #[test]
    fn empty_after_cleaning_is_filtered() {
        assert!(Preprocessor::new("en").preprocess(&raw("> only quoted")).is_none());
    }
}
