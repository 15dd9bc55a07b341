//! Token ↔ id mapping shared by every model in the crate.
//!
//! The ten reserved tokens always occupy ids `0..10` in a fixed order, so
//! their ids are compile-time constants ([`Special::id`]).

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense token identifier.
pub type TokenId = u32;

/// Marker prefixed to every non-initial wordpiece.
pub const CONTINUATION: &str = "##";

/// Reserved tokens, in id order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Special {
    Pad,
    Unk,
    Eos,
    Url,
    Email,
    Phone,
    Name,
    Subj,
    Prev,
    Body,
}

impl Special {
    pub const ALL: [Special; 10] = [
        Special::Pad,
        Special::Unk,
        Special::Eos,
        Special::Url,
        Special::Email,
        Special::Phone,
        Special::Name,
        Special::Subj,
        Special::Prev,
        Special::Body,
    ];

    /// Specials produced by text normalization. Suggestions containing one are
    /// never shown.
    pub const NORMALIZATION: [Special; 4] =
        [Special::Url, Special::Email, Special::Phone, Special::Name];

    pub const fn id(self) -> TokenId {
        self as TokenId
    }

    pub const fn as_str(self) -> &'static str {
        match self {
            Special::Pad => "<PAD>",
            Special::Unk => "<UNK>",
            Special::Eos => "<EOS>",
            Special::Url => "<URL>",
            Special::Email => "<EMAIL>",
            Special::Phone => "<PHONE>",
            Special::Name => "<NAME>",
            Special::Subj => "<SUBJ>",
            Special::Prev => "<PREV>",
            Special::Body => "<BODY>",
        }
    }

    pub fn parse(s: &str) -> Option<Special> {
        Special::ALL.iter().copied().find(|sp| sp.as_str() == s)
    }

    pub fn from_id(id: TokenId) -> Option<Special> {
        Special::ALL.get(id as usize).copied()
    }
}

pub const NUM_SPECIALS: usize = Special::ALL.len();

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VocabKind {
    Word,
    Wordpiece,
}

impl fmt::Display for VocabKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VocabKind::Word => "word",
            VocabKind::Wordpiece => "wordpiece",
        })
    }
}

impl std::str::FromStr for VocabKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "word" => Ok(VocabKind::Word),
            "wordpiece" => Ok(VocabKind::Wordpiece),
            other => Err(Error::invalid(format!("unknown vocabulary kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    kind: VocabKind,
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Builds a vocabulary from specials followed by `tokens`. Tokens that
    /// collide with a special or repeat an earlier token are rejected.
    pub fn new<I, S>(kind: VocabKind, tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocabulary {
            kind,
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for sp in Special::ALL {
            vocab.push_unchecked(sp.as_str().to_string());
        }
        for tok in tokens {
            vocab.push(tok.into())?;
        }
        Ok(vocab)
    }

    fn push_unchecked(&mut self, tok: String) -> TokenId {
        let id = self.tokens.len() as TokenId;
        self.index.insert(tok.clone(), id);
        self.tokens.push(tok);
        id
    }

    /// Appends a token, returning its id.
    pub fn push(&mut self, tok: String) -> Result<TokenId> {
        if tok.is_empty() || tok.chars().any(char::is_whitespace) {
            return Err(Error::invalid(format!("invalid token {tok:?}")));
        }
        if self.index.contains_key(&tok) {
            return Err(Error::invalid(format!("duplicate token {tok:?}")));
        }
        if self.kind == VocabKind::Word && tok.starts_with(CONTINUATION) {
            return Err(Error::invalid(format!(
                "word vocabulary cannot hold continuation piece {tok:?}"
            )));
        }
        Ok(self.push_unchecked(tok))
    }

    pub fn kind(&self) -> VocabKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    /// Id of `token`, or `<UNK>`.
    pub fn id_or_unk(&self, token: &str) -> TokenId {
        self.id(token).unwrap_or(Special::Unk.id())
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Non-special tokens in id order.
    pub fn regular_tokens(&self) -> &[String] {
        &self.tokens[NUM_SPECIALS..]
    }

    pub fn is_special(id: TokenId) -> bool {
        (id as usize) < NUM_SPECIALS
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "#kind={}", self.kind)?;
        for tok in &self.tokens {
            writeln!(w, "{tok}")?;
        }
        Ok(())
    }

    /// Parses the text format: a `#kind=` header, then one token per line with
    /// the line index (after the header) as id.
    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::parse(1, "empty vocabulary file"))??;
        let kind: VocabKind = header
            .strip_prefix("#kind=")
            .ok_or_else(|| Error::parse(1, "missing `#kind=` header"))?
            .trim()
            .parse()?;
        let mut body = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            body.push((i + 2, line.to_string()));
        }
        for (k, sp) in Special::ALL.iter().enumerate() {
            match body.get(k) {
                Some((_, tok)) if tok == sp.as_str() => {}
                Some((line, tok)) => {
                    return Err(Error::parse(
                        *line,
                        format!("expected {} at id {k}, found {tok:?}", sp.as_str()),
                    ))
                }
                None => return Err(Error::parse(k + 2, "truncated special-token block")),
            }
        }
        let mut vocab = Vocabulary::new(kind, std::iter::empty::<String>())?;
        for (line, tok) in body.into_iter().skip(NUM_SPECIALS) {
            vocab
                .push(tok)
                .map_err(|e| Error::parse(line, e.to_string()))?;
        }
        Ok(vocab)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(file))
    }
}
