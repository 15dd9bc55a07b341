// negated float comparisons are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod corpus;
pub mod decoder;
pub mod dist;
pub mod error;
pub mod eval;
pub mod lm;
pub mod neural;
pub mod ngram;
pub mod personal;
pub mod service;
pub mod synth;
pub mod vocab;

pub use dist::Distribution;
pub use error::{Error, Result};
pub use lm::LanguageModel;
pub use vocab::{Special, TokenId, VocabKind, Vocabulary};

/// The guide in `book/`, compiled so its examples stay correct.
#[cfg(doctest)]
pub mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub struct Introduction;
    #[doc = include_str!("../../../book/src/corpus.md")]
    pub struct Corpus;
    #[doc = include_str!("../../../book/src/ngram.md")]
    pub struct Ngram;
    #[doc = include_str!("../../../book/src/neural.md")]
    pub struct Neural;
    #[doc = include_str!("../../../book/src/decoding.md")]
    pub struct Decoding;
    #[doc = include_str!("../../../book/src/personalization.md")]
    pub struct Personalization;
    #[doc = include_str!("../../../book/src/evaluation.md")]
    pub struct Evaluation;
    #[doc = include_str!("../../../book/src/service.md")]
    pub struct Service;
    #[doc = include_str!("../../../book/src/cli.md")]
    pub struct Cli;
}
