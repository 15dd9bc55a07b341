//! Confidence-ordered beam search with first-step prefix constraints and
//! suggestion filtering.

mod filter;
mod text;

pub use filter::{filter_suggestion, TokenFilter, DEFAULT_BLOCKED_WORDS};
pub use text::{constrain_first_step, detokenize, surface};

use serde::{Deserialize, Serialize};

use crate::dist::Distribution;
use crate::error::{Error, Result};
use crate::lm::LanguageModel;
use crate::vocab::{Special, TokenId, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamConfig {
    pub beam_size: usize,
    pub expansion: usize,
    pub max_len: usize,
    pub end_tokens: Vec<TokenId>,
    pub threshold: f64,
    pub n_best: usize,
}

impl BeamConfig {
    /// Defaults with `<EOS>` and whichever of `.`, `!`, `?` the vocabulary
    /// has as end tokens. The threshold starts at `-inf` (always trigger).
    pub fn new(vocab: &Vocabulary) -> Self {
        let mut end_tokens = vec![Special::Eos.id()];
        end_tokens.extend([".", "!", "?"].iter().filter_map(|t| vocab.id(t)));
        BeamConfig {
            beam_size: 8,
            expansion: 8,
            max_len: 15,
            end_tokens,
            threshold: f64::NEG_INFINITY,
            n_best: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.expansion < 1 || self.max_len < 1 || self.n_best < 1 || self.n_best > self.beam_size {
            return Err(Error::invalid(
                "beam config needs expansion >= 1, max_len >= 1 and 1 <= n_best <= beam_size",
            ));
        }
        if self.threshold.is_nan() {
            return Err(Error::invalid("threshold is NaN"));
        }
        Ok(())
    }

    fn is_end(&self, t: TokenId) -> bool {
        self.end_tokens.contains(&t)
    }
}

/// Length-normalized log probability, in nats per token.
pub fn confidence(sum_logprob: f64, length: usize) -> Result<f64> {
    if length == 0 {
        return Err(Error::invalid("confidence of an empty sequence"));
    }
    Ok(sum_logprob / length as f64)
}

/// A finished beam entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<TokenId>,
    pub sum_logprob: f64,
}

impl Hypothesis {
    pub fn confidence(&self) -> f64 {
        self.sum_logprob / self.tokens.len() as f64
    }
}

#[derive(Debug, Clone)]
struct Candidate<S> {
    tokens: Vec<TokenId>,
    sum_logprob: f64,
    state: S,
}

/// Higher confidence first; ties go to the lexicographically smaller token
/// sequence, which also puts a prefix ahead of its extensions.
fn rank(a_conf: f64, a: &[TokenId], b_conf: f64, b: &[TokenId]) -> std::cmp::Ordering {
    b_conf.total_cmp(&a_conf).then_with(|| a.cmp(b))
}

/// Runs the beam from `init` and returns every completed hypothesis, best
/// first.
///
/// Each step expands every live candidate by its `expansion` best tokens
/// (entries with `blocked[id]` set never appear), pools the extensions and
/// keeps the `beam_size` most confident. Extensions ending in an end token
/// or reaching `max_len` are complete and leave the beam; the search stops
/// when nothing is live. `first_step` may rewrite the distribution of the
/// first step and returns false when no first token is feasible.
pub fn beam_search<M, F>(
    model: &M,
    init: &M::State,
    cfg: &BeamConfig,
    blocked: &[bool],
    first_step: F,
) -> Vec<Hypothesis>
where
    M: LanguageModel,
    F: FnOnce(&mut Distribution) -> bool,
{
    let mut first_step = Some(first_step);
    let mut live = vec![Candidate {
        tokens: Vec::new(),
        sum_logprob: 0.0,
        state: init.clone(),
    }];
    let mut done: Vec<Hypothesis> = Vec::new();

    while !live.is_empty() {
        let states: Vec<&M::State> = live.iter().map(|c| &c.state).collect();
        let outputs = model.output_batch(&states);

        let mut pool: Vec<(usize, TokenId, f64, Vec<TokenId>)> = Vec::new();
        for (ci, (cand, mut dist)) in live.iter().zip(outputs).enumerate() {
            if cand.tokens.is_empty() {
                if let Some(f) = first_step.take() {
                    if !f(&mut dist) {
                        return Vec::new();
                    }
                }
            }
            let d = dist.as_mut_slice();
            for (l, &b) in d.iter_mut().zip(blocked) {
                if b {
                    *l = f64::NEG_INFINITY;
                }
            }
            for (t, lp) in dist.top_k(cfg.expansion) {
                let mut tokens = cand.tokens.clone();
                tokens.push(t);
                pool.push((ci, t, cand.sum_logprob + lp, tokens));
            }
        }
        pool.sort_by(|a, b| {
            let n = a.3.len() as f64;
            rank(a.2 / n, &a.3, b.2 / n, &b.3)
        });
        pool.truncate(cfg.beam_size);

        let mut advance = Vec::new();
        let mut next_meta = Vec::new();
        for (ci, t, sum, tokens) in pool {
            if cfg.is_end(t) || tokens.len() >= cfg.max_len {
                done.push(Hypothesis {
                    tokens,
                    sum_logprob: sum,
                });
            } else {
                advance.push((&live[ci].state, t));
                next_meta.push((tokens, sum));
            }
        }
        let states = model.advance_batch(&advance);
        live = next_meta
            .into_iter()
            .zip(states)
            .map(|((tokens, sum_logprob), state)| Candidate {
                tokens,
                sum_logprob,
                state,
            })
            .collect();
    }
    done.sort_by(|a, b| rank(a.confidence(), &a.tokens, b.confidence(), &b.tokens));
    done
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    /// Detokenized continuation, starting with the completed partial word
    /// when there is one.
    pub text: String,
    pub tokens: Vec<TokenId>,
    pub confidence: f64,
    pub triggered: bool,
}

/// Beam search over a vocabulary: constraint, masking, filtering and
/// detokenization.
#[derive(Debug, Clone)]
pub struct Decoder {
    pub cfg: BeamConfig,
    pub filter: TokenFilter,
    blocked: Vec<bool>,
}

impl Decoder {
    pub fn new(vocab: &Vocabulary, cfg: BeamConfig, filter: TokenFilter) -> Result<Self> {
        cfg.validate()?;
        let mut blocked = vec![false; vocab.len()];
        for id in filter.blocked_ids() {
            blocked[*id as usize] = true;
        }
        // structural specials are never emitted
        for sp in [Special::Pad, Special::Unk, Special::Subj, Special::Prev, Special::Body] {
            blocked[sp.id() as usize] = true;
        }
        Ok(Decoder { cfg, filter, blocked })
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.cfg.threshold = threshold;
        self
    }

    /// Up to `n_best` filtered suggestions, best first; the model must share
    /// `vocab`'s ids.
    pub fn suggest<M: LanguageModel>(
        &self,
        model: &M,
        init: &M::State,
        partial: &str,
        vocab: &Vocabulary,
    ) -> Vec<Suggestion> {
        self.search(model, init, partial, vocab).0
    }

    /// Like [`Decoder::suggest`], also returning the number of beam steps.
    pub fn search<M: LanguageModel>(
        &self,
        model: &M,
        init: &M::State,
        partial: &str,
        vocab: &Vocabulary,
    ) -> (Vec<Suggestion>, usize) {
        let hyps = beam_search(model, init, &self.cfg, &self.blocked, |d| {
            match constrain_first_step(d, partial, vocab) {
                Some(c) => {
                    *d = c;
                    true
                }
                None => false,
            }
        });
        let steps = hyps.iter().map(|h| h.tokens.len()).max().unwrap_or(0);
        let mut out = Vec::new();
        for h in hyps {
            let text = detokenize(vocab, &h.tokens);
            if text.is_empty() {
                continue;
            }
            let confidence = h.confidence();
            let s = Suggestion {
                text,
                tokens: h.tokens,
                confidence,
                triggered: confidence >= self.cfg.threshold,
            };
            if let Some(s) = filter_suggestion(s, &self.filter) {
                out.push(s);
                if out.len() == self.cfg.n_best {
                    break;
                }
            }
        }
        (out, steps)
    }
}
