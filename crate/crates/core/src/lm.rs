//! The interface every next-token model exposes to decoding, evaluation and
//! serving.

use crate::dist::Distribution;
use crate::vocab::TokenId;

/// A left-to-right language model with an explicit, cloneable state.
///
/// `output` gives the next-token distribution after everything the state
/// has consumed; `advance` consumes one more token. The batch methods exist
/// so implementations can share work across rows; they must return exactly
/// what the per-row methods would.
pub trait LanguageModel {
    type State: Clone;

    fn vocab_size(&self) -> usize;

    fn advance(&self, state: &Self::State, token: TokenId) -> Self::State;

    fn output(&self, state: &Self::State) -> Distribution;

    fn advance_batch(&self, items: &[(&Self::State, TokenId)]) -> Vec<Self::State> {
        items.iter().map(|(s, t)| self.advance(s, *t)).collect()
    }

    fn output_batch(&self, states: &[&Self::State]) -> Vec<Distribution> {
        states.iter().map(|s| self.output(s)).collect()
    }

    /// Consumes a run of tokens.
    fn advance_all(&self, state: &Self::State, tokens: &[TokenId]) -> Self::State {
        let mut s = state.clone();
        for &t in tokens {
            s = self.advance(&s, t);
        }
        s
    }
}

impl<M: LanguageModel + ?Sized> LanguageModel for &M {
    type State = M::State;

    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn advance(&self, state: &Self::State, token: TokenId) -> Self::State {
        (**self).advance(state, token)
    }

    fn output(&self, state: &Self::State) -> Distribution {
        (**self).output(state)
    }

    fn advance_batch(&self, items: &[(&Self::State, TokenId)]) -> Vec<Self::State> {
        (**self).advance_batch(items)
    }

    fn output_batch(&self, states: &[&Self::State]) -> Vec<Distribution> {
        (**self).output_batch(states)
    }
}
