//! Katz-backoff n-gram models served as backoff automata.

mod arpa;
mod automaton;
mod count;
mod katz;

pub use arpa::{parse_arpa, serialize_arpa, ArpaError};
pub use automaton::{BackoffAutomaton, Entry, StateId, LOG10_ZERO, ROOT, START_SYMBOL};
pub use count::{CountTable, START};
pub use katz::{estimate_katz, BuildReport, Discount, OrderReport, ABSOLUTE_DISCOUNT, DEFAULT_CUTOFF};

use crate::dist::Distribution;
use crate::lm::LanguageModel;
use crate::vocab::TokenId;

/// Default personal-model order.
pub const DEFAULT_ORDER: usize = 3;

impl LanguageModel for BackoffAutomaton {
    type State = StateId;

    fn vocab_size(&self) -> usize {
        BackoffAutomaton::vocab_size(self)
    }

    fn advance(&self, state: &StateId, token: TokenId) -> StateId {
        BackoffAutomaton::advance(self, *state, token)
    }

    fn output(&self, state: &StateId) -> Distribution {
        self.full_distribution(*state)
    }
}
