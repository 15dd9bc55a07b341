use std::collections::{BTreeSet, HashMap};
use std::f64::consts::LN_10;

use super::count::START;
use crate::dist::Distribution;
use crate::error::{Error, Result};
use crate::vocab::TokenId;

/// log10 weight standing in for probability zero.
pub const LOG10_ZERO: f64 = -99.0;

pub const START_SYMBOL: &str = "<s>";

pub type StateId = u32;

/// Product of two log10 weights; [`LOG10_ZERO`] is absorbing.
fn log10_mul(a: f64, b: f64) -> f64 {
    if a <= LOG10_ZERO || b <= LOG10_ZERO {
        LOG10_ZERO
    } else {
        (a + b).max(LOG10_ZERO)
    }
}

pub const ROOT: StateId = 0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Arc {
    pub token: TokenId,
    pub log10: f64,
    pub next: StateId,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct State {
    pub history: Vec<TokenId>,
    /// Sorted by token.
    pub arcs: Vec<Arc>,
    /// log10 backoff weight and the state of the shortened history. Only the
    /// root has none.
    pub backoff: Option<(f64, StateId)>,
}

/// One n-gram line: a token sequence, its log10 probability and an optional
/// log10 backoff weight. Grams ending in [`START`] are history-only.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub gram: Vec<TokenId>,
    pub log10: f64,
    pub backoff: Option<f64>,
}

/// Backoff weighted automaton: one state per history with explicit arcs for
/// observed continuations and a single failure arc to the next-shorter
/// history.
#[derive(Debug, Clone, PartialEq)]
pub struct BackoffAutomaton {
    order: usize,
    symbols: Vec<String>,
    states: Vec<State>,
    index: HashMap<Vec<TokenId>, StateId>,
}

impl BackoffAutomaton {
    /// Assembles an automaton from n-gram entries.
    ///
    /// States are the root plus every history that carries a backoff weight
    /// or has outgoing arcs (the latter default to weight 0). The root must
    /// have an arc for every symbol.
    pub fn from_entries(order: usize, symbols: Vec<String>, entries: Vec<Entry>) -> Result<Self> {
        if order == 0 {
            return Err(Error::invalid("n-gram order must be at least 1"));
        }
        let vocab_size = symbols.len() as TokenId;
        let mut backoffs: HashMap<Vec<TokenId>, f64> = HashMap::new();
        let mut histories: BTreeSet<(usize, Vec<TokenId>)> = BTreeSet::new();
        histories.insert((0, Vec::new()));
        for e in &entries {
            if e.gram.is_empty() || e.gram.len() > order {
                return Err(Error::invalid(format!(
                    "entry of length {} in an order-{order} model",
                    e.gram.len()
                )));
            }
            if e.gram.iter().any(|&t| t != START && t >= vocab_size) {
                return Err(Error::invalid("entry references an unknown symbol"));
            }
            if let Some(bo) = e.backoff {
                if e.gram.len() == order {
                    return Err(Error::invalid("highest-order entries cannot carry a backoff weight"));
                }
                backoffs.insert(e.gram.clone(), bo);
                histories.insert((e.gram.len(), e.gram.clone()));
            }
            if *e.gram.last().unwrap() != START && e.gram.len() > 1 {
                let h = e.gram[..e.gram.len() - 1].to_vec();
                histories.insert((h.len(), h));
            }
        }

        let mut states: Vec<State> = Vec::with_capacity(histories.len());
        let mut index = HashMap::with_capacity(histories.len());
        for (_, h) in histories {
            index.insert(h.clone(), states.len() as StateId);
            states.push(State {
                history: h,
                arcs: Vec::new(),
                backoff: None,
            });
        }

        let mut aut = BackoffAutomaton {
            order,
            symbols,
            states,
            index,
        };
        for id in 1..aut.states.len() {
            let h = aut.states[id].history.clone();
            let weight = backoffs.get(&h).copied().unwrap_or(0.0);
            let target = aut.longest_state(&h[1..]);
            aut.states[id].backoff = Some((weight, target));
        }
        for e in entries {
            let (&token, h) = e.gram.split_last().unwrap();
            if token == START {
                continue;
            }
            let sid = aut.index[h];
            aut.states[sid as usize].arcs.push(Arc {
                token,
                log10: e.log10,
                next: ROOT,
            });
        }
        for sid in 0..aut.states.len() {
            let mut arcs = std::mem::take(&mut aut.states[sid].arcs);
            arcs.sort_by_key(|a| a.token);
            if arcs.windows(2).any(|w| w[0].token == w[1].token) {
                return Err(Error::invalid("duplicate n-gram entry"));
            }
            let mut buf = aut.states[sid].history.clone();
            for arc in &mut arcs {
                buf.push(arc.token);
                arc.next = aut.longest_state(&buf);
                buf.pop();
            }
            aut.states[sid].arcs = arcs;
        }
        if aut.states[ROOT as usize].arcs.len() != aut.symbols.len() {
            return Err(Error::invalid("every symbol needs a unigram entry"));
        }
        Ok(aut)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of predictable symbols; ids run `0..vocab_size()`.
    pub fn vocab_size(&self) -> usize {
        self.symbols.len()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn symbol(&self, id: TokenId) -> &str {
        if id == START {
            START_SYMBOL
        } else {
            &self.symbols[id as usize]
        }
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn history(&self, state: StateId) -> &[TokenId] {
        &self.states[state as usize].history
    }

    /// log10 weight and target of a state's backoff arc.
    pub fn backoff(&self, state: StateId) -> Option<(f64, StateId)> {
        self.states[state as usize].backoff
    }

    pub fn num_arcs(&self, state: StateId) -> usize {
        self.states[state as usize].arcs.len()
    }

    /// State of the longest suffix of `history` (capped at order − 1 tokens)
    /// that the model knows.
    pub fn longest_state(&self, history: &[TokenId]) -> StateId {
        let cap = history.len().min(self.order - 1);
        let tail = &history[history.len() - cap..];
        for skip in 0..=tail.len() {
            if let Some(&id) = self.index.get(&tail[skip..]) {
                return id;
            }
        }
        ROOT
    }

    /// State at the beginning of a sentence.
    pub fn initial_state(&self) -> StateId {
        self.longest_state(&vec![START; self.order - 1])
    }

    fn arc(&self, state: StateId, token: TokenId) -> Option<&Arc> {
        let arcs = &self.states[state as usize].arcs;
        arcs.binary_search_by_key(&token, |a| a.token)
            .ok()
            .map(|i| &arcs[i])
    }

    /// log10 P(token | state), following backoff arcs as needed.
    pub fn score_from(&self, state: StateId, token: TokenId) -> f64 {
        if token as usize >= self.symbols.len() {
            return f64::NEG_INFINITY;
        }
        let mut acc = 0.0;
        let mut s = state;
        loop {
            if let Some(arc) = self.arc(s, token) {
                return log10_mul(acc, arc.log10);
            }
            match self.states[s as usize].backoff {
                Some((bo, next)) => {
                    acc = log10_mul(acc, bo);
                    s = next;
                }
                None => return f64::NEG_INFINITY,
            }
        }
    }

    /// log10 P(token | history).
    pub fn score(&self, history: &[TokenId], token: TokenId) -> f64 {
        self.score_from(self.longest_state(history), token)
    }

    /// State reached after reading `token` from `state`.
    pub fn advance(&self, state: StateId, token: TokenId) -> StateId {
        let mut s = state;
        loop {
            if let Some(arc) = self.arc(s, token) {
                return arc.next;
            }
            match self.states[s as usize].backoff {
                Some((_, next)) => s = next,
                None => return ROOT,
            }
        }
    }

    /// log10 probabilities of every symbol from `state`, bit-identical to
    /// calling [`score_from`](Self::score_from) per symbol.
    pub fn full_distribution_log10_from(&self, state: StateId) -> Vec<f64> {
        let mut chain = Vec::new();
        let mut acc = 0.0;
        let mut s = state;
        loop {
            chain.push((s, acc));
            match self.states[s as usize].backoff {
                Some((bo, next)) => {
                    acc = log10_mul(acc, bo);
                    s = next;
                }
                None => break,
            }
        }
        let mut out = vec![f64::NEG_INFINITY; self.symbols.len()];
        for &(s, acc) in chain.iter().rev() {
            for arc in &self.states[s as usize].arcs {
                out[arc.token as usize] = log10_mul(acc, arc.log10);
            }
        }
        out
    }

    pub fn full_distribution_log10(&self, history: &[TokenId]) -> Vec<f64> {
        self.full_distribution_log10_from(self.longest_state(history))
    }

    /// Natural-log distribution from `state`.
    pub fn full_distribution(&self, state: StateId) -> Distribution {
        Distribution::from_log_probs(
            self.full_distribution_log10_from(state)
                .into_iter()
                .map(|l| l * LN_10)
                .collect(),
        )
    }

    /// All entries in canonical order: by length, then by token ids.
    /// History-only states without an arc of their own appear as
    /// [`LOG10_ZERO`] entries so their backoff weights survive.
    pub fn entries(&self) -> Vec<Entry> {
        let mut out: HashMap<Vec<TokenId>, Entry> = HashMap::new();
        for st in &self.states {
            for arc in &st.arcs {
                let mut gram = st.history.clone();
                gram.push(arc.token);
                out.insert(
                    gram.clone(),
                    Entry {
                        gram,
                        log10: arc.log10,
                        backoff: None,
                    },
                );
            }
        }
        for st in self.states.iter().skip(1) {
            let bo = st.backoff.map(|(w, _)| w);
            out.entry(st.history.clone())
                .and_modify(|e| e.backoff = bo)
                .or_insert_with(|| Entry {
                    gram: st.history.clone(),
                    log10: LOG10_ZERO,
                    backoff: bo,
                });
        }
        let mut v: Vec<Entry> = out.into_values().collect();
        v.sort_by(|a, b| (a.gram.len(), &a.gram).cmp(&(b.gram.len(), &b.gram)));
        v
    }
}
