//! Katz backoff estimation with Good-Turing discounting.
//!
//! For a history `h` with total continuation count `C(h)` and an n-gram seen
//! `r` times:
//!
//! * `r > k`: `P*(w|h) = r / C(h)`
//! * `1 ≤ r ≤ k`: `P*(w|h) = d_r · r / C(h)` with
//!   `d_r = ((r+1)·N_{r+1}/(r·N_r) − (k+1)·N_{k+1}/N_1) / (1 − (k+1)·N_{k+1}/N_1)`
//!
//! Unseen words back off: `P(w|h) = φ(h) · P(w|h')`, where `h'` drops the
//! oldest token and `φ(h)` hands exactly the freed mass to the words `h` has
//! not seen. When an order's count-of-counts make a `d_r` undefined, push it
//! outside `(0, 1]`, or make `r · d_r` fall as `r` grows, that order uses
//! absolute discounting,
//! `P*(w|h) = (r − 0.5) / C(h)`, and the build report says so.
//!
//! At the unigram level the freed mass is spread evenly over vocabulary
//! words never seen; if every word was seen, the seen estimates are scaled
//! to sum to one. The same scaling applies to a history whose continuations
//! already cover all the lower-order mass.

use std::collections::{BTreeMap, HashMap};

use super::automaton::{BackoffAutomaton, Entry, LOG10_ZERO};
use super::count::{CountTable, START};
use crate::error::{Error, Result};
use crate::vocab::TokenId;

/// Good-Turing cutoff: counts above it are trusted as-is.
pub const DEFAULT_CUTOFF: usize = 5;

/// Discount used when Good-Turing is degenerate for an order.
pub const ABSOLUTE_DISCOUNT: f64 = 0.5;

/// Below this, leftover or lower-order mass counts as exhausted.
const MASS_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum Discount {
    /// `d[r]` for `r` in `1..=k` (index 0 unused).
    GoodTuring(Vec<f64>),
    Absolute(f64),
}

impl Discount {
    /// Discounted count for a raw count `r`.
    pub fn apply(&self, r: u64) -> f64 {
        match self {
            Discount::GoodTuring(d) => {
                let r_us = r as usize;
                if r_us < d.len() {
                    d[r_us] * r as f64
                } else {
                    r as f64
                }
            }
            Discount::Absolute(dd) => r as f64 - dd,
        }
    }

    /// Good-Turing coefficients for one order, or `None` when a coefficient
    /// needed by an observed count is undefined or outside `(0, 1]`, or when
    /// the adjusted counts `r · d_r` decrease from one observed `r` to the
    /// next.
    pub fn good_turing(count_of_counts: &[u64], cutoff: usize) -> Option<Vec<f64>> {
        let n = |r: usize| count_of_counts.get(r).copied().unwrap_or(0) as f64;
        let mut d = vec![1.0; cutoff + 1];
        if (1..=cutoff).all(|r| n(r) == 0.0) {
            return Some(d);
        }
        if n(1) == 0.0 {
            return None;
        }
        let k = cutoff as f64;
        let common = (k + 1.0) * n(cutoff + 1) / n(1);
        if 1.0 - common <= 0.0 {
            return None;
        }
        let mut last_adjusted = 0.0;
        for (r, slot) in d.iter_mut().enumerate().skip(1) {
            if n(r) == 0.0 {
                continue;
            }
            let rf = r as f64;
            let dr = ((rf + 1.0) * n(r + 1) / (rf * n(r)) - common) / (1.0 - common);
            // a count seen more often must not end up with less mass
            if !(dr > 0.0 && dr <= 1.0) || dr * rf < last_adjusted {
                return None;
            }
            last_adjusted = dr * rf;
            *slot = dr;
        }
        Some(d)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderReport {
    pub order: usize,
    pub num_grams: usize,
    pub discount: Discount,
}

impl OrderReport {
    pub fn fell_back(&self) -> bool {
        matches!(self.discount, Discount::Absolute(_))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BuildReport {
    pub orders: Vec<OrderReport>,
}

/// Builds the Katz automaton for `table` over `symbols` (the vocabulary, in
/// id order).
pub fn estimate_katz(
    table: &CountTable,
    symbols: &[String],
    cutoff: usize,
) -> Result<(BackoffAutomaton, BuildReport)> {
    if table.is_empty() {
        return Err(Error::invalid("cannot estimate a model from an empty count table"));
    }
    let n = table.order();
    let vocab_size = symbols.len();
    for (g, _) in table.grams(1) {
        if g[0] as usize >= vocab_size {
            return Err(Error::invalid(format!(
                "token id {} outside the {vocab_size}-symbol vocabulary",
                g[0]
            )));
        }
    }

    let mut report = BuildReport::default();
    let discounts: Vec<Discount> = (1..=n)
        .map(|k| {
            let noc = table.count_of_counts(k, cutoff + 1);
            let discount = match Discount::good_turing(&noc, cutoff) {
                Some(d) => Discount::GoodTuring(d),
                None => Discount::Absolute(ABSOLUTE_DISCOUNT),
            };
            report.orders.push(OrderReport {
                order: k,
                num_grams: table.num_grams(k),
                discount: discount.clone(),
            });
            discount
        })
        .collect();

    // Unigrams
    let total: u64 = table.grams(1).map(|(_, c)| c).sum();
    let mut uni = vec![0.0f64; vocab_size];
    let mut seen = vec![false; vocab_size];
    for (g, c) in table.grams(1) {
        uni[g[0] as usize] = discounts[0].apply(c) / total as f64;
        seen[g[0] as usize] = true;
    }
    let seen_mass: f64 = uni.iter().sum();
    let unseen = seen.iter().filter(|s| !**s).count();
    let left = 1.0 - seen_mass;
    if unseen > 0 {
        let share = if left > 0.0 { left / unseen as f64 } else { 0.0 };
        for (p, s) in uni.iter_mut().zip(&seen) {
            if !s {
                *p = share;
            }
        }
    } else {
        for p in &mut uni {
            *p /= seen_mass;
        }
    }
    let mut entries: Vec<Entry> = uni
        .iter()
        .enumerate()
        .map(|(w, &p)| Entry {
            gram: vec![w as TokenId],
            log10: log10_or_zero(p),
            backoff: None,
        })
        .collect();

    let mut aut = BackoffAutomaton::from_entries(n, symbols.to_vec(), entries.clone())?;

    // Higher orders: the arcs out of histories of length j come from the
    // (j+1)-grams; φ(h) needs the finished model for shorter histories.
    for j in 1..n {
        let mut by_history: BTreeMap<Vec<TokenId>, Vec<(TokenId, u64)>> = BTreeMap::new();
        for (g, c) in table.grams(j + 1) {
            by_history
                .entry(g[..j].to_vec())
                .or_default()
                .push((g[j], c));
        }
        let mut backoffs: HashMap<Vec<TokenId>, f64> = HashMap::new();
        for (h, mut conts) in by_history {
            conts.sort_unstable();
            let ctx: u64 = conts.iter().map(|(_, c)| c).sum();
            let mut probs: Vec<(TokenId, f64)> = conts
                .iter()
                .map(|&(w, c)| (w, discounts[j].apply(c) / ctx as f64))
                .collect();
            let seen_mass: f64 = probs.iter().map(|(_, p)| p).sum();
            let lower_mass: f64 = probs
                .iter()
                .map(|&(w, _)| 10f64.powf(aut.score(&h[1..], w)))
                .sum();
            let num = 1.0 - seen_mass;
            let den = 1.0 - lower_mass;
            let phi = if den <= MASS_EPS {
                for (_, p) in &mut probs {
                    *p /= seen_mass;
                }
                0.0
            } else {
                (num / den).max(0.0)
            };
            for (w, p) in probs {
                let mut gram = h.clone();
                gram.push(w);
                entries.push(Entry {
                    gram,
                    log10: log10_or_zero(p),
                    backoff: None,
                });
            }
            backoffs.insert(h, log10_or_zero(phi));
        }
        // attach φ to the history entries of this level, adding history-only
        // entries (e.g. start padding) where no arc leads to them
        for e in entries.iter_mut().filter(|e| e.gram.len() == j) {
            if let Some(bo) = backoffs.remove(&e.gram) {
                e.backoff = Some(bo);
            }
        }
        let mut rest: Vec<_> = backoffs.into_iter().collect();
        rest.sort_by(|a, b| a.0.cmp(&b.0));
        for (h, bo) in rest {
            debug_assert!(h.contains(&START));
            entries.push(Entry {
                gram: h,
                log10: LOG10_ZERO,
                backoff: Some(bo),
            });
        }
        aut = BackoffAutomaton::from_entries(n, symbols.to_vec(), entries.clone())?;
    }
    Ok((aut, report))
}

fn log10_or_zero(p: f64) -> f64 {
    if p > 0.0 {
        p.log10().max(LOG10_ZERO)
    } else {
        LOG10_ZERO
    }
}
