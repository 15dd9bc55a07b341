//! Katz backoff evaluated straight from the recursive definition over raw
//! counts, with no automaton and no precomputed tables beyond the counts.

use std::collections::HashMap;

pub const PAD: u32 = u32::MAX;
const K: usize = 5;
const ABS: f64 = 0.5;

pub struct KatzOracle {
    n: usize,
    vocab: usize,
    eos: u32,
    counts: HashMap<Vec<u32>, u64>,
    discounts: Vec<Option<Vec<f64>>>,
}

// indices follow the count-of-counts subscripts
#[allow(clippy::needless_range_loop)]
fn gt(noc: &HashMap<u64, u64>) -> Option<Vec<f64>> {
    let n = |r: usize| *noc.get(&(r as u64)).unwrap_or(&0) as f64;
    let mut d = vec![1.0; K + 1];
    if (1..=K).all(|r| n(r) == 0.0) {
        return Some(d);
    }
    let c = (K as f64 + 1.0) * n(K + 1) / n(1);
    // the discount needs N_{k+1} small against N_1
    if !(c < 1.0) {
        return None;
    }
    let mut prev = 0.0;
    for r in 1..=K {
        if n(r) == 0.0 {
            continue;
        }
        let x = ((r as f64 + 1.0) * n(r + 1) / (r as f64 * n(r)) - c) / (1.0 - c);
        if !(x > 0.0 && x <= 1.0) || !x.is_finite() {
            return None;
        }
        // adjusted counts must not fall as r grows
        if x * (r as f64) < prev {
            return None;
        }
        prev = x * r as f64;
        d[r] = x;
    }
    Some(d)
}

impl KatzOracle {
    pub fn new(sentences: &[Vec<u32>], n: usize, vocab: usize, eos: u32) -> Self {
        let mut counts = HashMap::new();
        for s in sentences.iter().filter(|s| !s.is_empty()) {
            let mut p = vec![PAD; n - 1];
            p.extend(s);
            p.push(eos);
            for end in n - 1..p.len() {
                for k in 1..=n {
                    *counts.entry(p[end + 1 - k..=end].to_vec()).or_insert(0) += 1;
                }
            }
        }
        let discounts = (1..=n)
            .map(|k| {
                let mut noc = HashMap::new();
                for (g, &c) in &counts {
                    if g.len() == k {
                        *noc.entry(c).or_insert(0) += 1;
                    }
                }
                gt(&noc)
            })
            .collect();
        KatzOracle {
            n,
            vocab,
            eos,
            counts,
            discounts,
        }
    }

    pub fn eos(&self) -> u32 {
        self.eos
    }

    /// Whether Good-Turing held for order `k`.
    pub fn good_turing_order(&self, k: usize) -> bool {
        self.discounts[k - 1].is_some()
    }

    fn c(&self, g: &[u32]) -> u64 {
        *self.counts.get(g).unwrap_or(&0)
    }

    fn discounted(&self, k: usize, r: u64) -> f64 {
        match &self.discounts[k - 1] {
            Some(d) if (r as usize) <= K => d[r as usize] * r as f64,
            Some(_) => r as f64,
            None => r as f64 - ABS,
        }
    }

    fn followers(&self, h: &[u32]) -> Vec<(u32, u64)> {
        (0..self.vocab as u32)
            .map(|w| {
                let mut g = h.to_vec();
                g.push(w);
                (w, self.c(&g))
            })
            .filter(|&(_, c)| c > 0)
            .collect()
    }

    /// `P(w | h)` with `h` cut to the last `n - 1` tokens.
    pub fn prob(&self, h: &[u32], w: u32) -> f64 {
        let h = &h[h.len().saturating_sub(self.n - 1)..];
        if h.is_empty() {
            return self.unigram(w);
        }
        let k = h.len() + 1;
        let seen = self.followers(h);
        let total: u64 = seen.iter().map(|s| s.1).sum();
        if total == 0 {
            return self.prob(&h[1..], w);
        }
        let star = |c: u64| self.discounted(k, c) / total as f64;
        let seen_mass: f64 = seen.iter().map(|&(_, c)| star(c)).sum();
        let lower_mass: f64 = seen.iter().map(|&(v, _)| self.prob(&h[1..], v)).sum();
        let exhausted = 1.0 - lower_mass <= 1e-12;
        match seen.iter().find(|s| s.0 == w) {
            Some(&(_, c)) if exhausted => star(c) / seen_mass,
            Some(&(_, c)) => star(c),
            None if exhausted => 0.0,
            None => ((1.0 - seen_mass) / (1.0 - lower_mass)).max(0.0) * self.prob(&h[1..], w),
        }
    }

    fn unigram(&self, w: u32) -> f64 {
        let seen: Vec<(u32, u64)> = (0..self.vocab as u32)
            .map(|v| (v, self.c(&[v])))
            .filter(|s| s.1 > 0)
            .collect();
        let total: u64 = seen.iter().map(|s| s.1).sum();
        let mass: f64 = seen.iter().map(|&(_, c)| self.discounted(1, c) / total as f64).sum();
        let unseen = self.vocab - seen.len();
        match seen.iter().find(|s| s.0 == w) {
            Some(&(_, c)) if unseen == 0 => self.discounted(1, c) / total as f64 / mass,
            Some(&(_, c)) => self.discounted(1, c) / total as f64,
            None => ((1.0 - mass) / unseen as f64).max(0.0),
        }
    }

    /// Every history the model has a state for, plus padding-only ones.
    pub fn histories(&self) -> Vec<Vec<u32>> {
        let mut hs: Vec<Vec<u32>> = self
            .counts
            .keys()
            .filter(|g| g.len() < self.n)
            .cloned()
            .collect();
        hs.push(Vec::new());
        hs.sort();
        hs.dedup();
        hs
    }
}
