//! A model whose next-token table depends on the whole history, and the
//! brute-force search the beam must agree with when it is wide enough.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use compose_core::{Distribution, LanguageModel, TokenId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random log-softmax table per history, reproducible from `seed`.
pub struct TableModel {
    pub vocab: usize,
    pub seed: u64,
}

impl LanguageModel for TableModel {
    type State = Vec<TokenId>;

    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn advance(&self, state: &Vec<TokenId>, token: TokenId) -> Vec<TokenId> {
        let mut s = state.clone();
        s.push(token);
        s
    }

    fn output(&self, state: &Vec<TokenId>) -> Distribution {
        let mut h = DefaultHasher::new();
        (self.seed, state).hash(&mut h);
        let mut rng = ChaCha8Rng::seed_from_u64(h.finish());
        let logits: Vec<f64> = (0..self.vocab).map(|_| rng.gen_range(-4.0..4.0)).collect();
        Distribution::log_softmax(&logits)
    }
}

/// Best complete sequence by mean log probability: every sequence that ends
/// in an end token, or reaches `max_len` without one. Ties go to the
/// lexicographically smaller sequence.
pub fn brute_force(model: &TableModel, max_len: usize, end: &[TokenId]) -> (Vec<TokenId>, f64) {
    let mut best: Option<(Vec<TokenId>, f64)> = None;
    let mut stack: Vec<(Vec<TokenId>, f64)> = vec![(Vec::new(), 0.0)];
    while let Some((seq, sum)) = stack.pop() {
        let dist = model.output(&seq);
        for t in 0..model.vocab as TokenId {
            let mut next = seq.clone();
            next.push(t);
            let s = sum + dist.log_prob(t);
            if end.contains(&t) || next.len() == max_len {
                let score = s / next.len() as f64;
                let better = match &best {
                    None => true,
                    Some((b, bs)) => score > *bs || (score == *bs && next < *b),
                };
                if better {
                    best = Some((next, score));
                }
            } else {
                stack.push((next, s));
            }
        }
    }
    best.unwrap()
}
