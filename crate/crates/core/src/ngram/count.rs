use std::collections::HashMap;

use crate::vocab::{Special, TokenId};

/// Start-of-sentence padding symbol. It only ever appears in histories.
pub const START: TokenId = TokenId::MAX;

/// Raw k-gram counts for every k up to the model order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountTable {
    order: usize,
    // by_order[k - 1] holds the k-grams
    by_order: Vec<HashMap<Vec<TokenId>, u64>>,
}

impl CountTable {
    pub fn new(order: usize) -> Self {
        assert!(order >= 1, "n-gram order must be at least 1");
        CountTable {
            order,
            by_order: vec![HashMap::new(); order],
        }
    }

    /// Counts every k-gram (k ≤ order) ending at a real token or the
    /// sentence-final `<EOS>`. Each sentence is left-padded with `order - 1`
    /// [`START`] symbols; grams never span two sentences. Empty sentences are
    /// ignored.
    pub fn from_sentences<'a, I>(sentences: I, order: usize) -> Self
    where
        I: IntoIterator<Item = &'a [TokenId]>,
    {
        let mut table = CountTable::new(order);
        for s in sentences {
            table.add_sentence(s);
        }
        table
    }

    pub fn add_sentence(&mut self, sentence: &[TokenId]) {
        if sentence.is_empty() {
            return;
        }
        let n = self.order;
        let mut padded = vec![START; n - 1];
        padded.extend_from_slice(sentence);
        padded.push(Special::Eos.id());
        for end in n - 1..padded.len() {
            for k in 1..=n {
                let gram = &padded[end + 1 - k..=end];
                *self.by_order[k - 1].entry(gram.to_vec()).or_insert(0) += 1;
            }
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn is_empty(&self) -> bool {
        self.by_order[0].is_empty()
    }

    pub fn count(&self, gram: &[TokenId]) -> u64 {
        if gram.is_empty() || gram.len() > self.order {
            return 0;
        }
        self.by_order[gram.len() - 1].get(gram).copied().unwrap_or(0)
    }

    /// All k-grams with their counts, unordered.
    pub fn grams(&self, k: usize) -> impl Iterator<Item = (&[TokenId], u64)> {
        self.by_order[k - 1].iter().map(|(g, c)| (g.as_slice(), *c))
    }

    pub fn num_grams(&self, k: usize) -> usize {
        self.by_order[k - 1].len()
    }

    /// Count-of-counts N_r for order k, indexed by r (index 0 unused).
    pub fn count_of_counts(&self, k: usize, max_r: usize) -> Vec<u64> {
        let mut n = vec![0; max_r + 1];
        for &c in self.by_order[k - 1].values() {
            if (c as usize) <= max_r {
                n[c as usize] += 1;
            }
        }
        n
    }
}
