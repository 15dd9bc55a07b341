use crate::vocab::TokenId;

/// Natural-log probabilities over a fixed vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    logp: Vec<f64>,
}

impl Distribution {
    pub fn from_log_probs(logp: Vec<f64>) -> Self {
        Distribution { logp }
    }

    /// Natural-log probabilities from probabilities; zero maps to `-inf`.
    pub fn from_probs(p: &[f64]) -> Self {
        Distribution {
            logp: p.iter().map(|&x| x.ln()).collect(),
        }
    }

    pub fn uniform(n: usize) -> Self {
        Distribution {
            logp: vec![-(n as f64).ln(); n],
        }
    }

    /// Numerically stable log-softmax, summing left to right.
    pub fn log_softmax(logits: &[f64]) -> Self {
        let mut out = vec![0.0; logits.len()];
        log_softmax_into(logits, &mut out);
        Distribution { logp: out }
    }

    pub fn len(&self) -> usize {
        self.logp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logp.is_empty()
    }

    pub fn log_prob(&self, id: TokenId) -> f64 {
        self.logp.get(id as usize).copied().unwrap_or(f64::NEG_INFINITY)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.logp
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.logp
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.logp
    }

    pub fn probs(&self) -> Vec<f64> {
        self.logp.iter().map(|l| l.exp()).collect()
    }

    /// Total probability mass; 1 for a normalized distribution.
    pub fn mass(&self) -> f64 {
        self.logp.iter().map(|l| l.exp()).sum()
    }

    /// Renormalizes the finite entries in place. Returns `false` when no
    /// mass remains.
    pub fn renormalize(&mut self) -> bool {
        let max = self.logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return false;
        }
        let z: f64 = self.logp.iter().map(|l| (l - max).exp()).sum();
        let shift = max + z.ln();
        for l in &mut self.logp {
            *l -= shift;
        }
        true
    }

    /// The `k` most likely finite entries, most likely first; equal
    /// probabilities favour the lower id.
    pub fn top_k(&self, k: usize) -> Vec<(TokenId, f64)> {
        let mut idx: Vec<(TokenId, f64)> = self
            .logp
            .iter()
            .enumerate()
            .filter(|(_, l)| **l > f64::NEG_INFINITY)
            .map(|(i, &l)| (i as TokenId, l))
            .collect();
        let by_score = |a: &(TokenId, f64), b: &(TokenId, f64)| {
            b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0))
        };
        if k < idx.len() {
            idx.select_nth_unstable_by(k, by_score);
            idx.truncate(k);
        }
        idx.sort_by(by_score);
        idx
    }
}

pub(crate) fn log_softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for &x in logits {
        z += (x - max).exp();
    }
    let shift = max + z.ln();
    for (o, &x) in out.iter_mut().zip(logits) {
        *o = x - shift;
    }
}
