//! Plain LSTM arithmetic over the named tensors, one scalar at a time.

use compose_core::corpus::{ContextFeatures, ExampleMode, NUM_LOCALES};
use compose_core::neural::NeuralParams;
use compose_core::TokenId;

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn row(t: &[f64], cols: usize, i: usize) -> Vec<f64> {
    t[i * cols..(i + 1) * cols].to_vec()
}

fn mean(p: &NeuralParams, ids: &[TokenId]) -> Vec<f64> {
    let e = p.config().embed_dim;
    let mut v = vec![0.0; e];
    for &t in ids {
        let r = row(p.tensor("embed"), e, t as usize);
        for j in 0..e {
            v[j] += r[j] / ids.len() as f64;
        }
    }
    v
}

/// Context part of the input vector, constant across steps.
pub fn context_input(p: &NeuralParams, f: &ContextFeatures) -> Vec<f64> {
    let c = p.config();
    if c.mode == ExampleMode::LmB {
        return Vec::new();
    }
    let mut v = mean(p, &f.subject_ids);
    v.extend(mean(p, &f.prev_body_ids));
    v.extend(row(p.tensor("time"), c.time_dim, f.time_bucket.index()));
    v.extend(row(p.tensor("dow"), c.dow_dim, f.day_of_week as usize));
    v.extend(row(p.tensor("month"), c.month_dim, f.month as usize - 1));
    v.extend(row(p.tensor("locale"), c.locale_dim, f.locale_id as usize % NUM_LOCALES));
    v
}

/// Runs `tokens` from the zero state; returns the final `(c, m)` and the
/// log-softmax output after the last token.
pub fn run(p: &NeuralParams, ctx: &[f64], tokens: &[TokenId]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let cfg = p.config();
    let (h, e, v) = (cfg.hidden_dim, cfg.embed_dim, cfg.vocab_size);
    let w = p.tensor("lstm_w");
    let b = p.tensor("lstm_b");
    let mut c = vec![0.0; h];
    let mut m = vec![0.0; h];
    for &t in tokens {
        let mut x = row(p.tensor("embed"), e, t as usize);
        x.extend_from_slice(ctx);
        x.extend_from_slice(&m);
        let gate = |g: usize, j: usize| {
            let col = g * h + j;
            let mut z = b[col];
            for (k, xk) in x.iter().enumerate() {
                z += xk * w[k * 4 * h + col];
            }
            z
        };
        for j in 0..h {
            let (i, f, g, o) = (sig(gate(0, j)), sig(gate(1, j)), gate(2, j).tanh(), sig(gate(3, j)));
            c[j] = f * c[j] + i * g;
            m[j] = o * c[j].tanh();
        }
    }
    let ow = p.tensor("out_w");
    let ob = p.tensor("out_b");
    let logits: Vec<f64> = (0..v)
        .map(|k| ob[k] + (0..h).map(|j| m[j] * ow[j * v + k]).sum::<f64>())
        .collect();
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = mx + logits.iter().map(|l| (l - mx).exp()).sum::<f64>().ln();
    (c, m, logits.iter().map(|l| l - lse).collect())
}
