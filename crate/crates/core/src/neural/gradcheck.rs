//! Analytic gradients against central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::train::{loss, loss_and_grad};
use super::{NeuralConfig, NeuralParams};
use crate::corpus::{locale_table, ContextFeatures, ExampleMode, TrainingExample};
use crate::error::Result;
use crate::vocab::{Special, TokenId, NUM_SPECIALS};

pub const GROUP_NAMES: [&str; 9] = [
    "embed", "time", "dow", "month", "locale", "lstm_w", "lstm_b", "out_w", "out_b",
];

const STEP: f64 = 1e-3;
const SAMPLES_PER_GROUP: usize = 25;
/// Denominator floor for the relative error, so that parameters whose
/// gradient is exactly zero compare by absolute error.
const REL_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub groups: Vec<GroupCheck>,
}

impl GradCheckReport {
    pub fn checked(&self) -> usize {
        self.groups.iter().map(|g| g.checked).sum()
    }
}

/// The small configuration the check runs on.
pub fn grad_check_config() -> NeuralConfig {
    NeuralConfig {
        embed_dim: 8,
        hidden_dim: 12,
        time_dim: 3,
        dow_dim: 3,
        month_dim: 3,
        locale_dim: 3,
        ..NeuralConfig::new(20, ExampleMode::LmA)
    }
}

fn random_examples(rng: &mut ChaCha8Rng, cfg: &NeuralConfig, n: usize) -> Vec<TrainingExample> {
    let regular = |rng: &mut ChaCha8Rng| rng.gen_range(NUM_SPECIALS as TokenId..cfg.vocab_size as TokenId);
    (0..n)
        .map(|_| {
            let subject: Vec<TokenId> = (0..rng.gen_range(1..4)).map(|_| regular(rng)).collect();
            let prev: Vec<TokenId> = (0..rng.gen_range(0..3)).map(|_| regular(rng)).collect();
            let mut target_ids: Vec<TokenId> = (0..rng.gen_range(2..6)).map(|_| regular(rng)).collect();
            target_ids.push(Special::Eos.id());
            let locales = locale_table();
            let locale = locales[rng.gen_range(0..locales.len())];
            let ts = rng.gen_range(0..2_000_000_000i64);
            TrainingExample {
                context: ContextFeatures::new(subject, prev, ts, None, locale),
                target_ids,
                packed_ids: None,
            }
        })
        .collect()
}

/// Compares analytic and numeric gradients on sampled parameters of every
/// group and returns the largest relative error
/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check(seed: u64) -> Result<GradCheckReport> {
    let cfg = grad_check_config();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = {
        let n = NeuralParams::zeros(cfg.clone())?.as_flat().len();
        (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect()
    };
    let mut params = NeuralParams::from_flat(cfg.clone(), data)?;
    let examples = random_examples(&mut rng, &cfg, 4);
    let refs: Vec<&TrainingExample> = examples.iter().collect();
    let (_, analytic) = loss_and_grad(&params, &refs);

    let mut groups = Vec::new();
    let mut worst = 0.0f64;
    for name in GROUP_NAMES {
        let range = params.layout().get(name).range();
        if range.is_empty() {
            continue;
        }
        let mut max_rel = 0.0f64;
        for _ in 0..SAMPLES_PER_GROUP {
            let i = rng.gen_range(range.clone());
            let orig = params.as_flat()[i];
            params.as_flat_mut()[i] = orig + STEP;
            let up = loss(&params, &refs);
            params.as_flat_mut()[i] = orig - STEP;
            let down = loss(&params, &refs);
            params.as_flat_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let a = analytic[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            max_rel = max_rel.max(rel);
        }
        worst = worst.max(max_rel);
        groups.push(GroupCheck {
            name: name.to_string(),
            checked: SAMPLES_PER_GROUP,
            max_rel_error: max_rel,
        });
    }
    Ok(GradCheckReport {
        max_rel_error: worst,
        groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_error_on_every_group() {
        let r = grad_check(1).unwrap();
        for g in &r.groups {
            eprintln!("{} {:e}", g.name, g.max_rel_error);
        }
        assert_eq!(r.groups.len(), GROUP_NAMES.len());
        assert!(r.checked() >= 200);
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn zero_loss_point_has_near_zero_gradient() {
        let cfg = NeuralConfig {
            label_smoothing: 0.0,
            ..grad_check_config()
        };
        let mut p = NeuralParams::zeros(cfg).unwrap();
        p.tensor_mut("out_b")[Special::Eos.id() as usize] = 60.0;
        let ex = TrainingExample {
            context: ContextFeatures::new(vec![12], vec![], 0, None, "en-US"),
            target_ids: vec![Special::Eos.id()],
            packed_ids: None,
        };
        let (l, g) = loss_and_grad(&p, &[&ex]);
        assert!(l < 1e-20);
        assert!(g.iter().all(|x| x.abs() < 1e-20));
    }

    #[test]
    fn absent_token_embedding_has_exactly_zero_gradient() {
        let cfg = grad_check_config();
        let p = NeuralParams::init(cfg.clone(), 3).unwrap();
        let ex = TrainingExample {
            context: ContextFeatures::new(vec![12], vec![13], 0, None, "en-US"),
            target_ids: vec![14, 15, Special::Eos.id()],
            packed_ids: None,
        };
        let (_, g) = loss_and_grad(&p, &[&ex]);
        let embed = p.layout().get("embed").range();
        let e = cfg.embed_dim;
        let row = |t: usize| &g[embed.clone()][t * e..(t + 1) * e];
        assert!(row(19).iter().all(|&x| x == 0.0));
        assert!(row(12).iter().any(|&x| x != 0.0));
    }
}
