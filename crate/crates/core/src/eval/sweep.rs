use serde::{Deserialize, Serialize};

use super::{calibrate, coverage_at, exact_match, predict, Opportunity, Prediction};
use crate::decoder::{Decoder, TokenFilter};
use crate::error::Result;
use crate::lm::LanguageModel;
use crate::ngram::BackoffAutomaton;
use crate::personal::{BlendedModel, InterpolationConfig};
use crate::vocab::Vocabulary;

/// A test user: their personal automaton over `union`, and the places to
/// suggest.
pub struct SweepUser<'a> {
    pub automaton: &'a BackoffAutomaton,
    pub union: &'a Vocabulary,
    pub opportunities: &'a [Opportunity],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaRow {
    pub alpha: f64,
    pub threshold: f64,
    pub coverage: f64,
    pub exact_match: f64,
    pub triggered: usize,
}

/// For each alpha: decode every opportunity with the blended model,
/// recalibrate the threshold to `target_coverage`, then score ExactMatch.
///
/// `start` gives the global state right before the body of a context.
pub fn alpha_sweep<G, F>(
    global: &G,
    start: F,
    users: &[SweepUser<'_>],
    decoder_for: &dyn Fn(&Vocabulary) -> Result<Decoder>,
    alphas: &[f64],
    target_coverage: f64,
) -> Result<Vec<AlphaRow>>
where
    G: LanguageModel,
    F: Fn(&crate::corpus::ContextFeatures) -> G::State,
{
    let mut rows = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let cfg = InterpolationConfig::new(alpha)?;
        let mut preds: Vec<Prediction> = Vec::new();
        let mut opps: Vec<Opportunity> = Vec::new();
        for u in users {
            let model = BlendedModel::new(global, u.automaton, cfg)?;
            let decoder = decoder_for(u.union)?;
            for o in u.opportunities {
                let init = model.initial_state(start(&o.context));
                preds.push(predict(&model, &init, &decoder, u.union, o));
                opps.push(o.clone());
            }
        }
        let confs: Vec<f64> = preds.iter().map(|p| p.confidence).collect();
        let threshold = calibrate(&confs, target_coverage);
        let report = exact_match(&preds, &opps, threshold);
        rows.push(AlphaRow {
            alpha,
            threshold,
            coverage: coverage_at(&confs, threshold),
            exact_match: report.overall_exact_match,
            triggered: report.triggered,
        });
    }
    Ok(rows)
}

/// Default decoder factory for sweeps: pronoun filter, given beam settings.
pub fn sweep_decoder(
    cfg: crate::decoder::BeamConfig,
) -> impl Fn(&Vocabulary) -> Result<Decoder> {
    move |v: &Vocabulary| {
        let mut c = cfg.clone();
        c.end_tokens = crate::decoder::BeamConfig::new(v).end_tokens;
        Decoder::new(v, c, TokenFilter::new(v, []))
    }
}

/// Plot-ready rendering: one `alpha coverage em threshold` line per row.
pub fn sweep_table(rows: &[AlphaRow]) -> String {
    let mut s = String::from("alpha\tcoverage\tem\tthreshold\n");
    for r in rows {
        s.push_str(&format!(
            "{:.2}\t{:.4}\t{:.2}\t{:.4}\n",
            r.alpha, r.coverage, r.exact_match, r.threshold
        ));
    }
    s
}
