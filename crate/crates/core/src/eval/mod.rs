//! Log perplexity, ExactMatch@N, threshold calibration, the alpha sweep and
//! latency reports.

mod calibrate;
mod latency;
mod sweep;

pub use calibrate::{calibrate, coverage_at};
pub use latency::{latency_report, percentile, LatencyReport, LatencyRow, LatencySample, LENGTH_BUCKETS};
pub use sweep::{alpha_sweep, sweep_decoder, sweep_table, AlphaRow, SweepUser};

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{encode, tokenize, CleanMessage, ContextFeatures};
use crate::decoder::Decoder;
use crate::error::{Error, Result};
use crate::lm::LanguageModel;
use crate::vocab::{TokenId, Vocabulary};

/// Longest suggestion, in words, that ExactMatch scores.
pub const MAX_EM_LEN: usize = 15;

/// Mean negative natural-log likelihood per token over `(state, tokens)`
/// pairs, each state positioned right before its tokens.
pub fn log_perplexity<M: LanguageModel>(model: &M, items: &[(M::State, Vec<TokenId>)]) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for (state, tokens) in items {
        let mut s = state.clone();
        for &t in tokens {
            total -= model.output(&s).log_prob(t);
            n += 1;
            s = model.advance(&s, t);
        }
    }
    if n == 0 {
        return Err(Error::invalid("no tokens to score"));
    }
    Ok(total / n as f64)
}

/// One place where a suggestion could be shown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Opportunity {
    pub context: ContextFeatures,
    /// Complete words typed so far.
    pub prefix: Vec<String>,
    /// Start of the word being typed, possibly empty.
    pub partial: String,
    /// The words that actually follow, starting with the full partial word.
    pub truth: Vec<String>,
}

impl Opportunity {
    pub fn prefix_ids(&self, vocab: &Vocabulary) -> Vec<TokenId> {
        encode(vocab, self.prefix.iter().map(String::as_str))
    }
}

/// Trigger points of a message: every word boundary of its body plus one
/// seeded mid-word point.
pub fn opportunities(
    msg: &CleanMessage,
    context: &ContextFeatures,
    rng: &mut ChaCha8Rng,
    max_boundaries: usize,
) -> Vec<Opportunity> {
    let words: Vec<String> = msg.body_tokens().map(str::to_string).collect();
    let mut out = Vec::new();
    let make = |i: usize, partial: String| Opportunity {
        context: context.clone(),
        prefix: words[..i].to_vec(),
        partial,
        truth: words[i..].to_vec(),
    };
    for i in 0..words.len().min(max_boundaries) {
        out.push(make(i, String::new()));
    }
    let splittable: Vec<usize> = (0..words.len())
        .filter(|&i| words[i].chars().count() >= 2 && words[i].chars().all(char::is_alphanumeric))
        .collect();
    if !splittable.is_empty() {
        let i = splittable[rng.gen_range(0..splittable.len())];
        let chars: Vec<char> = words[i].chars().collect();
        let cut = rng.gen_range(1..chars.len());
        out.push(make(i, chars[..cut].iter().collect()));
    }
    out
}

/// Opportunities for a set of messages, seeded.
pub fn opportunities_for(
    msgs: &[(CleanMessage, ContextFeatures)],
    seed: u64,
    max_boundaries: usize,
) -> Vec<Opportunity> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    msgs.iter()
        .flat_map(|(m, c)| opportunities(m, c, &mut rng, max_boundaries))
        .collect()
}

/// The top suggestion at an opportunity, if any, as words.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// `-inf` when the decoder produced nothing.
    pub confidence: f64,
    pub words: Vec<String>,
}

impl Prediction {
    pub fn none() -> Self {
        Prediction {
            confidence: f64::NEG_INFINITY,
            words: Vec::new(),
        }
    }

    pub fn is_triggered(&self, threshold: f64) -> bool {
        !self.words.is_empty() && self.confidence > f64::NEG_INFINITY && self.confidence >= threshold
    }
}

/// Decodes one opportunity from `start`, the state before the body.
pub fn predict<M: LanguageModel>(
    model: &M,
    start: &M::State,
    decoder: &Decoder,
    vocab: &Vocabulary,
    opp: &Opportunity,
) -> Prediction {
    let state = model.advance_all(start, &opp.prefix_ids(vocab));
    match decoder.suggest(model, &state, &opp.partial, vocab).into_iter().next() {
        Some(s) => Prediction {
            confidence: s.confidence,
            words: tokenize(&s.text),
        },
        None => Prediction::none(),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    pub triggered: usize,
    pub matched: usize,
    /// Percentage.
    pub exact_match: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_perplexity: Option<f64>,
    pub threshold: f64,
    pub opportunities: usize,
    pub triggered: usize,
    pub coverage: f64,
    /// Percentage; triggered-count weighted mean of the per-length values.
    pub overall_exact_match: f64,
    /// Keyed by suggestion length in words.
    pub by_length: BTreeMap<usize, LengthStats>,
}

/// ExactMatch@N: a triggered suggestion of N words matches when they equal
/// the first N true words, case-sensitively. Suggestions longer than 15
/// words are not scored.
pub fn exact_match(preds: &[Prediction], opps: &[Opportunity], threshold: f64) -> EvalReport {
    let mut by_length: BTreeMap<usize, LengthStats> = BTreeMap::new();
    let mut triggered = 0;
    for (p, o) in preds.iter().zip(opps) {
        if !p.is_triggered(threshold) {
            continue;
        }
        triggered += 1;
        let n = p.words.len();
        if n > MAX_EM_LEN {
            continue;
        }
        let e = by_length.entry(n).or_default();
        e.triggered += 1;
        if o.truth.len() >= n && o.truth[..n] == p.words[..] {
            e.matched += 1;
        }
    }
    let (mut t, mut m) = (0, 0);
    for s in by_length.values_mut() {
        s.exact_match = 100.0 * s.matched as f64 / s.triggered as f64;
        t += s.triggered;
        m += s.matched;
    }
    EvalReport {
        log_perplexity: None,
        threshold,
        opportunities: preds.len(),
        triggered,
        coverage: if preds.is_empty() { 0.0 } else { triggered as f64 / preds.len() as f64 },
        overall_exact_match: if t == 0 { 0.0 } else { 100.0 * m as f64 / t as f64 },
        by_length,
    }
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        if let Some(p) = self.log_perplexity {
            let _ = writeln!(s, "log perplexity   {p:.4} nats/token");
        }
        let _ = writeln!(s, "threshold        {:.4}", self.threshold);
        let _ = writeln!(
            s,
            "coverage         {:.4} ({} of {})",
            self.coverage, self.triggered, self.opportunities
        );
        let _ = writeln!(s, "overall EM       {:.2}%", self.overall_exact_match);
        let _ = writeln!(s, "{:>4} {:>10} {:>8} {:>8}", "N", "triggered", "matched", "EM@N");
        for (n, st) in &self.by_length {
            let _ = writeln!(
                s,
                "{:>4} {:>10} {:>8} {:>7.2}%",
                n, st.triggered, st.matched, st.exact_match
            );
        }
        s
    }
}

/// How the triggering threshold of an evaluation is set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    Fixed(f64),
    /// Calibrated on the evaluated opportunities to this coverage.
    Coverage(f64),
}

/// Word boundaries per message at which evaluation decodes.
pub const DEFAULT_MAX_BOUNDARIES: usize = 15;

/// Pairs each message with its context features, fields encoded with the
/// global vocabulary.
pub fn with_contexts(msgs: &[CleanMessage], global: &Vocabulary) -> Vec<(CleanMessage, ContextFeatures)> {
    msgs.iter()
        .map(|m| {
            let field = |f: &[String]| encode(global, f.iter().map(String::as_str));
            let ctx = ContextFeatures::new(
                field(&m.subject),
                field(&m.previous_body),
                m.timestamp,
                m.utc_offset_minutes,
                &m.locale,
            );
            (m.clone(), ctx)
        })
        .collect()
}

/// Perplexity over whole bodies plus ExactMatch at seeded opportunities.
/// `start` gives the state right before the body; bodies are encoded with
/// `vocab`, which must match the model's ids.
#[allow(clippy::too_many_arguments)]
pub fn evaluate<M, F>(
    model: &M,
    start: F,
    decoder: &Decoder,
    vocab: &Vocabulary,
    msgs: &[(CleanMessage, ContextFeatures)],
    threshold: Threshold,
    seed: u64,
    max_boundaries: usize,
) -> Result<EvalReport>
where
    M: LanguageModel,
    F: Fn(&ContextFeatures) -> M::State,
{
    let items: Vec<(M::State, Vec<TokenId>)> = msgs
        .iter()
        .map(|(m, c)| {
            let mut ids = encode(vocab, m.body_tokens());
            ids.push(crate::vocab::Special::Eos.id());
            (start(c), ids)
        })
        .collect();
    let ppl = log_perplexity(model, &items)?;
    let opps = opportunities_for(msgs, seed, max_boundaries);
    let preds: Vec<Prediction> = opps
        .iter()
        .map(|o| predict(model, &start(&o.context), decoder, vocab, o))
        .collect();
    let threshold = match threshold {
        Threshold::Fixed(t) => t,
        Threshold::Coverage(c) => {
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::invalid(format!("coverage {c} is outside [0, 1]")));
            }
            let confs: Vec<f64> = preds.iter().map(|p| p.confidence).collect();
            calibrate(&confs, c)
        }
    };
    let mut report = exact_match(&preds, &opps, threshold);
    report.log_perplexity = Some(ppl);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::Distribution;

    struct Uniform(usize);

    impl LanguageModel for Uniform {
        type State = ();
        fn vocab_size(&self) -> usize {
            self.0
        }
        fn advance(&self, _: &(), _: TokenId) {}
        fn output(&self, _: &()) -> Distribution {
            Distribution::uniform(self.0)
        }
    }

    struct Certain;

    impl LanguageModel for Certain {
        type State = ();
        fn vocab_size(&self) -> usize {
            2
        }
        fn advance(&self, _: &(), _: TokenId) {}
        fn output(&self, _: &()) -> Distribution {
            Distribution::from_log_probs(vec![0.0, f64::NEG_INFINITY])
        }
    }

    #[test]
    fn perplexity_of_simple_models() {
        let p = log_perplexity(&Uniform(4), &[((), vec![0, 1, 2]), ((), vec![3])]).unwrap();
        assert!((p - 4f64.ln()).abs() < 1e-12);
        assert_eq!(log_perplexity(&Certain, &[((), vec![0, 0])]).unwrap(), 0.0);
        assert!(log_perplexity(&Certain, &[((), vec![])]).is_err());
    }

    fn opp(truth: &str) -> Opportunity {
        Opportunity {
            context: ContextFeatures::empty(),
            prefix: vec![],
            partial: String::new(),
            truth: truth.split(' ').map(String::from).collect(),
        }
    }

    fn pred(text: &str, confidence: f64) -> Prediction {
        Prediction {
            confidence,
            words: text.split(' ').map(String::from).collect(),
        }
    }

    #[test]
    fn exact_match_hits_and_misses() {
        let opps = [opp("are you free"), opp("are you free"), opp("see you")];
        let preds = [pred("are you", -0.1), pred("are we", -0.2), pred("see", -5.0)];
        let r = exact_match(&preds, &opps, -1.0);
        assert_eq!(r.triggered, 2);
        assert_eq!(r.by_length[&2].matched, 1);
        assert_eq!(r.by_length[&2].exact_match, 50.0);
        assert_eq!(r.overall_exact_match, 50.0);
        assert!((r.coverage - 2.0 / 3.0).abs() < 1e-12);
        let all = exact_match(&preds, &opps, f64::NEG_INFINITY);
        assert_eq!(all.by_length[&1].exact_match, 100.0);
        assert!((all.overall_exact_match - 200.0 / 3.0).abs() < 1e-9);
        assert!(all.to_text().contains("EM@N"));
    }

    #[test]
    fn trigger_points() {
        let msg = CleanMessage {
            subject: vec![],
            previous_body: vec![],
            body: vec![vec!["see".into(), "you".into(), ".".into()]],
            timestamp: 0,
            locale: "en-US".into(),
            language: "en".into(),
            utc_offset_minutes: None,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let o = opportunities(&msg, &ContextFeatures::empty(), &mut rng, 10);
        assert_eq!(o.len(), 4);
        assert_eq!(o[1].prefix, ["see"]);
        assert_eq!(o[1].truth, ["you", "."]);
        let mid = &o[3];
        assert!(!mid.partial.is_empty());
        assert!(mid.truth[0].starts_with(&mid.partial) && mid.truth[0] != mid.partial);
    }

    #[test]
    fn evaluate_uniform_model() {
        use crate::decoder::{BeamConfig, TokenFilter};
        let vocab = Vocabulary::new(crate::vocab::VocabKind::Word, ["see", "you", "."]).unwrap();
        let msg = CleanMessage {
            subject: vec!["hi".into()],
            previous_body: vec![],
            body: vec![vec!["see".into(), "you".into(), ".".into()]],
            timestamp: 0,
            locale: "en-US".into(),
            language: "en".into(),
            utc_offset_minutes: None,
        };
        let msgs = with_contexts(&[msg], &vocab);
        assert_eq!(msgs[0].1.subject_ids, [crate::vocab::Special::Unk.id()]);
        let mut cfg = BeamConfig::new(&vocab);
        cfg.max_len = 2;
        let decoder = Decoder::new(&vocab, cfg, TokenFilter::new(&vocab, [])).unwrap();
        let model = Uniform(vocab.len());
        let all = evaluate(&model, |_| (), &decoder, &vocab, &msgs, Threshold::Coverage(1.0), 3, 15).unwrap();
        assert!((all.log_perplexity.unwrap() - (vocab.len() as f64).ln()).abs() < 1e-12);
        assert_eq!(all.triggered, all.opportunities);
        let none = evaluate(&model, |_| (), &decoder, &vocab, &msgs, Threshold::Coverage(0.0), 3, 15).unwrap();
        assert_eq!(none.triggered, 0);
        assert!(evaluate(&model, |_| (), &decoder, &vocab, &msgs, Threshold::Coverage(2.0), 3, 15).is_err());
    }
}
