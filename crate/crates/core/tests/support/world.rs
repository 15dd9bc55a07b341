//! Models trained once on the synthetic corpora and shared by every check.

use std::sync::{Arc, OnceLock};

use compose_core::corpus::{
    build_word_vocab, count_tokens, make_examples, CleanMessage, ContextFeatures, ExampleMode, Preprocessor,
    RawMessage, TrainingExample,
};
use compose_core::neural::{train, NeuralConfig, NeuralParams, TrainOptions, TrainReport};
use compose_core::synth::topic_corpus;
use compose_core::Vocabulary;

pub const CORPUS_SEED: u64 = 11;
pub const TRAIN_MESSAGES: usize = 1500;
pub const HELDOUT_MESSAGES: usize = 300;

pub fn clean(raw: &[RawMessage]) -> Vec<CleanMessage> {
    let pre = Preprocessor::new("en").with_counts(count_tokens(raw));
    raw.iter().filter_map(|m| pre.preprocess(m)).collect()
}

pub struct World {
    pub vocab: Vocabulary,
    pub train: Vec<CleanMessage>,
    pub heldout: Vec<CleanMessage>,
}

pub fn world() -> &'static World {
    static W: OnceLock<World> = OnceLock::new();
    W.get_or_init(|| {
        let raw = topic_corpus(TRAIN_MESSAGES + HELDOUT_MESSAGES, CORPUS_SEED);
        let msgs = clean(&raw);
        let (train, heldout) = msgs.split_at(TRAIN_MESSAGES.min(msgs.len()));
        let vocab = build_word_vocab(train.iter().flat_map(|m| m.all_tokens()), 500).unwrap();
        World {
            vocab,
            train: train.to_vec(),
            heldout: heldout.to_vec(),
        }
    })
}

pub fn small_config(vocab: usize, mode: ExampleMode) -> NeuralConfig {
    NeuralConfig {
        embed_dim: 16,
        hidden_dim: 32,
        time_dim: 2,
        dow_dim: 2,
        month_dim: 2,
        locale_dim: 2,
        ..NeuralConfig::new(vocab, mode)
    }
}

pub fn train_options() -> TrainOptions {
    TrainOptions {
        steps: 1500,
        batch_size: 8,
        learning_rate: 1e-2,
        warmup_steps: 50,
        ..TrainOptions::default()
    }
}

/// Examples with the context fields removed.
pub fn blank_context(examples: &[TrainingExample]) -> Vec<TrainingExample> {
    examples
        .iter()
        .map(|e| TrainingExample {
            context: ContextFeatures::empty(),
            ..e.clone()
        })
        .collect()
}

pub fn examples(msgs: &[CleanMessage], mode: ExampleMode) -> Vec<TrainingExample> {
    make_examples(msgs, &world().vocab, mode).collect()
}

pub fn train_model(mode: ExampleMode, examples: &[TrainingExample], seed: u64) -> (Arc<NeuralParams>, TrainReport) {
    let w = world();
    let params = NeuralParams::init(small_config(w.vocab.len(), mode), seed).unwrap();
    let (params, report) = train(params, examples, &train_options()).unwrap();
    (Arc::new(params), report)
}

pub fn lm_a() -> Arc<NeuralParams> {
    static M: OnceLock<Arc<NeuralParams>> = OnceLock::new();
    M.get_or_init(|| train_model(ExampleMode::LmA, &examples(&world().train, ExampleMode::LmA), 5).0)
        .clone()
}

pub fn lm_b() -> Arc<NeuralParams> {
    static M: OnceLock<Arc<NeuralParams>> = OnceLock::new();
    M.get_or_init(|| train_model(ExampleMode::LmB, &examples(&world().train, ExampleMode::LmB), 6).0)
        .clone()
}
