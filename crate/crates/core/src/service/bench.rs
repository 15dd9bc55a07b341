//! Keystroke-replay load for latency reports.

use std::path::Path;
use std::sync::Arc;
use std::thread;

use super::{OpenRequest, Service, ServiceConfig, SuggestRequest};
use crate::corpus::tokenize;
use crate::error::Result;
use crate::eval::{latency_report, LatencyReport, LatencySample};
use crate::neural::NeuralParams;
use crate::personal::PersonalStore;
use crate::vocab::Vocabulary;

/// One server setup to measure.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub name: String,
    pub batch_size: usize,
    /// Open a fresh session for every keystroke, defeating the checkpoints.
    pub cold: bool,
}

impl BenchConfig {
    pub fn new(name: impl Into<String>, batch_size: usize, cold: bool) -> Self {
        BenchConfig {
            name: name.into(),
            batch_size,
            cold,
        }
    }

    /// Unbatched baseline, batched at `batch`, and unbatched without caching.
    pub fn defaults(batch: usize) -> Vec<BenchConfig> {
        vec![
            BenchConfig::new("unbatched", 1, false),
            BenchConfig::new(format!("batched B={batch}"), batch, false),
            BenchConfig::new("unbatched, no cache", 1, true),
        ]
    }
}

/// A session to replay: its context and the body typed one character at a
/// time.
#[derive(Debug, Clone, PartialEq)]
pub struct TypingScript {
    pub open: OpenRequest,
    pub body: String,
}

fn replay(service: &Service, script: &TypingScript, cold: bool) -> Result<Vec<LatencySample>> {
    let mut samples = Vec::new();
    let mut session = service.open(&script.open)?;
    let mut typed = String::new();
    for (seq, ch) in script.body.chars().enumerate() {
        typed.push(ch);
        if cold {
            service.close(&session);
            session = service.open(&script.open)?;
        }
        let req = SuggestRequest {
            session: session.clone(),
            seq: seq as u64 + 1,
            prefix: typed.clone(),
        };
        if let Some(r) = service.suggest(&req)? {
            samples.push(LatencySample {
                micros: r.us_total as f64,
                steps: r.encode_steps + r.beam_steps,
                length: if r.triggered { tokenize(&r.suggestion).len() } else { 0 },
            });
        }
    }
    service.close(&session);
    Ok(samples)
}

/// Replays every script concurrently, one thread per script, under each
/// configuration; the first configuration is the baseline.
pub fn run_bench(
    params: Arc<NeuralParams>,
    vocab: &Vocabulary,
    personal_root: Option<&Path>,
    base: &ServiceConfig,
    scripts: &[TypingScript],
    configs: &[BenchConfig],
) -> Result<LatencyReport> {
    let mut runs = Vec::with_capacity(configs.len());
    for c in configs {
        let cfg = ServiceConfig {
            batch_size: c.batch_size,
            max_sessions: base.max_sessions.max(scripts.len() + 1),
            ..base.clone()
        };
        let service = Service::new(params.clone(), vocab.clone(), personal_root.map(PersonalStore::new), cfg)?;
        let samples = thread::scope(|s| {
            let handles: Vec<_> = scripts
                .iter()
                .map(|script| {
                    let service = &service;
                    s.spawn(move || replay(service, script, c.cold))
                })
                .collect();
            let mut all = Vec::new();
            for h in handles {
                all.extend(h.join().expect("bench thread panicked")?);
            }
            Ok::<_, crate::error::Error>(all)
        })?;
        log::info!("{}: {} requests", c.name, samples.len());
        runs.push((c.name.clone(), samples));
    }
    Ok(latency_report(&runs))
}
