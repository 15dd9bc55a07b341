//! Gathers single-token steps from concurrent sessions into one batched
//! kernel call.
//!
//! Each output element of the batched kernels is accumulated in the same
//! order as in the per-row path, so results are bit-identical to serial
//! execution whatever the batch composition.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, unbounded, Receiver, RecvTimeoutError, Sender};

use crate::dist::Distribution;
use crate::lm::LanguageModel;
use crate::neural::{NeuralParams, NeuralState};
use crate::vocab::TokenId;

pub const DEFAULT_BATCH_SIZE: usize = 16;
pub const DEFAULT_BATCH_WINDOW: Duration = Duration::from_millis(2);

enum Work {
    Advance(Vec<(NeuralState, TokenId)>),
    Output(Vec<NeuralState>),
}

enum Done {
    Advance(Vec<NeuralState>),
    Output(Vec<Distribution>),
}

struct Job {
    work: Work,
    reply: Sender<Done>,
}

impl Job {
    fn rows(&self) -> usize {
        match &self.work {
            Work::Advance(v) => v.len(),
            Work::Output(v) => v.len(),
        }
    }
}

#[derive(Debug, Default)]
pub struct BatchStats {
    pub batches: AtomicUsize,
    pub rows: AtomicUsize,
    pub jobs: AtomicUsize,
}

impl BatchStats {
    /// Mean rows per kernel call.
    pub fn mean_rows(&self) -> f64 {
        let b = self.batches.load(Ordering::Relaxed);
        if b == 0 {
            return 0.0;
        }
        self.rows.load(Ordering::Relaxed) as f64 / b as f64
    }
}

/// Handle to the batching thread; cheap to clone. The thread exits when
/// the last handle is dropped.
#[derive(Clone)]
pub struct StepBatcher {
    tx: Sender<Job>,
    active: Arc<AtomicUsize>,
    stats: Arc<BatchStats>,
}

/// Marks one computation as in flight while alive.
pub struct ActiveGuard(Arc<AtomicUsize>);

impl Drop for ActiveGuard {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

impl StepBatcher {
    /// Starts the thread. It gathers up to `max_rows` rows, waiting at most
    /// `window` for more, and only waits while other computations are in
    /// flight.
    pub fn spawn(params: Arc<NeuralParams>, max_rows: usize, window: Duration) -> StepBatcher {
        let (tx, rx) = unbounded::<Job>();
        let active = Arc::new(AtomicUsize::new(0));
        let stats = Arc::new(BatchStats::default());
        let (a, s) = (active.clone(), stats.clone());
        thread::Builder::new()
            .name("step-batcher".into())
            .spawn(move || run(params, rx, a, s, max_rows.max(1), window))
            .expect("spawn batcher thread");
        StepBatcher { tx, active, stats }
    }

    pub fn stats(&self) -> &BatchStats {
        &self.stats
    }

    /// Counts a computation as in flight until the guard drops.
    pub fn enter(&self) -> ActiveGuard {
        self.active.fetch_add(1, Ordering::SeqCst);
        ActiveGuard(self.active.clone())
    }

    fn submit(&self, work: Work) -> Done {
        let (reply, rx) = bounded(1);
        self.tx.send(Job { work, reply }).expect("batcher thread alive");
        rx.recv().expect("batcher thread replies")
    }

    pub fn advance(&self, items: &[(&NeuralState, TokenId)]) -> Vec<NeuralState> {
        if items.is_empty() {
            return Vec::new();
        }
        let owned = items.iter().map(|(s, t)| ((*s).clone(), *t)).collect();
        match self.submit(Work::Advance(owned)) {
            Done::Advance(v) => v,
            Done::Output(_) => unreachable!("advance job answered with outputs"),
        }
    }

    pub fn output(&self, states: &[&NeuralState]) -> Vec<Distribution> {
        if states.is_empty() {
            return Vec::new();
        }
        let owned = states.iter().map(|s| (*s).clone()).collect();
        match self.submit(Work::Output(owned)) {
            Done::Output(v) => v,
            Done::Advance(_) => unreachable!("output job answered with states"),
        }
    }
}

fn run(
    params: Arc<NeuralParams>,
    rx: Receiver<Job>,
    active: Arc<AtomicUsize>,
    stats: Arc<BatchStats>,
    max_rows: usize,
    window: Duration,
) {
    while let Ok(first) = rx.recv() {
        let mut jobs = vec![first];
        let mut rows = jobs[0].rows();
        let deadline = Instant::now() + window;
        // each in-flight computation has at most one job outstanding
        while rows < max_rows && jobs.len() < active.load(Ordering::SeqCst) {
            let now = Instant::now();
            if now >= deadline {
                break;
            }
            match rx.recv_timeout(deadline - now) {
                Ok(j) => {
                    rows += j.rows();
                    jobs.push(j);
                }
                Err(RecvTimeoutError::Timeout) => break,
                Err(RecvTimeoutError::Disconnected) => break,
            }
        }
        execute(&params, jobs, &stats, max_rows);
    }
}

/// Runs the gathered rows in kernel calls of at most `max_rows` rows.
fn execute(params: &NeuralParams, jobs: Vec<Job>, stats: &BatchStats, max_rows: usize) {
    let mut adv: Vec<(&NeuralState, TokenId)> = Vec::new();
    let mut out: Vec<&NeuralState> = Vec::new();
    for j in &jobs {
        match &j.work {
            Work::Advance(v) => adv.extend(v.iter().map(|(s, t)| (s, *t))),
            Work::Output(v) => out.extend(v.iter()),
        }
    }
    let max_rows = max_rows.max(1);
    let mut adv_res = adv
        .chunks(max_rows)
        .flat_map(|c| params.advance_batch(c))
        .collect::<Vec<_>>()
        .into_iter();
    let mut out_res = out
        .chunks(max_rows)
        .flat_map(|c| params.output_batch(c))
        .collect::<Vec<_>>()
        .into_iter();
    let calls = adv.len().div_ceil(max_rows) + out.len().div_ceil(max_rows);
    stats.batches.fetch_add(calls, Ordering::Relaxed);
    stats.rows.fetch_add(adv.len() + out.len(), Ordering::Relaxed);
    stats.jobs.fetch_add(jobs.len(), Ordering::Relaxed);
    for j in &jobs {
        let done = match &j.work {
            Work::Advance(v) => Done::Advance(adv_res.by_ref().take(v.len()).collect()),
            Work::Output(v) => Done::Output(out_res.by_ref().take(v.len()).collect()),
        };
        // a requester that gave up is not an error
        let _ = j.reply.send(done);
    }
}

/// The global model, optionally routed through a batcher.
#[derive(Clone)]
pub struct GlobalModel {
    pub params: Arc<NeuralParams>,
    pub batcher: Option<StepBatcher>,
}

impl LanguageModel for GlobalModel {
    type State = NeuralState;

    fn vocab_size(&self) -> usize {
        self.params.vocab_size()
    }

    fn advance(&self, state: &NeuralState, token: TokenId) -> NeuralState {
        self.advance_batch(&[(state, token)]).pop().unwrap()
    }

    fn output(&self, state: &NeuralState) -> Distribution {
        self.output_batch(&[state]).pop().unwrap()
    }

    fn advance_batch(&self, items: &[(&NeuralState, TokenId)]) -> Vec<NeuralState> {
        match &self.batcher {
            Some(b) => b.advance(items),
            None => self.params.advance_batch(items),
        }
    }

    fn output_batch(&self, states: &[&NeuralState]) -> Vec<Distribution> {
        match &self.batcher {
            Some(b) => b.output(states),
            None => self.params.output_batch(states),
        }
    }
}
