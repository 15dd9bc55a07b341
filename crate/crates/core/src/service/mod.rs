//! Streaming suggestion sessions with per-token state checkpoints.

mod batcher;
mod bench;
mod protocol;
mod server;

pub use batcher::{ActiveGuard, BatchStats, GlobalModel, StepBatcher, DEFAULT_BATCH_SIZE, DEFAULT_BATCH_WINDOW};
pub use bench::{run_bench, BenchConfig, TypingScript};
pub use protocol::{OpenRequest, Request, Response, SuggestRequest, SuggestResponse};
pub use server::{coalesce, serve, Server};

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant, SystemTime};

use crate::corpus::{encode, normalize_entities, split_partial, tokenize, ContextFeatures};
use crate::decoder::{BeamConfig, Decoder, TokenFilter};
use crate::dist::Distribution;
use crate::error::{Error, Result};
use crate::lm::LanguageModel;
use crate::neural::{NeuralParams, NeuralState};
use crate::ngram::{BackoffAutomaton, StateId, ROOT};
use crate::personal::{BlendedModel, InterpolationConfig, PersonalModel, PersonalStore};
use crate::vocab::{TokenId, Vocabulary};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub beam: BeamConfig,
    pub extra_blocked: Vec<String>,
    /// Rows per batched kernel call; 1 disables batching.
    pub batch_size: usize,
    pub batch_window: Duration,
    pub session_ttl: Duration,
    pub max_sessions: usize,
    /// Locales allowed to open sessions; `None` allows all.
    pub allowed_locales: Option<Vec<String>>,
    pub interpolation: InterpolationConfig,
}

impl ServiceConfig {
    pub fn new(vocab: &Vocabulary) -> Self {
        ServiceConfig {
            beam: BeamConfig::new(vocab),
            extra_blocked: Vec::new(),
            batch_size: DEFAULT_BATCH_SIZE,
            batch_window: DEFAULT_BATCH_WINDOW,
            session_ttl: Duration::from_secs(600),
            max_sessions: 10_000,
            allowed_locales: None,
            interpolation: InterpolationConfig::default(),
        }
    }
}

/// The global model, plus a user's automaton when they have one.
struct ServingModel<'a> {
    global: &'a GlobalModel,
    personal: Option<BlendedModel<'a, &'a GlobalModel>>,
}

impl<'a> ServingModel<'a> {
    fn new(global: &'a GlobalModel, personal: Option<&'a BackoffAutomaton>, cfg: InterpolationConfig) -> Self {
        ServingModel {
            global,
            personal: personal.map(|aut| BlendedModel {
                global,
                personal: aut,
                cfg,
            }),
        }
    }
}

impl LanguageModel for ServingModel<'_> {
    type State = (NeuralState, StateId);

    fn vocab_size(&self) -> usize {
        match &self.personal {
            Some(p) => p.vocab_size(),
            None => self.global.vocab_size(),
        }
    }

    fn advance(&self, state: &Self::State, token: TokenId) -> Self::State {
        self.advance_batch(&[(state, token)]).pop().unwrap()
    }

    fn output(&self, state: &Self::State) -> Distribution {
        self.output_batch(&[state]).pop().unwrap()
    }

    fn advance_batch(&self, items: &[(&Self::State, TokenId)]) -> Vec<Self::State> {
        match &self.personal {
            Some(p) => p.advance_batch(items),
            None => {
                let g: Vec<(&NeuralState, TokenId)> = items.iter().map(|(s, t)| (&s.0, *t)).collect();
                self.global
                    .advance_batch(&g)
                    .into_iter()
                    .map(|s| (s, ROOT))
                    .collect()
            }
        }
    }

    fn output_batch(&self, states: &[&Self::State]) -> Vec<Distribution> {
        match &self.personal {
            Some(p) => p.output_batch(states),
            None => {
                let g: Vec<&NeuralState> = states.iter().map(|s| &s.0).collect();
                self.global.output_batch(&g)
            }
        }
    }
}

struct Session {
    personal: Option<Arc<PersonalModel>>,
    decoder: Arc<Decoder>,
    /// Tokens consumed so far; `checkpoints[t]` is the state after the
    /// first `t` of them, `checkpoints[0]` the state after the lead-in.
    tokens: Vec<TokenId>,
    checkpoints: Vec<(NeuralState, StateId)>,
    last_seq: Option<u64>,
    last_used: Instant,
    #[allow(dead_code)]
    created_at: SystemTime,
}

struct SessionSlot {
    /// Newest seq seen on the wire, for newest-wins dropping.
    latest_seq: AtomicU64,
    session: Mutex<Session>,
}

pub struct Service {
    global: GlobalModel,
    vocab: Arc<Vocabulary>,
    decoder: Arc<Decoder>,
    personal: Option<PersonalStore>,
    cfg: ServiceConfig,
    sessions: Mutex<HashMap<String, Arc<SessionSlot>>>,
    next_id: AtomicU64,
    id_salt: u64,
}

impl Service {
    pub fn new(
        params: Arc<NeuralParams>,
        vocab: Vocabulary,
        personal: Option<PersonalStore>,
        cfg: ServiceConfig,
    ) -> Result<Self> {
        if params.vocab_size() != vocab.len() {
            return Err(Error::invalid(format!(
                "model has {} outputs but the vocabulary has {} tokens",
                params.vocab_size(),
                vocab.len()
            )));
        }
        let decoder = Decoder::new(
            &vocab,
            cfg.beam.clone(),
            TokenFilter::new(&vocab, cfg.extra_blocked.iter().map(String::as_str)),
        )?;
        let batcher = (cfg.batch_size > 1).then(|| StepBatcher::spawn(params.clone(), cfg.batch_size, cfg.batch_window));
        let id_salt = SystemTime::now()
            .duration_since(SystemTime::UNIX_EPOCH)
            .map(|d| d.as_nanos() as u64)
            .unwrap_or(0);
        Ok(Service {
            global: GlobalModel { params, batcher },
            vocab: Arc::new(vocab),
            decoder: Arc::new(decoder),
            personal,
            cfg,
            sessions: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(1),
            id_salt,
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.cfg
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn batch_stats(&self) -> Option<&BatchStats> {
        self.global.batcher.as_ref().map(|b| b.stats())
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().unwrap().len()
    }

    fn new_id(&self) -> String {
        let n = self.next_id.fetch_add(1, Ordering::Relaxed);
        let mixed = (n ^ self.id_salt).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        format!("{mixed:016x}{n:x}")
    }

    /// Encodes the context once and stores the state after the lead-in.
    pub fn open(&self, req: &OpenRequest) -> Result<String> {
        if let Some(allowed) = &self.cfg.allowed_locales {
            if !allowed.iter().any(|l| l == &req.locale) {
                return Err(Error::NotEligible(req.locale.clone()));
            }
        }
        if self.session_count() >= self.cfg.max_sessions {
            self.evict_idle_at(Instant::now());
            if self.session_count() >= self.cfg.max_sessions {
                return Err(Error::Capacity { retry_after_ms: 1000 });
            }
        }
        let personal = match (&self.personal, &req.user) {
            (Some(store), Some(user)) => store.get(user, &self.vocab)?.filter(|m| m.is_active()),
            _ => None,
        };
        let decoder = match &personal {
            Some(p) => Arc::new(Decoder::new(
                &p.union_vocab,
                BeamConfig {
                    end_tokens: BeamConfig::new(&p.union_vocab).end_tokens,
                    ..self.cfg.beam.clone()
                },
                TokenFilter::new(&p.union_vocab, self.cfg.extra_blocked.iter().map(String::as_str)),
            )?),
            None => self.decoder.clone(),
        };
        let field = |s: &str| encode(&self.vocab, tokenize(&normalize_entities(s)).iter().map(String::as_str));
        let context = ContextFeatures::new(
            field(&req.subject),
            req.previous_body.as_deref().map(field).unwrap_or_default(),
            req.timestamp,
            req.utc_offset_minutes,
            &req.locale,
        );
        let start = {
            let _g = self.global.batcher.as_ref().map(|b| b.enter());
            let s = NeuralState {
                step: crate::neural::StepState::zeros(self.global.params.config().hidden_dim),
                ctx: Arc::new(self.global.params.encode_context(&context)),
            };
            self.global.advance_all(&s, &self.global.params.lead_in(&context))
        };
        let ngram_start = personal
            .as_ref()
            .and_then(|p| p.automaton.as_ref())
            .map_or(ROOT, |a| a.initial_state());
        let session = Session {
            personal,
            decoder,
            tokens: Vec::new(),
            checkpoints: vec![(start, ngram_start)],
            last_seq: None,
            last_used: Instant::now(),
            created_at: SystemTime::now(),
        };
        let id = self.new_id();
        self.sessions.lock().unwrap().insert(
            id.clone(),
            Arc::new(SessionSlot {
                latest_seq: AtomicU64::new(0),
                session: Mutex::new(session),
            }),
        );
        Ok(id)
    }

    fn slot(&self, id: &str) -> Result<Arc<SessionSlot>> {
        self.sessions
            .lock()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| Error::UnknownSession(id.to_string()))
    }

    /// Records that `seq` arrived, so older queued requests can be dropped.
    pub fn note_seq(&self, session: &str, seq: u64) {
        if let Ok(slot) = self.slot(session) {
            slot.latest_seq.fetch_max(seq, Ordering::SeqCst);
        }
    }

    /// Returns `None` for a stale request: one at or below the last answered
    /// seq, or superseded by a newer arrival.
    pub fn suggest(&self, req: &SuggestRequest) -> Result<Option<SuggestResponse>> {
        let t0 = Instant::now();
        let slot = self.slot(&req.session)?;
        slot.latest_seq.fetch_max(req.seq, Ordering::SeqCst);
        let mut s = slot.session.lock().unwrap();
        if s.last_seq.is_some_and(|l| req.seq <= l) || req.seq < slot.latest_seq.load(Ordering::SeqCst) {
            return Ok(None);
        }
        let _g = self.global.batcher.as_ref().map(|b| b.enter());
        s.last_used = Instant::now();
        s.last_seq = Some(req.seq);

        let personal = s.personal.clone();
        let vocab: &Vocabulary = personal.as_ref().map_or(&self.vocab, |p| &p.union_vocab);
        let automaton = personal.as_ref().and_then(|p| p.automaton.as_ref());
        let model = ServingModel::new(&self.global, automaton, self.cfg.interpolation);

        let (words, partial) = split_partial(&normalize_entities(&req.prefix));
        let ids = encode(vocab, words.iter().map(String::as_str));
        let keep = s.tokens.iter().zip(&ids).take_while(|(a, b)| a == b).count();
        s.tokens.truncate(keep);
        s.checkpoints.truncate(keep + 1);
        let t_enc = Instant::now();
        for &t in &ids[keep..] {
            let next = model.advance(s.checkpoints.last().unwrap(), t);
            s.tokens.push(t);
            s.checkpoints.push(next);
        }
        let us_encode = t_enc.elapsed().as_micros() as u64;
        let encode_steps = ids.len() - keep;

        let decoder = s.decoder.clone();
        let state = s.checkpoints.last().unwrap().clone();
        drop(s);
        let (suggestions, beam_steps) = decoder.search(&model, &state, &partial, vocab);
        let top = suggestions.into_iter().next();
        let (suggestion, confidence, triggered) = match top {
            Some(sg) => {
                let text = if sg.triggered {
                    insertion_text(&req.prefix, &partial, &sg.text)
                } else {
                    String::new()
                };
                (text, Some(sg.confidence), sg.triggered)
            }
            None => (String::new(), None, false),
        };
        Ok(Some(SuggestResponse {
            seq: req.seq,
            suggestion,
            confidence,
            triggered,
            us_total: t0.elapsed().as_micros() as u64,
            us_encode,
            encode_steps,
            beam_steps,
        }))
    }

    /// Idempotent.
    pub fn close(&self, id: &str) {
        self.sessions.lock().unwrap().remove(id);
    }

    /// Closes sessions idle for longer than the TTL as of `now`; returns how
    /// many went.
    pub fn evict_idle_at(&self, now: Instant) -> usize {
        let ttl = self.cfg.session_ttl;
        let mut sessions = self.sessions.lock().unwrap();
        let before = sessions.len();
        sessions.retain(|_, slot| match slot.session.try_lock() {
            Ok(s) => now.saturating_duration_since(s.last_used) <= ttl,
            // busy sessions are not idle
            Err(_) => true,
        });
        before - sessions.len()
    }

    /// Handles one protocol line; `None` means nothing to send back.
    pub fn handle_line(&self, line: &str) -> Option<Response> {
        let req: Request = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => return Some(Response::error(format!("bad request: {e}"), None)),
        };
        self.handle(&req)
    }

    pub fn handle(&self, req: &Request) -> Option<Response> {
        match req {
            Request::Open(o) => Some(match self.open(o) {
                Ok(session) => Response::Opened { ok: true, session },
                Err(Error::Capacity { retry_after_ms }) => {
                    Response::error("session capacity exceeded", Some(retry_after_ms))
                }
                Err(e) => Response::error(e.to_string(), None),
            }),
            Request::Suggest(s) => match self.suggest(s) {
                Ok(Some(r)) => Some(Response::Suggest(r)),
                Ok(None) => None,
                Err(e) => Some(Response::error(e.to_string(), None)),
            },
            Request::Close { session } => {
                self.close(session);
                Some(Response::Ok { ok: true })
            }
        }
    }
}

/// The text to append to `prefix`: the suggestion minus the partial word
/// already typed, with a separating space when a new word starts right
/// after a non-space character.
fn insertion_text(prefix: &str, partial: &str, text: &str) -> String {
    if !partial.is_empty() {
        return text.strip_prefix(partial).unwrap_or(text).to_string();
    }
    let needs_space = prefix.chars().last().is_some_and(|c| !c.is_whitespace())
        && text.chars().next().is_some_and(|c| c.is_alphanumeric() || c == '<');
    if needs_space {
        format!(" {text}")
    } else {
        text.to_string()
    }
}
