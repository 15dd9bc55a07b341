//! The global context-conditioned LSTM language model.

mod gradcheck;
mod io;
pub(crate) mod kernel;
mod train;

pub use gradcheck::{grad_check, grad_check_config, GradCheckReport, GroupCheck, GROUP_NAMES};
pub use train::{loss, loss_and_grad, train, ClipStats, StepOutcome, TrainOptions, TrainReport, Trainer};

use std::ops::Range;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{pack, ContextFeatures, ExampleMode, TimeBucket, NUM_LOCALES};
use crate::dist::{log_softmax_into, Distribution};
use crate::error::{Error, Result};
use crate::lm::LanguageModel;
use crate::vocab::{Special, TokenId};
use kernel::{affine, affine_rows, sigmoid};

const INIT_SCALE: f64 = 0.08;
const FORGET_BIAS: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub time_dim: usize,
    pub dow_dim: usize,
    pub month_dim: usize,
    pub locale_dim: usize,
    pub mode: ExampleMode,
    pub label_smoothing: f64,
    pub max_grad_sigma: f64,
}

impl NeuralConfig {
    pub fn new(vocab_size: usize, mode: ExampleMode) -> Self {
        NeuralConfig {
            vocab_size,
            embed_dim: 32,
            hidden_dim: 128,
            time_dim: 8,
            dow_dim: 8,
            month_dim: 8,
            locale_dim: 8,
            mode,
            label_smoothing: 0.1,
            max_grad_sigma: 4.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 1 || self.embed_dim < 1 || self.hidden_dim < 1 {
            return Err(Error::invalid("vocab, embedding and hidden sizes must be at least 1"));
        }
        if self.mode == ExampleMode::LmA
            && [self.time_dim, self.dow_dim, self.month_dim, self.locale_dim].contains(&0)
        {
            return Err(Error::invalid("categorical embedding sizes must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::invalid("label smoothing must lie in [0, 1)"));
        }
        if !(self.max_grad_sigma > 0.0) {
            return Err(Error::invalid("max_grad_sigma must be positive"));
        }
        if self.vocab_size <= Special::Body.id() as usize {
            return Err(Error::invalid("vocabulary is smaller than the special-token block"));
        }
        Ok(())
    }

    /// Width of the context part of each step input; zero in LM-B mode.
    pub fn context_dim(&self) -> usize {
        match self.mode {
            ExampleMode::LmA => 2 * self.embed_dim + self.categorical_dim(),
            ExampleMode::LmB => 0,
        }
    }

    pub fn categorical_dim(&self) -> usize {
        match self.mode {
            ExampleMode::LmA => self.time_dim + self.dow_dim + self.month_dim + self.locale_dim,
            ExampleMode::LmB => 0,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.embed_dim + self.context_dim()
    }

    fn shapes(&self) -> [(&'static str, usize, usize); 9] {
        let (e, h, v) = (self.embed_dim, self.hidden_dim, self.vocab_size);
        let lm_a = self.mode == ExampleMode::LmA;
        let cat = |rows: usize, dim: usize| if lm_a { (rows, dim) } else { (0, 0) };
        let (tr, tc) = cat(TimeBucket::COUNT, self.time_dim);
        let (dr, dc) = cat(7, self.dow_dim);
        let (mr, mc) = cat(12, self.month_dim);
        let (lr, lc) = cat(NUM_LOCALES, self.locale_dim);
        [
            ("embed", v, e),
            ("time", tr, tc),
            ("dow", dr, dc),
            ("month", mr, mc),
            ("locale", lr, lc),
            ("lstm_w", self.input_dim() + h, 4 * h),
            ("lstm_b", 1, 4 * h),
            ("out_w", h, v),
            ("out_b", 1, v),
        ]
    }
}

/// Offsets of each named tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    tensors: Vec<TensorInfo>,
    total: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorInfo {
    pub name: &'static str,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl TensorInfo {
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.rows * self.cols
    }
}

impl Layout {
    fn new(cfg: &NeuralConfig) -> Layout {
        let mut offset = 0;
        let tensors = cfg
            .shapes()
            .into_iter()
            .map(|(name, rows, cols)| {
                let t = TensorInfo {
                    name,
                    rows,
                    cols,
                    offset,
                };
                offset += rows * cols;
                t
            })
            .collect();
        Layout {
            tensors,
            total: offset,
        }
    }

    pub fn tensors(&self) -> &[TensorInfo] {
        &self.tensors
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn get(&self, name: &str) -> &TensorInfo {
        self.tensors.iter().find(|t| t.name == name).expect("known tensor name")
    }
}

/// Model weights as one flat vector plus a layout; immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralParams {
    cfg: NeuralConfig,
    layout: Layout,
    data: Vec<f64>,
    r: Ranges,
}

#[derive(Debug, Clone, PartialEq)]
struct Ranges {
    embed: Range<usize>,
    time: Range<usize>,
    dow: Range<usize>,
    month: Range<usize>,
    locale: Range<usize>,
    lstm_w: Range<usize>,
    lstm_b: Range<usize>,
    out_w: Range<usize>,
    out_b: Range<usize>,
}

impl Ranges {
    fn new(l: &Layout) -> Ranges {
        Ranges {
            embed: l.get("embed").range(),
            time: l.get("time").range(),
            dow: l.get("dow").range(),
            month: l.get("month").range(),
            locale: l.get("locale").range(),
            lstm_w: l.get("lstm_w").range(),
            lstm_b: l.get("lstm_b").range(),
            out_w: l.get("out_w").range(),
            out_b: l.get("out_b").range(),
        }
    }
}

impl NeuralParams {
    /// All-zero weights.
    pub fn zeros(cfg: NeuralConfig) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(&cfg);
        let data = vec![0.0; layout.total()];
        Ok(Self::from_parts(cfg, layout, data))
    }

    /// Uniform(-0.08, 0.08) weights with the forget-gate bias at 1.
    pub fn init(cfg: NeuralConfig, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for x in p.data.iter_mut() {
            *x = rng.gen_range(-INIT_SCALE..INIT_SCALE);
        }
        let h = p.cfg.hidden_dim;
        let b = p.r.lstm_b.clone();
        for (j, x) in p.data[b].iter_mut().enumerate() {
            *x = if (h..2 * h).contains(&j) { FORGET_BIAS } else { 0.0 };
        }
        let ob = p.r.out_b.clone();
        p.data[ob].fill(0.0);
        Ok(p)
    }

    pub fn from_flat(cfg: NeuralConfig, data: Vec<f64>) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(&cfg);
        if data.len() != layout.total() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                layout.total(),
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("non-finite parameter"));
        }
        Ok(Self::from_parts(cfg, layout, data))
    }

    fn from_parts(cfg: NeuralConfig, layout: Layout, data: Vec<f64>) -> Self {
        let r = Ranges::new(&layout);
        NeuralParams { cfg, layout, data, r }
    }

    pub fn config(&self) -> &NeuralConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn tensor(&self, name: &str) -> &[f64] {
        &self.data[self.layout.get(name).range()]
    }

    pub fn tensor_mut(&mut self, name: &str) -> &mut [f64] {
        let r = self.layout.get(name).range();
        &mut self.data[r]
    }

    pub fn embedding(&self, token: TokenId) -> &[f64] {
        let e = self.cfg.embed_dim;
        let t = token as usize;
        &self.data[self.r.embed.clone()][t * e..(t + 1) * e]
    }

    fn row(&self, r: &Range<usize>, dim: usize, i: usize) -> &[f64] {
        &self.data[r.clone()][i * dim..(i + 1) * dim]
    }

    /// Field averages and categorical lookups for one message's context.
    pub fn encode_context(&self, f: &ContextFeatures) -> ContextEncoding {
        if self.cfg.mode == ExampleMode::LmB {
            return ContextEncoding::default();
        }
        let c = &self.cfg;
        let mut categorical = Vec::with_capacity(c.categorical_dim());
        categorical.extend_from_slice(self.row(&self.r.time, c.time_dim, f.time_bucket.index()));
        categorical.extend_from_slice(self.row(&self.r.dow, c.dow_dim, f.day_of_week as usize % 7));
        categorical.extend_from_slice(self.row(
            &self.r.month,
            c.month_dim,
            (f.month as usize).clamp(1, 12) - 1,
        ));
        categorical.extend_from_slice(self.row(
            &self.r.locale,
            c.locale_dim,
            f.locale_id as usize % NUM_LOCALES,
        ));
        ContextEncoding {
            subject_avg: self.mean_embedding(&f.subject_ids),
            prev_avg: self.mean_embedding(&f.prev_body_ids),
            categorical,
        }
    }

    fn mean_embedding(&self, ids: &[TokenId]) -> Vec<f64> {
        let mut avg = vec![0.0; self.cfg.embed_dim];
        if ids.is_empty() {
            return avg;
        }
        for &t in ids {
            for (a, &x) in avg.iter_mut().zip(self.embedding(t)) {
                *a += x;
            }
        }
        let n = ids.len() as f64;
        for a in &mut avg {
            *a /= n;
        }
        avg
    }

    /// State ready to predict the first body token: the lead-in `<BODY>`
    /// for LM-A, the packed subject/previous-body prefix for LM-B.
    pub fn start(&self, features: &ContextFeatures) -> NeuralState {
        let ctx = Arc::new(self.encode_context(features));
        let s = NeuralState {
            step: StepState::zeros(self.cfg.hidden_dim),
            ctx,
        };
        self.advance_all(&s, &self.lead_in(features))
    }

    pub fn lead_in(&self, features: &ContextFeatures) -> Vec<TokenId> {
        match self.cfg.mode {
            ExampleMode::LmA => vec![Special::Body.id()],
            ExampleMode::LmB => pack(features, &[]),
        }
    }

    /// `[x; m]` for one step.
    fn step_input(&self, ctx: &ContextEncoding, token: TokenId, m: &[f64]) -> Vec<f64> {
        let mut xh = Vec::with_capacity(self.cfg.input_dim() + self.cfg.hidden_dim);
        xh.extend_from_slice(self.embedding(token));
        xh.extend_from_slice(&ctx.subject_avg);
        xh.extend_from_slice(&ctx.prev_avg);
        xh.extend_from_slice(&ctx.categorical);
        xh.extend_from_slice(m);
        xh
    }

    fn cell(&self, z: &[f64], c_prev: &[f64]) -> StepState {
        let h = self.cfg.hidden_dim;
        let mut c = vec![0.0; h];
        let mut m = vec![0.0; h];
        for j in 0..h {
            let i = sigmoid(z[j]);
            let f = sigmoid(z[h + j]);
            let g = z[2 * h + j].tanh();
            let o = sigmoid(z[3 * h + j]);
            c[j] = f * c_prev[j] + i * g;
            m[j] = o * c[j].tanh();
        }
        StepState { c, m }
    }

    /// One LSTM cell update.
    pub fn advance_step(&self, ctx: &ContextEncoding, token: TokenId, state: &StepState) -> StepState {
        let xh = self.step_input(ctx, token, &state.m);
        let z = affine(&xh, &self.data[self.r.lstm_w.clone()], &self.data[self.r.lstm_b.clone()]);
        self.cell(&z, &state.c)
    }

    pub fn logits(&self, m: &[f64]) -> Vec<f64> {
        affine(m, &self.data[self.r.out_w.clone()], &self.data[self.r.out_b.clone()])
    }

    /// Next-token distribution given the hidden state.
    pub fn output_step(&self, state: &StepState) -> Distribution {
        Distribution::log_softmax(&self.logits(&state.m))
    }

    /// Cell update followed by the output distribution.
    pub fn step(
        &self,
        ctx: &ContextEncoding,
        token: TokenId,
        state: &StepState,
    ) -> (Distribution, StepState) {
        let next = self.advance_step(ctx, token, state);
        (self.output_step(&next), next)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContextEncoding {
    pub subject_avg: Vec<f64>,
    pub prev_avg: Vec<f64>,
    pub categorical: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepState {
    pub c: Vec<f64>,
    pub m: Vec<f64>,
}

impl StepState {
    pub fn zeros(h: usize) -> Self {
        StepState {
            c: vec![0.0; h],
            m: vec![0.0; h],
        }
    }
}

/// Recurrent state plus the session's context encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralState {
    pub step: StepState,
    pub ctx: Arc<ContextEncoding>,
}

impl LanguageModel for NeuralParams {
    type State = NeuralState;

    fn vocab_size(&self) -> usize {
        self.cfg.vocab_size
    }

    fn advance(&self, state: &NeuralState, token: TokenId) -> NeuralState {
        NeuralState {
            step: self.advance_step(&state.ctx, token, &state.step),
            ctx: state.ctx.clone(),
        }
    }

    fn output(&self, state: &NeuralState) -> Distribution {
        self.output_step(&state.step)
    }

    fn advance_batch(&self, items: &[(&NeuralState, TokenId)]) -> Vec<NeuralState> {
        let xhs: Vec<Vec<f64>> = items
            .iter()
            .map(|(s, t)| self.step_input(&s.ctx, *t, &s.step.m))
            .collect();
        let rows: Vec<&[f64]> = xhs.iter().map(Vec::as_slice).collect();
        let mut z = vec![Vec::new(); items.len()];
        affine_rows(
            &rows,
            &self.data[self.r.lstm_w.clone()],
            &self.data[self.r.lstm_b.clone()],
            &mut z,
        );
        items
            .iter()
            .zip(&z)
            .map(|((s, _), z)| NeuralState {
                step: self.cell(z, &s.step.c),
                ctx: s.ctx.clone(),
            })
            .collect()
    }

    fn output_batch(&self, states: &[&NeuralState]) -> Vec<Distribution> {
        let rows: Vec<&[f64]> = states.iter().map(|s| s.step.m.as_slice()).collect();
        let mut logits = vec![Vec::new(); states.len()];
        affine_rows(
            &rows,
            &self.data[self.r.out_w.clone()],
            &self.data[self.r.out_b.clone()],
            &mut logits,
        );
        logits
            .into_iter()
            .map(|l| {
                let mut out = vec![0.0; l.len()];
                log_softmax_into(&l, &mut out);
                Distribution::from_log_probs(out)
            })
            .collect()
    }
}
