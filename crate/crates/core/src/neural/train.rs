//! Backpropagation through time, Adam and adaptive gradient skipping.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::kernel::{backprop_input, outer_add};
use super::{NeuralParams, StepState};
use crate::corpus::{pack, ExampleMode, TrainingExample};
use crate::dist::log_softmax_into;
use crate::error::{Error, Result};
use crate::vocab::{Special, TokenId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Decay of the moving mean/variance of the log gradient norm.
    pub clip_decay: f64,
    /// Steps that are always applied while the statistics settle.
    pub clip_warmup: usize,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            steps: 1000,
            batch_size: 8,
            learning_rate: 1e-3,
            warmup_steps: 100,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_decay: 0.99,
            clip_warmup: 100,
            seed: 17,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean smoothed cross-entropy of each step's batch, skipped steps included.
    pub losses: Vec<f64>,
    pub skipped: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    Skipped,
}

/// Exponential moving mean and variance of the log gradient norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipStats {
    pub mean: f64,
    pub var: f64,
    pub count: usize,
}

impl ClipStats {
    fn new() -> Self {
        ClipStats {
            mean: 0.0,
            var: 0.0,
            count: 0,
        }
    }

    pub fn std(&self) -> f64 {
        self.var.sqrt()
    }

    /// Returns false when `x` is an outlier. Outliers enter the statistics
    /// clamped to the acceptance bound, so a slow drift cannot lock training
    /// out while a single spike barely moves them.
    fn observe(&mut self, x: f64, sigma: f64, warmup: usize, decay: f64) -> bool {
        let bound = self.mean + sigma * self.std();
        let accept = self.count < warmup || x <= bound;
        let x = if accept { x } else { bound };
        if self.count == 0 {
            self.mean = x;
            self.var = 0.0;
        } else {
            let d = x - self.mean;
            self.mean += (1.0 - decay) * d;
            self.var = decay * (self.var + (1.0 - decay) * d * d);
        }
        self.count += 1;
        accept
    }
}

/// Trains from scratch and returns the final parameters.
pub fn train(
    params: NeuralParams,
    examples: &[TrainingExample],
    opts: &TrainOptions,
) -> Result<(NeuralParams, TrainReport)> {
    if examples.is_empty() {
        return Err(Error::invalid("no training examples"));
    }
    let mut t = Trainer::new(params, opts.clone());
    for _ in 0..opts.steps {
        t.step(examples)?;
    }
    Ok(t.finish())
}

pub struct Trainer {
    params: NeuralParams,
    opts: TrainOptions,
    m: Vec<f64>,
    v: Vec<f64>,
    updates: usize,
    clip: ClipStats,
    rng: ChaCha8Rng,
    report: TrainReport,
}

impl Trainer {
    pub fn new(params: NeuralParams, opts: TrainOptions) -> Self {
        let n = params.as_flat().len();
        Trainer {
            params,
            m: vec![0.0; n],
            v: vec![0.0; n],
            updates: 0,
            clip: ClipStats::new(),
            rng: ChaCha8Rng::seed_from_u64(opts.seed),
            opts,
            report: TrainReport::default(),
        }
    }

    pub fn params(&self) -> &NeuralParams {
        &self.params
    }

    pub fn report(&self) -> &TrainReport {
        &self.report
    }

    pub fn clip_stats(&self) -> ClipStats {
        self.clip
    }

    pub fn finish(self) -> (NeuralParams, TrainReport) {
        (self.params, self.report)
    }

    /// Loss and gradient on the next seeded minibatch.
    pub fn batch_gradients(&mut self, examples: &[TrainingExample]) -> (f64, Vec<f64>) {
        let b = self.opts.batch_size.max(1);
        let batch: Vec<&TrainingExample> = (0..b)
            .map(|_| &examples[self.rng.gen_range(0..examples.len())])
            .collect();
        loss_and_grad(&self.params, &batch)
    }

    pub fn step(&mut self, examples: &[TrainingExample]) -> Result<StepOutcome> {
        let (loss, grads) = self.batch_gradients(examples);
        self.apply_gradients(loss, &grads)
    }

    /// Runs the skip rule and, if the step survives, one Adam update.
    pub fn apply_gradients(&mut self, loss: f64, grads: &[f64]) -> Result<StepOutcome> {
        let step = self.report.losses.len();
        let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !loss.is_finite() || !norm.is_finite() {
            return Err(Error::NonFinite {
                step,
                loss,
                grad_norm: norm,
            });
        }
        self.report.losses.push(loss);
        let log_norm = norm.max(f64::MIN_POSITIVE).ln();
        let accept = self.clip.observe(
            log_norm,
            self.params.config().max_grad_sigma,
            self.opts.clip_warmup,
            self.opts.clip_decay,
        );
        if !accept {
            log::debug!("step {step}: skipped, log grad norm {log_norm:.3}");
            self.report.skipped.push(step);
            return Ok(StepOutcome::Skipped);
        }

        self.updates += 1;
        let o = &self.opts;
        let t = self.updates as f64;
        let lr = o.learning_rate * (t / o.warmup_steps.max(1) as f64).min(1.0);
        let c1 = 1.0 - o.beta1.powf(t);
        let c2 = 1.0 - o.beta2.powf(t);
        let p = self.params.as_flat_mut();
        for i in 0..p.len() {
            let g = grads[i];
            self.m[i] = o.beta1 * self.m[i] + (1.0 - o.beta1) * g;
            self.v[i] = o.beta2 * self.v[i] + (1.0 - o.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            p[i] -= lr * mh / (vh.sqrt() + o.adam_eps);
        }
        Ok(StepOutcome::Applied)
    }
}

/// Input tokens, target tokens, and the first position that is scored.
pub(crate) fn sequence(mode: ExampleMode, ex: &TrainingExample) -> (Vec<TokenId>, Vec<TokenId>, usize) {
    match mode {
        ExampleMode::LmA => {
            let mut inputs = vec![Special::Body.id()];
            inputs.extend_from_slice(&ex.target_ids[..ex.target_ids.len().saturating_sub(1)]);
            (inputs, ex.target_ids.clone(), 0)
        }
        ExampleMode::LmB => {
            let packed = ex
                .packed_ids
                .clone()
                .unwrap_or_else(|| pack(&ex.context, &ex.target_ids));
            let body_start = packed.len() - ex.target_ids.len();
            let inputs = packed[..packed.len() - 1].to_vec();
            let targets = packed[1..].to_vec();
            (inputs, targets, body_start - 1)
        }
    }
}

/// Mean label-smoothed cross-entropy per scored token.
pub fn loss(params: &NeuralParams, examples: &[&TrainingExample]) -> f64 {
    let eps = params.config().label_smoothing;
    let mut total = 0.0;
    let mut n = 0usize;
    for ex in examples {
        let ctx = params.encode_context(&ex.context);
        let (inputs, targets, first) = sequence(params.config().mode, ex);
        let mut s = StepState::zeros(params.config().hidden_dim);
        for (pos, (&x, &y)) in inputs.iter().zip(&targets).enumerate() {
            s = params.advance_step(&ctx, x, &s);
            if pos >= first {
                let d = params.output_step(&s);
                total += smoothed_ce(d.as_slice(), y, eps);
                n += 1;
            }
        }
    }
    total / n.max(1) as f64
}

fn smoothed_ce(logp: &[f64], target: TokenId, eps: f64) -> f64 {
    let v = logp.len() as f64;
    let mut sum = 0.0;
    for &l in logp {
        sum += l;
    }
    -(1.0 - eps) * logp[target as usize] - eps / v * sum
}

struct Frame {
    xh: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    c_prev: Vec<f64>,
    tanh_c: Vec<f64>,
    m: Vec<f64>,
}

/// Mean loss and its gradient with respect to every parameter.
pub fn loss_and_grad(params: &NeuralParams, examples: &[&TrainingExample]) -> (f64, Vec<f64>) {
    let cfg = params.config();
    let (h, e, v) = (cfg.hidden_dim, cfg.embed_dim, cfg.vocab_size);
    let in_dim = cfg.input_dim();
    let eps = cfg.label_smoothing;
    let r = &params.r;
    let data = params.as_flat();
    let lstm_w = &data[r.lstm_w.clone()];
    let lstm_b = &data[r.lstm_b.clone()];
    let out_w = &data[r.out_w.clone()];
    let out_b = &data[r.out_b.clone()];

    let scored: usize = examples
        .iter()
        .map(|ex| {
            let (inp, _, first) = sequence(cfg.mode, ex);
            inp.len() - first
        })
        .sum();
    let scale = 1.0 / scored.max(1) as f64;

    let mut grad = vec![0.0; data.len()];
    let mut total = 0.0;
    let mut logp = vec![0.0; v];
    let mut dz = vec![0.0; 4 * h];
    let mut dlogits = vec![0.0; v];

    for ex in examples {
        let ctx = params.encode_context(&ex.context);
        let (inputs, targets, first) = sequence(cfg.mode, ex);

        let mut frames: Vec<Frame> = Vec::with_capacity(inputs.len());
        let mut state = StepState::zeros(h);
        for &x in &inputs {
            let xh = params.step_input(&ctx, x, &state.m);
            let z = super::kernel::affine(&xh, lstm_w, lstm_b);
            let mut fr = Frame {
                xh,
                i: vec![0.0; h],
                f: vec![0.0; h],
                g: vec![0.0; h],
                o: vec![0.0; h],
                c_prev: state.c.clone(),
                tanh_c: vec![0.0; h],
                m: vec![0.0; h],
            };
            let mut c = vec![0.0; h];
            for j in 0..h {
                fr.i[j] = super::kernel::sigmoid(z[j]);
                fr.f[j] = super::kernel::sigmoid(z[h + j]);
                fr.g[j] = z[2 * h + j].tanh();
                fr.o[j] = super::kernel::sigmoid(z[3 * h + j]);
                c[j] = fr.f[j] * state.c[j] + fr.i[j] * fr.g[j];
                fr.tanh_c[j] = c[j].tanh();
                fr.m[j] = fr.o[j] * fr.tanh_c[j];
            }
            state = StepState {
                c,
                m: fr.m.clone(),
            };
            frames.push(fr);
        }

        let mut dm_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let mut dctx = vec![0.0; in_dim - e];
        for pos in (0..inputs.len()).rev() {
            let fr = &frames[pos];
            let mut dm = dm_next.clone();
            if pos >= first {
                let logits = super::kernel::affine(&fr.m, out_w, out_b);
                log_softmax_into(&logits, &mut logp);
                let y = targets[pos] as usize;
                total += smoothed_ce(&logp, targets[pos], eps);
                for j in 0..v {
                    let q = eps / v as f64 + if j == y { 1.0 - eps } else { 0.0 };
                    dlogits[j] = (logp[j].exp() - q) * scale;
                }
                outer_add(&fr.m, &dlogits, &mut grad[r.out_w.clone()]);
                for (g, &d) in grad[r.out_b.clone()].iter_mut().zip(&dlogits) {
                    *g += d;
                }
                backprop_input(out_w, &dlogits, &mut dm);
            }
            for j in 0..h {
                let dc = dm[j] * fr.o[j] * (1.0 - fr.tanh_c[j] * fr.tanh_c[j]) + dc_next[j];
                let d_o = dm[j] * fr.tanh_c[j];
                let di = dc * fr.g[j];
                let dg = dc * fr.i[j];
                let df = dc * fr.c_prev[j];
                dz[j] = di * fr.i[j] * (1.0 - fr.i[j]);
                dz[h + j] = df * fr.f[j] * (1.0 - fr.f[j]);
                dz[2 * h + j] = dg * (1.0 - fr.g[j] * fr.g[j]);
                dz[3 * h + j] = d_o * fr.o[j] * (1.0 - fr.o[j]);
                dc_next[j] = dc * fr.f[j];
            }
            outer_add(&fr.xh, &dz, &mut grad[r.lstm_w.clone()]);
            for (g, &d) in grad[r.lstm_b.clone()].iter_mut().zip(&dz) {
                *g += d;
            }
            let mut dxh = vec![0.0; in_dim + h];
            backprop_input(lstm_w, &dz, &mut dxh);
            let tok = inputs[pos] as usize;
            for (g, &d) in grad[r.embed.clone()][tok * e..(tok + 1) * e]
                .iter_mut()
                .zip(&dxh[..e])
            {
                *g += d;
            }
            for (a, &d) in dctx.iter_mut().zip(&dxh[e..in_dim]) {
                *a += d;
            }
            dm_next.copy_from_slice(&dxh[in_dim..]);
        }

        if cfg.mode == ExampleMode::LmA {
            let (d_subj, rest) = dctx.split_at(e);
            let (d_prev, d_cat) = rest.split_at(e);
            for (ids, d) in [(&ex.context.subject_ids, d_subj), (&ex.context.prev_body_ids, d_prev)] {
                let n = ids.len() as f64;
                for &t in ids.iter() {
                    let t = t as usize;
                    for (g, &dv) in grad[r.embed.clone()][t * e..(t + 1) * e].iter_mut().zip(d) {
                        *g += dv / n;
                    }
                }
            }
            let f = &ex.context;
            let lookups = [
                (&r.time, cfg.time_dim, f.time_bucket.index()),
                (&r.dow, cfg.dow_dim, f.day_of_week as usize % 7),
                (&r.month, cfg.month_dim, (f.month as usize).clamp(1, 12) - 1),
                (&r.locale, cfg.locale_dim, f.locale_id as usize % crate::corpus::NUM_LOCALES),
            ];
            let mut off = 0;
            for (range, dim, row) in lookups {
                let g = &mut grad[range.clone()][row * dim..(row + 1) * dim];
                for (gv, &dv) in g.iter_mut().zip(&d_cat[off..off + dim]) {
                    *gv += dv;
                }
                off += dim;
            }
        }
    }
    (total * scale, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ContextFeatures;
    use crate::neural::NeuralConfig;

    fn cfg(mode: ExampleMode) -> NeuralConfig {
        NeuralConfig {
            embed_dim: 6,
            hidden_dim: 10,
            time_dim: 2,
            dow_dim: 2,
            month_dim: 2,
            locale_dim: 2,
            ..NeuralConfig::new(20, mode)
        }
    }

    fn example(subject: Vec<TokenId>, body: Vec<TokenId>, mode: ExampleMode) -> TrainingExample {
        let context = ContextFeatures::new(subject, vec![], 0, None, "en-US");
        let mut target_ids = body;
        target_ids.push(Special::Eos.id());
        let packed_ids = (mode == ExampleMode::LmB).then(|| pack(&context, &target_ids));
        TrainingExample {
            context,
            target_ids,
            packed_ids,
        }
    }

    fn corpus(mode: ExampleMode) -> Vec<TrainingExample> {
        (0..10)
            .map(|i| example(vec![10 + i % 3], vec![11 + i % 5, 12, 13 + i % 4], mode))
            .collect()
    }

    #[test]
    fn lm_b_scores_body_positions_only() {
        let ex = example(vec![15], vec![11, 12], ExampleMode::LmB);
        let (inputs, targets, first) = sequence(ExampleMode::LmB, &ex);
        assert_eq!(inputs[first], Special::Body.id());
        assert_eq!(&targets[first..], &ex.target_ids[..]);
    }

    #[test]
    fn loss_matches_loss_and_grad() {
        for mode in [ExampleMode::LmA, ExampleMode::LmB] {
            let p = NeuralParams::init(cfg(mode), 2).unwrap();
            let data = corpus(mode);
            let refs: Vec<&TrainingExample> = data.iter().collect();
            let (l, _) = loss_and_grad(&p, &refs);
            assert!((l - loss(&p, &refs)).abs() < 1e-12);
        }
    }

    #[test]
    fn training_lowers_loss() {
        for mode in [ExampleMode::LmA, ExampleMode::LmB] {
            let p = NeuralParams::init(cfg(mode), 2).unwrap();
            let data = corpus(mode);
            let opts = TrainOptions {
                steps: 200,
                ..TrainOptions::default()
            };
            let (trained, report) = train(p.clone(), &data, &opts).unwrap();
            let refs: Vec<&TrainingExample> = data.iter().collect();
            assert!(loss(&trained, &refs) < loss(&p, &refs));
            assert_eq!(report.losses.len(), 200);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let data = corpus(ExampleMode::LmA);
        let opts = TrainOptions {
            steps: 30,
            ..TrainOptions::default()
        };
        let run = || train(NeuralParams::init(cfg(ExampleMode::LmA), 4).unwrap(), &data, &opts).unwrap();
        assert_eq!(run().0, run().0);
    }

    #[test]
    fn giant_gradient_is_skipped() {
        let data = corpus(ExampleMode::LmA);
        let p = NeuralParams::init(cfg(ExampleMode::LmA), 5).unwrap();
        let mut t = Trainer::new(p, TrainOptions::default());
        for _ in 0..150 {
            t.step(&data).unwrap();
        }
        let before = t.params().clone();
        let (l, mut g) = t.batch_gradients(&data);
        for x in &mut g {
            *x *= 1e6;
        }
        assert_eq!(t.apply_gradients(l, &g).unwrap(), StepOutcome::Skipped);
        assert_eq!(t.params(), &before);
        assert_eq!(t.report().skipped.last(), Some(&150));
        assert_eq!(t.step(&data).unwrap(), StepOutcome::Applied);
    }

    #[test]
    fn non_finite_loss_aborts() {
        let p = NeuralParams::init(cfg(ExampleMode::LmA), 5).unwrap();
        let n = p.as_flat().len();
        let mut t = Trainer::new(p, TrainOptions::default());
        let err = t.apply_gradients(f64::NAN, &vec![0.0; n]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { step: 0, .. }));
    }

    #[test]
    fn smoothed_loss_bounded_by_target_entropy() {
        let p = NeuralParams::init(cfg(ExampleMode::LmA), 8).unwrap();
        let data = corpus(ExampleMode::LmA);
        let refs: Vec<&TrainingExample> = data.iter().collect();
        let eps = p.config().label_smoothing;
        let v = p.config().vocab_size as f64;
        let (hi, lo) = (1.0 - eps + eps / v, eps / v);
        let entropy = -hi * hi.ln() - (v - 1.0) * lo * lo.ln();
        assert!(loss(&p, &refs) >= entropy);
    }
}
