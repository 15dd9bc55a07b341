//! Acceptance checks, one line per criterion. Runs without the test harness
//! so every verdict is printed; exits non-zero if any check fails.
//!
//! Pass substrings as arguments to run a subset, e.g.
//! `cargo test --test acceptance -- katz beam`.

// `ensure!` negates float comparisons so NaN fails the check
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod support;

use std::collections::{BTreeSet, HashSet};
use std::panic::{self, AssertUnwindSafe};
use std::sync::{Arc, Mutex, OnceLock};
use std::thread;
use std::time::{Duration, Instant};

use compose_core::corpus::{
    split_partial, tokenize, ContextFeatures, ExampleMode, TrainingExample,
};
use compose_core::decoder::{beam_search, BeamConfig, Decoder, TokenFilter, DEFAULT_BLOCKED_WORDS};
use compose_core::eval::{
    alpha_sweep, calibrate, coverage_at, log_perplexity, opportunities_for, sweep_decoder, sweep_table,
    LENGTH_BUCKETS,
};
use compose_core::neural::{grad_check, NeuralParams, GROUP_NAMES};
use compose_core::ngram::{estimate_katz, parse_arpa, serialize_arpa, CountTable, START};
use compose_core::personal::{
    blend, train_personal, BlendedModel, InterpolationConfig, PersonalModel, PersonalOptions, PersonalStore,
};
use compose_core::service::{
    run_bench, BenchConfig, OpenRequest, Service, ServiceConfig, SuggestRequest, SuggestResponse, TypingScript,
};
use compose_core::synth::{user_corpus, THANKS_REPLY, TOPICS};
use compose_core::{Distribution, LanguageModel, Special, TokenId};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use support::beam_oracle::{brute_force, TableModel};
use support::katz_oracle::{KatzOracle, PAD};
use support::world::{blank_context, clean, examples, lm_a, lm_b, train_model, world};

type Outcome = Result<String, String>;
type Check = fn() -> Outcome;
type Setup<'a> = (&'a str, Arc<NeuralParams>, Option<PersonalStore>, Option<&'a str>);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

// ---------------------------------------------------------------- n-grams

/// Random corpus: sentences of skewed token draws over `vocab` symbols.
fn random_corpus(rng: &mut ChaCha8Rng, vocab: usize, max_tokens: usize) -> Vec<Vec<TokenId>> {
    let words: Vec<TokenId> = (Special::Eos.id() + 1..vocab as TokenId).collect();
    let budget = rng.gen_range(10..=max_tokens);
    let mut out = Vec::new();
    let mut used = 0;
    while used < budget {
        let len = rng.gen_range(1..=8).min(budget - used);
        let s: Vec<TokenId> = (0..len)
            .map(|_| {
                let u: f64 = rng.gen();
                words[((u * u) * words.len() as f64) as usize]
            })
            .collect();
        used += s.len();
        out.push(s);
    }
    out
}

fn symbols(vocab: usize) -> Vec<String> {
    (0..vocab)
        .map(|i| match Special::from_id(i as TokenId) {
            Some(sp) => sp.as_str().to_string(),
            None => format!("w{i}"),
        })
        .collect()
}

fn katz_oracle() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut compared, mut states, mut gt_orders, mut abs_orders) = (0usize, 0usize, 0usize, 0usize);
    for case in 0..20 {
        let vocab = rng.gen_range(5..=12);
        let n = rng.gen_range(1..=3);
        let corpus = random_corpus(&mut rng, vocab, 200);
        let table = CountTable::from_sentences(corpus.iter().map(Vec::as_slice), n);
        let (aut, report) = estimate_katz(&table, &symbols(vocab), 5).map_err(|e| e.to_string())?;
        let oracle = KatzOracle::new(&corpus, n, vocab, Special::Eos.id());
        for (k, o) in report.orders.iter().enumerate() {
            ensure!(
                o.fell_back() != oracle.good_turing_order(k + 1),
                "case {case}: order {} discount choice differs",
                k + 1
            );
            if o.fell_back() {
                abs_orders += 1;
            } else {
                gt_orders += 1;
            }
        }
        let mut histories = oracle.histories();
        for _ in 0..20 {
            let pad = rng.gen_range(0..n);
            let len = rng.gen_range(0..=4);
            let mut h = vec![PAD; pad];
            h.extend((0..len).map(|_| rng.gen_range(0..vocab as TokenId)));
            histories.push(h);
        }
        for h in &histories {
            let h: Vec<TokenId> = h.iter().map(|&t| if t == PAD { START } else { t }).collect();
            for w in 0..vocab as TokenId {
                let p = oracle.prob(&h, w);
                let want = if p > 0.0 { p.log10().max(-99.0) } else { -99.0 };
                let got = aut.score(&h, w);
                ensure!(
                    (got - want).abs() <= 1e-9,
                    "case {case} (n={n}, V={vocab}): score({h:?}, {w}) = {got}, formula gives {want}"
                );
                compared += 1;
            }
        }
        for s in 0..aut.num_states() as u32 {
            let mass = aut.full_distribution(s).mass();
            ensure!((mass - 1.0).abs() <= 1e-6, "case {case}: state {s} sums to {mass}");
            states += 1;
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure!(secs < 10.0, "took {secs:.1}s (limit 10s)");
    Ok(format!(
        "{compared} scores match the formula to 1e-9, {states} states normalized; \
         {gt_orders} Good-Turing / {abs_orders} fallback orders; {secs:.2}s"
    ))
}

fn arpa_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut bytes = 0;
    for case in 0..10 {
        let vocab = rng.gen_range(6..=30);
        let n = 1 + case % 4;
        let corpus = random_corpus(&mut rng, vocab, 2000);
        let table = CountTable::from_sentences(corpus.iter().map(Vec::as_slice), n);
        let (aut, _) = estimate_katz(&table, &symbols(vocab), 5).map_err(|e| e.to_string())?;
        let first = serialize_arpa(&aut);
        let parsed = parse_arpa(&first).map_err(|e| format!("case {case}: {e}"))?;
        let second = serialize_arpa(&parsed);
        ensure!(first == second, "case {case}: second serialization differs");
        bytes += first.len();
    }
    Ok(format!("10 models (orders 1-4), {bytes} bytes, byte-identical after a cycle"))
}

// ---------------------------------------------------------------- decoder

fn beam_vs_exhaustive() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..100u64 {
        let model = TableModel { vocab: 6, seed: case };
        let mut end: Vec<TokenId> = vec![rng.gen_range(0..6)];
        if rng.gen_bool(0.5) {
            end.push(rng.gen_range(0..6));
        }
        let cfg = BeamConfig {
            beam_size: 6usize.pow(4),
            expansion: 6,
            max_len: 4,
            end_tokens: end.clone(),
            threshold: f64::NEG_INFINITY,
            n_best: 1,
        };
        let hyps = beam_search(&model, &Vec::new(), &cfg, &[false; 6], |_| true);
        let (want, score) = brute_force(&model, 4, &end);
        let top = hyps.first().ok_or(format!("case {case}: no hypothesis"))?;
        ensure!(
            top.tokens == want,
            "case {case}: beam chose {:?} ({}), exhaustive {want:?} ({score})",
            top.tokens,
            top.confidence()
        );
        ensure!((top.confidence() - score).abs() <= 1e-12, "case {case}: confidence differs");
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure!(secs < 5.0, "took {secs:.1}s (limit 5s)");
    Ok(format!("100 tables agree with brute force; {secs:.2}s"))
}

// ---------------------------------------------------------------- neural

fn gradient_check() -> Outcome {
    let t0 = Instant::now();
    let report = grad_check(1).map_err(|e| e.to_string())?;
    let secs = t0.elapsed().as_secs_f64();
    let names: BTreeSet<&str> = report.groups.iter().map(|g| g.name.as_str()).collect();
    ensure!(
        names == GROUP_NAMES.iter().copied().collect(),
        "groups checked: {names:?}"
    );
    for g in &report.groups {
        ensure!(g.checked > 0, "group {} had no samples", g.name);
        ensure!(g.max_rel_error < 1e-4, "group {} max relative error {:e}", g.name, g.max_rel_error);
    }
    ensure!(secs < 30.0, "took {secs:.1}s (limit 30s)");
    Ok(format!(
        "{} groups, {} coordinates, max relative error {:.2e}; {secs:.2}s",
        report.groups.len(),
        report.checked(),
        report.max_rel_error
    ))
}

fn context_effect() -> Outcome {
    let w = world();
    let train = examples(&w.train, ExampleMode::LmA);
    let held = examples(&w.heldout, ExampleMode::LmA);
    let with_ctx = lm_a();
    let (without, _) = train_model(ExampleMode::LmA, &blank_context(&train), 5);
    let score = |m: &NeuralParams, held: &[TrainingExample]| {
        let items: Vec<_> = held.iter().map(|e| (m.start(&e.context), e.target_ids.clone())).collect();
        log_perplexity(m, &items).map(f64::exp).map_err(|e| e.to_string())
    };
    let ppl_ctx = score(&with_ctx, &held)?;
    let ppl_none = score(&without, &blank_context(&held))?;
    let gain = 1.0 - ppl_ctx / ppl_none;
    ensure!(
        gain >= 0.05,
        "perplexity with context {ppl_ctx:.4}, without {ppl_none:.4}: only {:.1}% lower",
        gain * 100.0
    );
    Ok(format!(
        "held-out perplexity {ppl_ctx:.3} with context vs {ppl_none:.3} without ({:.1}% lower)",
        gain * 100.0
    ))
}

// ---------------------------------------------------------------- personalization

fn random_dist(rng: &mut ChaCha8Rng, n: usize) -> Distribution {
    let logits: Vec<f64> = (0..n).map(|_| rng.gen_range(-6.0..6.0)).collect();
    Distribution::log_softmax(&logits)
}

fn same_bits(a: &Distribution, b: &Distribution) -> bool {
    a.len() == b.len()
        && a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits())
}

struct User {
    model: PersonalModel,
    opportunities: Vec<compose_core::eval::Opportunity>,
}

fn sweep_users() -> &'static Vec<User> {
    static U: OnceLock<Vec<User>> = OnceLock::new();
    U.get_or_init(|| {
        let w = world();
        (0..4)
            .map(|u| {
                let msgs = clean(&user_corpus(u % 2, 160, 100 + u as u64));
                let (train, test) = msgs.split_at(120);
                let model =
                    train_personal(&format!("user{u}"), train, &w.vocab, &PersonalOptions::default(), 0).unwrap();
                let with_ctx: Vec<_> = test
                    .iter()
                    .map(|m| {
                        let e = TrainingExample::from_message(m, &w.vocab, ExampleMode::LmA, 100);
                        (m.clone(), e.context)
                    })
                    .collect();
                let opportunities = opportunities_for(&with_ctx, u as u64, 15);
                User { model, opportunities }
            })
            .collect()
    })
}

fn interpolation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let n = rng.gen_range(1..60);
        let (g, p) = (random_dist(&mut rng, n), random_dist(&mut rng, n));
        let at = |a: f64| blend(&g, &p, &InterpolationConfig::new(a).unwrap()).unwrap();
        ensure!(same_bits(&at(0.0), &g), "alpha 0 is not the global distribution");
        ensure!(same_bits(&at(1.0), &p), "alpha 1 is not the personal distribution");
        let mass = at(rng.gen_range(0.0..1.0)).mass();
        worst = worst.max((mass - 1.0).abs());
    }
    ensure!(worst <= 1e-6, "blend mass off by {worst:e}");

    // endpoints through the model, on real states
    let global = lm_a();
    let users = sweep_users();
    let aut = users[0].model.automaton.as_ref().ok_or("user model inactive")?;
    let union = &users[0].model.union_vocab;
    let ids = compose_core::corpus::encode(union, ["please", "see", "the"]);
    for alpha in [0.0, 1.0] {
        let cfg = InterpolationConfig::new(alpha).unwrap();
        let model = BlendedModel::new(&*global, aut, cfg).map_err(|e| e.to_string())?;
        let s0 = model.initial_state(global.start(&ContextFeatures::empty()));
        let s = model.advance_all(&s0, &ids);
        let got = model.output(&s);
        let want = if alpha == 1.0 {
            aut.full_distribution(s.1)
        } else {
            compose_core::personal::pad_distribution(global.output(&s.0), union.len(), cfg.oov_epsilon)
        };
        ensure!(same_bits(&got, &want), "blended model at alpha {alpha} is not its endpoint");
    }

    let su: Vec<_> = users
        .iter()
        .map(|u| compose_core::eval::SweepUser {
            automaton: u.model.automaton.as_ref().unwrap(),
            union: &u.model.union_vocab,
            opportunities: &u.opportunities,
        })
        .collect();
    let alphas = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
    let decoder = sweep_decoder(BeamConfig::new(&world().vocab));
    let rows = alpha_sweep(&*global, |c| global.start(c), &su, &decoder, &alphas, 0.9).map_err(|e| e.to_string())?;
    print!("{}", indent(&sweep_table(&rows)));
    let em0 = rows[0].exact_match;
    let em1 = rows[rows.len() - 1].exact_match;
    let best = rows[1..rows.len() - 1]
        .iter()
        .max_by(|a, b| a.exact_match.total_cmp(&b.exact_match))
        .unwrap();
    ensure!(
        best.exact_match > em0 && best.exact_match > em1,
        "no interior maximum: EM(0)={em0:.2}, EM(1)={em1:.2}, best interior {:.2} at {}",
        best.exact_match,
        best.alpha
    );
    Ok(format!(
        "endpoints bit-exact, mass within {worst:.1e}; EM peaks at alpha {} ({:.2}) over EM(0)={em0:.2}, EM(1)={em1:.2}",
        best.alpha, best.exact_match
    ))
}

fn indent(s: &str) -> String {
    s.lines().map(|l| format!("        {l}\n")).collect()
}

// ---------------------------------------------------------------- evaluation

fn calibration() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let n = rng.gen_range(200..=2000);
        let conf: Vec<f64> = (0..n).map(|_| rng.gen_range(-4.0..0.0)).collect();
        let target: f64 = rng.gen_range(0.01..0.99);
        let thr = calibrate(&conf, target);
        let achieved = coverage_at(&conf, thr);
        let err = (achieved - target).abs() * n as f64;
        ensure!(err <= 1.0 + 1e-9, "case {case}: target {target}, achieved {achieved} on {n} samples");
        worst = worst.max(err);
        let mut thresholds: Vec<f64> = (0..50).map(|_| rng.gen_range(-5.0..1.0)).collect();
        thresholds.sort_by(f64::total_cmp);
        let covs: Vec<f64> = thresholds.iter().map(|&t| coverage_at(&conf, t)).collect();
        ensure!(covs.windows(2).all(|w| w[1] <= w[0]), "case {case}: coverage rises with threshold");
    }
    Ok(format!("100 dev sets of 200-2000: worst miss {worst:.2} samples; coverage monotone"))
}

// ---------------------------------------------------------------- service

fn service(params: Arc<NeuralParams>, store: Option<PersonalStore>, batch: usize) -> Service {
    let vocab = world().vocab.clone();
    let mut cfg = ServiceConfig::new(&vocab);
    cfg.batch_size = batch;
    Service::new(params, vocab, store, cfg).unwrap()
}

fn personal_store() -> (tempfile::TempDir, PersonalStore) {
    let dir = tempfile::tempdir().unwrap();
    let store = PersonalStore::new(dir.path());
    store.save(sweep_users()[0].model.clone()).unwrap();
    (dir, store)
}

fn random_open(rng: &mut ChaCha8Rng, user: Option<&str>) -> OpenRequest {
    let (subject, _) = TOPICS.choose(rng).unwrap();
    OpenRequest {
        subject: subject.to_string(),
        previous_body: rng.gen_bool(0.2).then(|| THANKS_REPLY.0.to_string()),
        timestamp: rng.gen_range(1_704_067_200..1_735_689_600),
        locale: "en-US".into(),
        utc_offset_minutes: None,
        user: user.map(str::to_string),
    }
}

/// A keystroke: typed text, a deletion, or accepting the last suggestion.
fn edit(rng: &mut ChaCha8Rng, text: &mut String, last: Option<&SuggestResponse>, words: &[String]) {
    match rng.gen_range(0..10) {
        0..=4 => {
            let w = words.choose(rng).unwrap();
            let take = rng.gen_range(1..=w.chars().count());
            let space = if text.is_empty() || text.ends_with(' ') { "" } else { " " };
            text.push_str(space);
            text.extend(w.chars().take(take));
        }
        5 => text.push(*[' ', ',', '.', '?'].choose(rng).unwrap()),
        6..=7 => {
            let drop = rng.gen_range(1..=12);
            let keep = text.chars().count().saturating_sub(drop);
            *text = text.chars().take(keep).collect();
        }
        _ => {
            if let Some(r) = last.filter(|r| r.triggered) {
                text.push_str(&r.suggestion);
            }
        }
    }
}

fn fuzz_words() -> Vec<String> {
    world().vocab.regular_tokens().to_vec()
}

fn cache_equivalence() -> Outcome {
    let t0 = Instant::now();
    let (_dir, store) = personal_store();
    let words = fuzz_words();
    let setups: [Setup; 3] = [
        ("LM-A", lm_a(), None, None),
        ("LM-B", lm_b(), None, None),
        ("LM-A + personal", lm_a(), Some(store), Some("user0")),
    ];
    let mut summary = Vec::new();
    for (si, (name, params, store, user)) in setups.into_iter().enumerate() {
        let svc = service(params, store, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(400 + si as u64);
        let (mut responses, mut reused) = (0usize, 0usize);
        for script in 0..1000 {
            let open = random_open(&mut rng, user);
            let live = svc.open(&open).map_err(|e| e.to_string())?;
            let mut text = String::new();
            let mut last: Option<SuggestResponse> = None;
            for seq in 1..=rng.gen_range(3..=7u64) {
                edit(&mut rng, &mut text, last.as_ref(), &words);
                let streamed = svc
                    .suggest(&SuggestRequest { session: live.clone(), seq, prefix: text.clone() })
                    .map_err(|e| e.to_string())?
                    .ok_or("fresh seq dropped")?;
                let cold_id = svc.open(&open).map_err(|e| e.to_string())?;
                let cold = svc
                    .suggest(&SuggestRequest { session: cold_id.clone(), seq: 1, prefix: text.clone() })
                    .map_err(|e| e.to_string())?
                    .ok_or("fresh seq dropped")?;
                svc.close(&cold_id);
                ensure!(
                    streamed.same_result(&cold),
                    "{name}, script {script}, prefix {text:?}: streamed {streamed:?} vs cold {cold:?}"
                );
                if streamed.encode_steps < cold.encode_steps {
                    reused += 1;
                }
                responses += 1;
                last = Some(streamed);
            }
            svc.close(&live);
        }
        summary.push(format!("{name} {responses} ({reused} reused checkpoints)"));
    }
    Ok(format!("1000 scripts per model, all bit-identical: {}; {:.1}s", summary.join(", "), t0.elapsed().as_secs_f64()))
}

fn typing_workload(seed: u64, sessions: usize) -> Vec<(OpenRequest, Vec<String>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words = fuzz_words();
    (0..sessions)
        .map(|_| {
            let open = random_open(&mut rng, None);
            let mut text = String::new();
            let prefixes = (0..6)
                .map(|_| {
                    edit(&mut rng, &mut text, None, &words);
                    text.clone()
                })
                .collect();
            (open, prefixes)
        })
        .collect()
}

fn run_workload(svc: &Service, work: &[(OpenRequest, Vec<String>)], concurrent: bool) -> Vec<Vec<SuggestResponse>> {
    let one = |(open, prefixes): &(OpenRequest, Vec<String>), jitter: u64| {
        thread::sleep(Duration::from_micros(jitter));
        let id = svc.open(open).unwrap();
        let out: Vec<SuggestResponse> = prefixes
            .iter()
            .enumerate()
            .map(|(i, p)| {
                svc.suggest(&SuggestRequest { session: id.clone(), seq: i as u64 + 1, prefix: p.clone() })
                    .unwrap()
                    .unwrap()
            })
            .collect();
        svc.close(&id);
        out
    };
    if !concurrent {
        return work.iter().map(|w| one(w, 0)).collect();
    }
    thread::scope(|s| {
        let handles: Vec<_> = work
            .iter()
            .enumerate()
            .map(|(i, w)| s.spawn(move || one(w, (i as u64 * 7919) % 3000)))
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    })
}

fn batch_equivalence() -> Outcome {
    let mut notes = Vec::new();
    for (round, params) in [lm_a(), lm_b()].into_iter().enumerate() {
        let work = typing_workload(900 + round as u64, 8);
        let serial = run_workload(&service(params.clone(), None, 1), &work, false);
        for b in [2, 4, 16] {
            let svc = service(params.clone(), None, b);
            let got = run_workload(&svc, &work, true);
            for (si, (g, s)) in got.iter().zip(&serial).enumerate() {
                for (g, s) in g.iter().zip(s) {
                    ensure!(g.same_result(s), "B={b}, session {si}, seq {}: {g:?} vs serial {s:?}", g.seq);
                }
            }
            let stats = svc.batch_stats().ok_or("batcher not running")?;
            let (batches, jobs) = (stats.batches.load(std::sync::atomic::Ordering::Relaxed), stats.jobs.load(std::sync::atomic::Ordering::Relaxed));
            ensure!(batches > 0, "B={b}: no batched kernel calls");
            notes.push(format!("B={b}: {:.2} rows/{:.2} jobs per call", stats.mean_rows(), jobs as f64 / batches as f64));
        }
    }
    Ok(format!("LM-A and LM-B, 8 concurrent sessions, bit-identical to serial; {}", notes.join(", ")))
}

// ---------------------------------------------------------------- filter + partial words

struct FuzzRun {
    suggestions: Vec<(String, String)>,
    unfiltered_blocked: usize,
}

fn filter_fuzz() -> &'static FuzzRun {
    static R: OnceLock<FuzzRun> = OnceLock::new();
    R.get_or_init(|| {
        let w = world();
        let model = lm_a();
        let decoder = Decoder::new(&w.vocab, BeamConfig::new(&w.vocab), TokenFilter::new(&w.vocab, [])).unwrap();
        let mut structural = vec![false; w.vocab.len()];
        for sp in [Special::Pad, Special::Unk, Special::Subj, Special::Prev, Special::Body] {
            structural[sp.id() as usize] = true;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let mut suggestions = Vec::new();
        let mut unfiltered_blocked = 0;
        let mut attempts = 0;
        while suggestions.len() < 10_000 {
            attempts += 1;
            let msg = w.heldout.choose(&mut rng).unwrap();
            let ex = TrainingExample::from_message(msg, &w.vocab, ExampleMode::LmA, 100);
            let body: Vec<&str> = msg.body_tokens().collect();
            let cut = rng.gen_range(0..=body.len());
            let mut prefix: Vec<String> = body[..cut].iter().map(|s| s.to_string()).collect();
            if rng.gen_bool(0.2) {
                prefix.push(w.vocab.regular_tokens().choose(&mut rng).unwrap().clone());
            }
            let partial = match body.get(cut) {
                Some(next) if rng.gen_bool(0.5) => {
                    let n = rng.gen_range(1..=next.chars().count());
                    next.chars().take(n).collect()
                }
                _ => String::new(),
            };
            let start = model.advance_all(
                &model.start(&ex.context),
                &compose_core::corpus::encode(&w.vocab, prefix.iter().map(String::as_str)),
            );
            if attempts <= 2000 {
                let raw = beam_search(&*model, &start, &decoder.cfg, &structural, |d| {
                    match compose_core::decoder::constrain_first_step(d, &partial, &w.vocab) {
                        Some(c) => {
                            *d = c;
                            true
                        }
                        None => false,
                    }
                });
                if raw.first().is_some_and(|h| has_blocked(&compose_core::decoder::detokenize(&w.vocab, &h.tokens))) {
                    unfiltered_blocked += 1;
                }
            }
            if let Some(s) = decoder.suggest(&*model, &start, &partial, &w.vocab).into_iter().next() {
                suggestions.push((partial, s.text));
            }
        }
        FuzzRun { suggestions, unfiltered_blocked }
    })
}

fn has_blocked(text: &str) -> bool {
    let specials: HashSet<&str> = Special::NORMALIZATION.iter().map(|s| s.as_str()).collect();
    tokenize(text).iter().any(|t| {
        DEFAULT_BLOCKED_WORDS.contains(&t.to_lowercase().as_str()) || specials.contains(t.as_str())
    })
}

fn filter_guarantee() -> Outcome {
    let run = filter_fuzz();
    let bad: Vec<&String> = run.suggestions.iter().map(|s| &s.1).filter(|t| has_blocked(t)).collect();
    ensure!(bad.is_empty(), "{} blocked suggestions, e.g. {:?}", bad.len(), bad[0]);
    ensure!(
        run.unfiltered_blocked > 0,
        "vacuous: the model never wanted a blocked word in the sampled prefixes"
    );
    Ok(format!(
        "{} suggestions, none blocked (unfiltered top choice was blocked {} times in the first 2000 prefixes)",
        run.suggestions.len(),
        run.unfiltered_blocked
    ))
}

fn partial_word() -> Outcome {
    let run = filter_fuzz();
    let mut mid = 0;
    for (partial, text) in &run.suggestions {
        ensure!(text.starts_with(partial.as_str()), "suggestion {text:?} does not extend {partial:?}");
        if !partial.is_empty() {
            mid += 1;
        }
    }
    ensure!(mid > 0, "no mid-word prefixes were sampled");

    let svc = service(lm_a(), None, 1);
    let id = svc
        .open(&OpenRequest {
            subject: "Re: new laptop".into(),
            previous_body: Some(THANKS_REPLY.0.into()),
            locale: "en-US".into(),
            ..Default::default()
        })
        .map_err(|e| e.to_string())?;
    let r = svc
        .suggest(&SuggestRequest { session: id, seq: 1, prefix: "Y".into() })
        .map_err(|e| e.to_string())?
        .ok_or("dropped")?;
    let (_, partial) = split_partial("Y");
    ensure!(partial == "Y", "fixture prefix not partial");
    ensure!(
        r.triggered && r.suggestion.starts_with("ou're"),
        "fixture: \"Y\" after {:?} gave {r:?}",
        THANKS_REPLY.0
    );
    Ok(format!(
        "{} suggestions extend their partial word ({mid} mid-word); \"Y\" -> {:?}",
        run.suggestions.len(),
        r.suggestion
    ))
}

// ---------------------------------------------------------------- latency

fn latency_report() -> Outcome {
    let w = world();
    let scripts: Vec<TypingScript> = w
        .heldout
        .iter()
        .take(8)
        .map(|m| {
            let raw = m.to_raw();
            TypingScript {
                open: OpenRequest {
                    subject: raw.subject,
                    timestamp: raw.timestamp,
                    locale: raw.locale,
                    ..Default::default()
                },
                body: raw.body.replace('\n', " "),
            }
        })
        .collect();
    let base = ServiceConfig::new(&w.vocab);
    let report = run_bench(lm_a(), &w.vocab, None, &base, &scripts, &BenchConfig::defaults(16))
        .map_err(|e| e.to_string())?;
    let text = report.to_text();
    print!("{}", indent(&text));
    ensure!(report.rows.len() == 3, "expected 3 configurations");
    ensure!(report.rows[0].per_step_relative == 1.0, "baseline is not 1.00");
    for r in &report.rows {
        ensure!(r.per_step_us.is_finite() && r.per_step_us > 0.0, "{}: no per-step latency", r.name);
        ensure!(r.bucket_us.len() == LENGTH_BUCKETS.len(), "{}: bucket count", r.name);
        ensure!(r.bucket_us.iter().any(Option::is_some), "{}: every length bucket empty", r.name);
        ensure!(r.p90_us.is_finite(), "{}: no p90", r.name);
    }
    ensure!(text.contains("per-step") && text.contains("p90"), "report lacks its columns");
    Ok(format!(
        "{} requests per configuration; p90 {:.0} us unbatched, {:.0} us batched (informational)",
        report.rows[0].requests, report.rows[0].p90_us, report.rows[1].p90_us
    ))
}

// ---------------------------------------------------------------- runner

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let checks: [(&str, Check); 12] = [
        ("katz_oracle", katz_oracle),
        ("arpa_round_trip", arpa_round_trip),
        ("beam_vs_exhaustive", beam_vs_exhaustive),
        ("gradient_check", gradient_check),
        ("context_effect", context_effect),
        ("interpolation", interpolation),
        ("calibration", calibration),
        ("cache_equivalence", cache_equivalence),
        ("batch_equivalence", batch_equivalence),
        ("filter_guarantee", filter_guarantee),
        ("partial_word", partial_word),
        ("latency_report", latency_report),
    ];
    panic::set_hook(Box::new(|_| {}));
    let failures = Mutex::new(Vec::new());
    let mut ran = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let t0 = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS [{:02}] {name} ({secs:.1}s): {detail}", i + 1),
            Err(why) => {
                println!("FAIL [{:02}] {name} ({secs:.1}s): {why}", i + 1);
                failures.lock().unwrap().push(*name);
            }
        }
    }
    let failures = failures.into_inner().unwrap();
    println!("acceptance: {} passed, {} failed", ran - failures.len(), failures.len());
    if !failures.is_empty() {
        std::process::exit(1);
    }
}
