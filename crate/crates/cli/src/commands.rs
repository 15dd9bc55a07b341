use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use compose_core::corpus::{
    build_word_vocab, build_wordpiece_vocab, count_tokens, make_examples, read_jsonl, write_jsonl, CleanMessage,
    ExampleMode, Preprocessor, RawMessage,
};
use compose_core::decoder::{BeamConfig, Decoder, TokenFilter};
use compose_core::eval::{alpha_sweep, evaluate, opportunities_for, sweep_table, with_contexts, SweepUser, Threshold};
use compose_core::neural::{grad_check, train, NeuralConfig, NeuralParams, TrainOptions};
use compose_core::ngram::{estimate_katz, parse_arpa, serialize_arpa, CountTable, DEFAULT_CUTOFF};
use compose_core::personal::{
    personal_sentences, train_personal, BlendedModel, InterpolationConfig, PersonalModel, PersonalOptions,
    PersonalStore,
};
use compose_core::service::{
    run_bench, serve, BenchConfig, OpenRequest, Service, ServiceConfig, SuggestRequest, TypingScript,
};
use compose_core::synth::{topic_corpus, user_corpus, STYLES};
use compose_core::{Error, LanguageModel, Vocabulary};

use crate::args::*;
use crate::{CheckFailed, UsageError};

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Corpus(CorpusCmd::Preprocess(a)) => preprocess(a),
        Command::Corpus(CorpusCmd::Vocab(a)) => vocab(a),
        Command::Corpus(CorpusCmd::Synth(a)) => synth(a),
        Command::Ngram(NgramCmd::Train(a)) => ngram_train(a),
        Command::Neural(NeuralCmd::Train(a)) => neural_train(a),
        Command::Neural(NeuralCmd::Gradcheck(a)) => gradcheck(a),
        Command::Personal(PersonalCmd::Train(a)) => personal_train(a),
        Command::Eval(a) => eval(a),
        Command::SweepAlpha(a) => sweep_alpha(a),
        Command::Serve(a) => serve_cmd(a),
        Command::Suggest(a) => suggest(a),
        Command::Bench(a) => bench(a),
    }
}

// ---------------------------------------------------------------- plumbing

fn require_file(flag: &str, path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(UsageError(format!("--{flag}: {} is not a readable file", path.display())).into());
    }
    Ok(())
}

fn require_dir(flag: &str, path: &Path) -> Result<()> {
    if !path.is_dir() {
        return Err(UsageError(format!("--{flag}: {} is not a directory", path.display())).into());
    }
    Ok(())
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn read_records<T: for<'de> serde::Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_jsonl(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

fn write_records<T: serde::Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut w = create(path)?;
    write_jsonl(&mut w, records)?;
    w.flush()?;
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn load_vocab(path: &Path) -> Result<Vocabulary> {
    Vocabulary::load(path).with_context(|| format!("reading vocabulary {}", path.display()))
}

fn load_model(m: &ModelArgs) -> Result<(Arc<NeuralParams>, Vocabulary)> {
    require_file("model", &m.model)?;
    require_file("vocab", &m.vocab)?;
    let params = NeuralParams::load(&m.model).with_context(|| format!("reading model {}", m.model.display()))?;
    let vocab = load_vocab(&m.vocab)?;
    if params.vocab_size() != vocab.len() {
        return Err(Error::Invalid(format!(
            "model has {} outputs but {} has {} tokens",
            params.vocab_size(),
            m.vocab.display(),
            vocab.len()
        ))
        .into());
    }
    Ok((Arc::new(params), vocab))
}

fn load_arpa_model(path: &Path, global: &Vocabulary) -> Result<PersonalModel> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let aut = parse_arpa(&text)
        .map_err(Error::from)
        .with_context(|| format!("parsing {}", path.display()))?;
    PersonalModel::from_automaton("cli", aut, global).with_context(|| format!("using {}", path.display()))
}

fn beam_config(vocab: &Vocabulary, b: &BeamArgs, threshold: Option<f64>) -> BeamConfig {
    BeamConfig {
        beam_size: b.beam_size,
        expansion: b.expansion,
        max_len: b.max_len,
        threshold: threshold.unwrap_or(f64::NEG_INFINITY),
        ..BeamConfig::new(vocab)
    }
}

fn decoder(vocab: &Vocabulary, b: &BeamArgs) -> Result<Decoder> {
    let filter = TokenFilter::new(vocab, b.block.iter().map(String::as_str));
    Decoder::new(vocab, beam_config(vocab, b, None), filter).map_err(|e| usage(e.to_string()))
}

fn interpolation(alpha: f64) -> Result<InterpolationConfig> {
    InterpolationConfig::new(alpha).map_err(|e| usage(format!("--alpha: {e}")))
}

fn now() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs() as i64)
        .unwrap_or(0)
}

// ---------------------------------------------------------------- corpus

fn preprocess(a: PreprocessArgs) -> Result<()> {
    require_file("in", &a.input)?;
    let raw: Vec<RawMessage> = read_records(&a.input)?;
    let total = raw.len();
    let valid: Vec<RawMessage> = raw
        .into_iter()
        .enumerate()
        .filter(|(i, m)| match m.validate() {
            Ok(()) => true,
            Err(e) => {
                log::warn!("record {}: {e}; skipped", i + 1);
                false
            }
        })
        .map(|(_, m)| m)
        .collect();
    let pre = Preprocessor::new(a.lang).with_counts(count_tokens(&valid));
    let clean: Vec<CleanMessage> = valid.iter().filter_map(|m| pre.preprocess(m)).collect();
    write_records(&a.out, &clean)?;
    println!(
        "kept {} of {total} messages ({} invalid, {} filtered)",
        clean.len(),
        total - valid.len(),
        valid.len() - clean.len()
    );
    Ok(())
}

fn vocab(a: VocabArgs) -> Result<()> {
    for p in &a.input {
        require_file("in", p)?;
    }
    let corpora: Vec<Vec<CleanMessage>> = a.input.iter().map(|p| read_records(p)).collect::<Result<_>>()?;
    fn tokens(c: &[CleanMessage]) -> Vec<&str> {
        c.iter().flat_map(|m| m.all_tokens()).collect()
    }
    let v = match a.kind {
        Kind::Word => build_word_vocab(corpora.iter().flat_map(|c| tokens(c)), a.size)?,
        Kind::Wordpiece => build_wordpiece_vocab(corpora.iter().map(|c| tokens(c)), a.size)?,
    };
    let mut w = create(&a.out)?;
    v.write(&mut w)?;
    w.flush()?;
    println!("{} vocabulary of {} tokens", v.kind(), v.len());
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let msgs = match a.kind {
        SynthKind::Topic => topic_corpus(a.count, a.seed),
        SynthKind::User => {
            if a.style >= STYLES.len() {
                return Err(usage(format!("--style must be below {}", STYLES.len())));
            }
            user_corpus(a.style, a.count, a.seed)
        }
    };
    write_records(&a.out, &msgs)?;
    println!("wrote {} messages", msgs.len());
    Ok(())
}

// ---------------------------------------------------------------- models

fn ngram_train(a: NgramTrainArgs) -> Result<()> {
    if !(1..=4).contains(&a.order) {
        return Err(usage("--order must be between 1 and 4"));
    }
    require_file("in", &a.input)?;
    require_file("vocab", &a.vocab)?;
    let msgs: Vec<CleanMessage> = read_records(&a.input)?;
    let vocab = load_vocab(&a.vocab)?;
    let sentences = personal_sentences(&msgs, &vocab);
    let table = CountTable::from_sentences(sentences.iter().map(Vec::as_slice), a.order);
    let (aut, report) = estimate_katz(&table, vocab.tokens(), DEFAULT_CUTOFF)?;
    let mut w = create(&a.out)?;
    w.write_all(serialize_arpa(&aut).as_bytes())?;
    w.flush()?;
    for o in &report.orders {
        let how = if o.fell_back() { "absolute discounting" } else { "Good-Turing" };
        println!("order {}: {} n-grams, {how}", o.order, o.num_grams);
    }
    Ok(())
}

fn neural_train(a: NeuralTrainArgs) -> Result<()> {
    require_file("in", &a.input)?;
    require_file("vocab", &a.vocab)?;
    let msgs: Vec<CleanMessage> = read_records(&a.input)?;
    let vocab = load_vocab(&a.vocab)?;
    let mode = match a.mode {
        Mode::LmA => ExampleMode::LmA,
        Mode::LmB => ExampleMode::LmB,
    };
    let cfg = NeuralConfig {
        embed_dim: a.embed_dim,
        hidden_dim: a.hidden_dim,
        time_dim: a.cat_dim,
        dow_dim: a.cat_dim,
        month_dim: a.cat_dim,
        locale_dim: a.cat_dim,
        label_smoothing: a.label_smoothing,
        max_grad_sigma: a.max_grad_sigma,
        ..NeuralConfig::new(vocab.len(), mode)
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let opts = TrainOptions {
        steps: a.steps,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        warmup_steps: a.warmup,
        seed: a.seed,
        ..TrainOptions::default()
    };
    let examples: Vec<_> = make_examples(&msgs, &vocab, mode).collect();
    let params = NeuralParams::init(cfg, a.seed)?;
    let (params, report) = train(params, &examples, &opts)?;
    params.save(&a.out)?;
    if let Some(p) = &a.report {
        write_json(p, &report)?;
    }
    let tail = &report.losses[report.losses.len().saturating_sub(50)..];
    let mean = tail.iter().sum::<f64>() / tail.len().max(1) as f64;
    println!(
        "{} examples, {} steps ({} skipped), mean loss of the last {} steps {mean:.4}",
        examples.len(),
        report.losses.len(),
        report.skipped.len(),
        tail.len()
    );
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let report = grad_check(a.seed)?;
    for g in &report.groups {
        println!("{:<12} {:>5} coordinates  max relative error {:.3e}", g.name, g.checked, g.max_rel_error);
    }
    println!("max relative error {:.3e}", report.max_rel_error);
    if report.max_rel_error.is_nan() || report.max_rel_error >= a.tolerance {
        return Err(CheckFailed(format!(
            "gradient check failed: {:.3e} >= {:.1e}",
            report.max_rel_error, a.tolerance
        ))
        .into());
    }
    Ok(())
}

fn personal_train(a: PersonalTrainArgs) -> Result<()> {
    require_file("in", &a.input)?;
    require_file("vocab", &a.vocab)?;
    if !(2..=4).contains(&a.order) {
        return Err(usage("--order must be between 2 and 4"));
    }
    let msgs: Vec<CleanMessage> = read_records(&a.input)?;
    let vocab = load_vocab(&a.vocab)?;
    let opts = PersonalOptions {
        order: a.order,
        min_count: a.min_count,
        max_vocab: a.max_vocab,
    };
    let model = train_personal(&a.user, &msgs, &vocab, &opts, a.trained_at.unwrap_or_else(now))?;
    let store = PersonalStore::new(&a.root);
    let dir = store.user_dir(&a.user);
    let model = store.save(model)?;
    println!(
        "{}: {} sentences, {} personal words, {}",
        dir.display(),
        model.sentences,
        model.personal_vocab.regular_tokens().len(),
        if model.is_active() { "active" } else { "inactive (too little data)" }
    );
    Ok(())
}

// ---------------------------------------------------------------- evaluation

fn eval(a: EvalArgs) -> Result<()> {
    require_file("test", &a.test)?;
    if let Some(p) = &a.arpa {
        require_file("arpa", p)?;
    }
    let (params, vocab) = load_model(&a.model)?;
    let msgs: Vec<CleanMessage> = read_records(&a.test)?;
    let ctx = with_contexts(&msgs, &vocab);
    let threshold = match (a.coverage, a.threshold) {
        (Some(c), _) => Threshold::Coverage(c),
        (None, Some(t)) => Threshold::Fixed(t),
        (None, None) => Threshold::Fixed(f64::NEG_INFINITY),
    };
    if let Threshold::Coverage(c) = threshold {
        if !(0.0..=1.0).contains(&c) {
            return Err(usage("--coverage must be within [0, 1]"));
        }
    }
    let report = match &a.arpa {
        None => {
            let dec = decoder(&vocab, &a.beam)?;
            evaluate(&*params, |c| params.start(c), &dec, &vocab, &ctx, threshold, a.seed, a.max_boundaries)?
        }
        Some(path) => {
            let personal = load_arpa_model(path, &vocab)?;
            let aut = personal.automaton.as_ref().expect("loaded from ARPA");
            let model = BlendedModel::new(&*params, aut, interpolation(a.alpha)?)?;
            let dec = decoder(&personal.union_vocab, &a.beam)?;
            evaluate(
                &model,
                |c| model.initial_state(params.start(c)),
                &dec,
                &personal.union_vocab,
                &ctx,
                threshold,
                a.seed,
                a.max_boundaries,
            )?
        }
    };
    print!("{}", report.to_text());
    if let Some(p) = &a.json {
        write_json(p, &report)?;
    }
    Ok(())
}

fn sweep_alpha(a: SweepArgs) -> Result<()> {
    require_dir("root", &a.root)?;
    let mut tests = Vec::new();
    for pair in &a.user_test {
        let (user, path) = pair
            .split_once('=')
            .ok_or_else(|| usage(format!("--user-test `{pair}` is not ID=FILE")))?;
        let path = Path::new(path);
        require_file("user-test", path)?;
        tests.push((user.to_string(), path.to_path_buf()));
    }
    if let Some(bad) = a.alphas.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(usage(format!("--alphas: {bad} is outside [0, 1]")));
    }
    if !(0.0..=1.0).contains(&a.coverage) {
        return Err(usage("--coverage must be within [0, 1]"));
    }
    let (params, vocab) = load_model(&a.model)?;
    let store = PersonalStore::new(&a.root);
    let mut users = Vec::new();
    for (i, (user, path)) in tests.iter().enumerate() {
        let model = store
            .get(user, &vocab)?
            .filter(|m| m.is_active())
            .ok_or_else(|| Error::Invalid(format!("no active personal model for `{user}` in {}", a.root.display())))?;
        let msgs: Vec<CleanMessage> = read_records(path)?;
        let opps = opportunities_for(&with_contexts(&msgs, &vocab), a.seed.wrapping_add(i as u64), a.max_boundaries);
        users.push((model, opps));
    }
    let sweep_users: Vec<SweepUser<'_>> = users
        .iter()
        .map(|(m, o)| SweepUser {
            automaton: m.automaton.as_ref().expect("active"),
            union: &m.union_vocab,
            opportunities: o,
        })
        .collect();
    let factory = |v: &Vocabulary| decoder(v, &a.beam).map_err(|e| Error::Invalid(e.to_string()));
    let rows = alpha_sweep(&*params, |c| params.start(c), &sweep_users, &factory, &a.alphas, a.coverage)?;
    print!("{}", sweep_table(&rows));
    if let Some(p) = &a.json {
        write_json(p, &rows)?;
    }
    Ok(())
}

// ---------------------------------------------------------------- serving

fn service_config(vocab: &Vocabulary, s: &ServingArgs) -> Result<ServiceConfig> {
    Ok(ServiceConfig {
        beam: beam_config(vocab, &s.beam, s.threshold),
        extra_blocked: s.beam.block.clone(),
        interpolation: interpolation(s.alpha)?,
        ..ServiceConfig::new(vocab)
    })
}

fn serve_cmd(a: ServeArgs) -> Result<()> {
    if let Some(r) = &a.root {
        require_dir("root", r)?;
    }
    if a.batch_size == 0 {
        return Err(usage("--batch-size must be at least 1"));
    }
    let (params, vocab) = load_model(&a.model)?;
    let cfg = ServiceConfig {
        batch_size: a.batch_size,
        batch_window: Duration::from_millis(a.batch_window_ms),
        session_ttl: Duration::from_secs(a.session_ttl_secs),
        max_sessions: a.max_sessions,
        allowed_locales: (!a.locales.is_empty()).then(|| a.locales.clone()),
        ..service_config(&vocab, &a.serving)?
    };
    let service = Service::new(params, vocab, a.root.as_ref().map(PersonalStore::new), cfg)?;
    let server = serve(Arc::new(service), a.addr)?;
    println!("listening on {}", server.local_addr());
    std::io::stdout().flush()?;
    server.wait();
    Ok(())
}

fn suggest(a: SuggestArgs) -> Result<()> {
    if let Some(p) = &a.arpa {
        require_file("arpa", p)?;
    }
    let (params, vocab) = load_model(&a.model)?;
    let store = match &a.arpa {
        Some(p) => {
            let store = PersonalStore::new(".");
            store.insert(load_arpa_model(p, &vocab)?);
            Some(store)
        }
        None => None,
    };
    let cfg = ServiceConfig {
        batch_size: 1,
        ..service_config(&vocab, &a.serving)?
    };
    let service = Service::new(params, vocab, store, cfg)?;
    let session = service.open(&OpenRequest {
        subject: a.subject,
        previous_body: a.previous_body,
        timestamp: a.timestamp,
        locale: a.locale,
        utc_offset_minutes: a.utc_offset_minutes,
        user: a.arpa.as_ref().map(|_| "cli".to_string()),
    })?;
    let r = service
        .suggest(&SuggestRequest {
            session,
            seq: 1,
            prefix: a.prefix.clone(),
        })?
        .expect("first request of a fresh session is never stale");
    let out = serde_json::json!({
        "prefix": a.prefix,
        "suggestion": r.suggestion,
        "confidence": r.confidence,
        "triggered": r.triggered,
    });
    println!("{out}");
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    require_file("scripts", &a.scripts)?;
    if a.sessions == 0 || a.batch_size == 0 {
        return Err(usage("--sessions and --batch-size must be at least 1"));
    }
    let (params, vocab) = load_model(&a.model)?;
    let msgs: Vec<CleanMessage> = read_records(&a.scripts)?;
    let scripts: Vec<TypingScript> = msgs
        .iter()
        .take(a.sessions)
        .map(|m| {
            let raw = m.to_raw();
            TypingScript {
                open: OpenRequest {
                    subject: raw.subject,
                    previous_body: raw.previous_body,
                    timestamp: raw.timestamp,
                    locale: raw.locale,
                    utc_offset_minutes: raw.utc_offset_minutes,
                    user: None,
                },
                body: raw.body.replace('\n', " "),
            }
        })
        .collect();
    if scripts.is_empty() {
        return Err(Error::Invalid(format!("{} has no messages", a.scripts.display())).into());
    }
    let base = service_config(&vocab, &a.serving)?;
    let report = run_bench(params, &vocab, None, &base, &scripts, &BenchConfig::defaults(a.batch_size))?;
    print!("{}", report.to_text());
    if let Some(p) = &a.json {
        write_json(p, &report)?;
    }
    Ok(())
}
