use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Seed used when `--seed` is not given.
pub const DEFAULT_SEED: u64 = 17;

#[derive(Debug, Parser)]
#[command(
    name = "compose",
    version,
    about = "Sentence completion for e-mail: corpus preparation, model training, evaluation and serving",
    propagate_version = true
)]
pub struct Cli {
    /// TOML file of flag values; flags on the command line take precedence
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Log more to stderr (-v info, -vv debug); RUST_LOG overrides
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Clean raw messages and learn vocabularies
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Katz back-off n-gram models
    #[command(subcommand)]
    Ngram(NgramCmd),
    /// The global recurrent language model
    #[command(subcommand)]
    Neural(NeuralCmd),
    /// Per-user n-gram models
    #[command(subcommand)]
    Personal(PersonalCmd),
    /// Perplexity and ExactMatch of a model on cleaned messages
    Eval(EvalArgs),
    /// ExactMatch across interpolation weights at a fixed coverage
    SweepAlpha(SweepArgs),
    /// Run the suggestion server (newline-delimited JSON over TCP or WebSocket)
    Serve(ServeArgs),
    /// Print the top suggestion for one prefix
    Suggest(SuggestArgs),
    /// Replay typing sessions against the service and report latencies
    Bench(BenchArgs),
}

#[derive(Debug, Subcommand)]
pub enum CorpusCmd {
    /// Strip quotes, salutations and closings, normalize entities, filter by language
    Preprocess(PreprocessArgs),
    /// Learn a word or wordpiece vocabulary from cleaned messages
    Vocab(VocabArgs),
    /// Write a seeded synthetic corpus of raw messages
    Synth(SynthArgs),
}

#[derive(Debug, Subcommand)]
pub enum NgramCmd {
    /// Estimate a Katz model from cleaned message bodies and write ARPA
    Train(NgramTrainArgs),
}

#[derive(Debug, Subcommand)]
pub enum NeuralCmd {
    /// Train from scratch on cleaned messages
    Train(NeuralTrainArgs),
    /// Compare analytic gradients with central differences on a tiny model
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Subcommand)]
pub enum PersonalCmd {
    /// Train and store one user's model from their cleaned sent messages
    Train(PersonalTrainArgs),
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Language to keep (messages detected or declared otherwise are dropped)
    #[arg(long, default_value = "en")]
    pub lang: String,
    /// Raw messages, JSON lines
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    /// Cleaned messages, JSON lines
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Word,
    Wordpiece,
}

#[derive(Debug, Args)]
pub struct VocabArgs {
    /// Vocabulary type
    #[arg(long, value_enum, default_value = "word")]
    pub kind: Kind,
    /// Total size including special tokens
    #[arg(long, default_value_t = 8000)]
    pub size: usize,
    /// Cleaned message files, comma separated; each is one corpus
    #[arg(long = "in", value_name = "FILES", value_delimiter = ',', required = true)]
    pub input: Vec<PathBuf>,
    /// Output file
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    /// Topic-dependent messages for a global model
    Topic,
    /// One user's messages in a fixed style
    User,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Corpus type
    #[arg(long, value_enum, default_value = "topic")]
    pub kind: SynthKind,
    /// Number of messages
    #[arg(long, default_value_t = 1000)]
    pub count: usize,
    /// Style index for user corpora
    #[arg(long, default_value_t = 0)]
    pub style: usize,
    /// Random seed; the same seed gives byte-identical output
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Output file
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct NgramTrainArgs {
    /// Model order, 1 to 4
    #[arg(long, default_value_t = 3)]
    pub order: usize,
    /// Cleaned messages whose body sentences are counted
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    /// Vocabulary file
    #[arg(long, value_name = "FILE")]
    pub vocab: PathBuf,
    /// ARPA output
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Context as averaged field embeddings fed at every step
    LmA,
    /// Context packed into the input sequence
    LmB,
}

#[derive(Debug, Args)]
pub struct NeuralTrainArgs {
    /// Cleaned training messages
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    /// Vocabulary file
    #[arg(long, value_name = "FILE")]
    pub vocab: PathBuf,
    /// Model output
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// How context reaches the model
    #[arg(long, value_enum, default_value = "lm-a")]
    pub mode: Mode,
    /// Token embedding width
    #[arg(long, default_value_t = 32)]
    pub embed_dim: usize,
    /// Recurrent state width
    #[arg(long, default_value_t = 128)]
    pub hidden_dim: usize,
    /// Width of each categorical context embedding
    #[arg(long, default_value_t = 8)]
    pub cat_dim: usize,
    /// Uniform label smoothing weight
    #[arg(long, default_value_t = 0.1)]
    pub label_smoothing: f64,
    /// Skip steps whose log gradient norm exceeds this many deviations
    #[arg(long, default_value_t = 4.0)]
    pub max_grad_sigma: f64,
    /// Optimizer steps
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    /// Sequences per optimizer step
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    /// Peak Adam learning rate
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Linear learning-rate warmup steps
    #[arg(long, default_value_t = 100)]
    pub warmup: usize,
    /// Random seed; the same seed gives byte-identical output
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Write per-step losses and skipped steps as JSON
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Random seed; the same seed gives byte-identical output
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Largest acceptable relative error
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

#[derive(Debug, Args)]
pub struct PersonalTrainArgs {
    /// User id; only its hash is stored
    #[arg(long)]
    pub user: String,
    /// The user's cleaned sent messages
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    /// Global vocabulary
    #[arg(long, value_name = "FILE")]
    pub vocab: PathBuf,
    /// Store directory
    #[arg(long, value_name = "DIR", default_value = "models/personal")]
    pub root: PathBuf,
    /// Model order, 2 to 4
    #[arg(long, default_value_t = 3)]
    pub order: usize,
    /// Occurrences a word needs to join the personal vocabulary
    #[arg(long, default_value_t = 2)]
    pub min_count: u64,
    /// Largest personal vocabulary
    #[arg(long, default_value_t = 4000)]
    pub max_vocab: usize,
    /// Training time recorded in the metadata, seconds since the epoch; now by default
    #[arg(long)]
    pub trained_at: Option<i64>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Global model file
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    /// Global vocabulary
    #[arg(long, value_name = "FILE")]
    pub vocab: PathBuf,
}

#[derive(Debug, Args)]
pub struct BeamArgs {
    /// Hypotheses kept per step
    #[arg(long, default_value_t = 8)]
    pub beam_size: usize,
    /// Candidates kept per hypothesis at each step
    #[arg(long, default_value_t = 8)]
    pub expansion: usize,
    /// Longest suggestion in tokens
    #[arg(long, default_value_t = 15)]
    pub max_len: usize,
    /// Extra words never to suggest, comma separated
    #[arg(long, value_name = "WORDS", value_delimiter = ',')]
    pub block: Vec<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Cleaned test messages
    #[arg(long, value_name = "FILE")]
    pub test: PathBuf,
    /// Personal ARPA model to interpolate with
    #[arg(long, value_name = "FILE")]
    pub arpa: Option<PathBuf>,
    /// Weight of the personal model
    #[arg(long, default_value_t = 0.4)]
    pub alpha: f64,
    /// Calibrate the threshold on the test opportunities to this coverage
    #[arg(long, conflicts_with = "threshold")]
    pub coverage: Option<f64>,
    /// Fixed confidence threshold; without this or --coverage every suggestion triggers
    #[arg(long, allow_negative_numbers = true)]
    pub threshold: Option<f64>,
    /// Seed for the mid-word trigger points
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Word boundaries per message to decode at
    #[arg(long, default_value_t = 15)]
    pub max_boundaries: usize,
    /// Also write the report as JSON
    #[arg(long, value_name = "FILE")]
    pub json: Option<PathBuf>,
    #[command(flatten)]
    pub beam: BeamArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Personal store directory
    #[arg(long, value_name = "DIR", default_value = "models/personal")]
    pub root: PathBuf,
    /// A user and their cleaned test messages, as ID=FILE; repeatable
    #[arg(long = "user-test", value_name = "ID=FILE", required = true)]
    pub user_test: Vec<String>,
    /// Interpolation weights, comma separated
    #[arg(long, value_delimiter = ',', default_value = "0,0.2,0.4,0.6,0.8,1")]
    pub alphas: Vec<f64>,
    /// Coverage every weight is recalibrated to
    #[arg(long, default_value_t = 0.9)]
    pub coverage: f64,
    /// Random seed; the same seed gives byte-identical output
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Word boundaries per message to decode at
    #[arg(long, default_value_t = 15)]
    pub max_boundaries: usize,
    /// Also write the rows as JSON
    #[arg(long, value_name = "FILE")]
    pub json: Option<PathBuf>,
    #[command(flatten)]
    pub beam: BeamArgs,
}

#[derive(Debug, Args)]
pub struct ServingArgs {
    /// Weight of personal models
    #[arg(long, default_value_t = 0.4)]
    pub alpha: f64,
    /// Confidence a suggestion needs to be shown
    #[arg(long, allow_negative_numbers = true)]
    pub threshold: Option<f64>,
    #[command(flatten)]
    pub beam: BeamArgs,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Address to listen on; port 0 picks a free one
    #[arg(long, default_value = "127.0.0.1:7070")]
    pub addr: SocketAddr,
    /// Personal store directory; sessions opened with a user id use it
    #[arg(long, value_name = "DIR")]
    pub root: Option<PathBuf>,
    /// Rows per batched step; 1 disables batching
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    /// How long a batch waits for more rows
    #[arg(long, default_value_t = 2)]
    pub batch_window_ms: u64,
    /// Idle time after which a session is closed
    #[arg(long, default_value_t = 600)]
    pub session_ttl_secs: u64,
    /// Open sessions before new ones are refused
    #[arg(long, default_value_t = 10_000)]
    pub max_sessions: usize,
    /// Locales allowed to open sessions, comma separated; all when absent
    #[arg(long, value_delimiter = ',')]
    pub locales: Vec<String>,
    #[command(flatten)]
    pub serving: ServingArgs,
}

#[derive(Debug, Args)]
pub struct SuggestArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Personal ARPA model to interpolate with
    #[arg(long, value_name = "FILE")]
    pub arpa: Option<PathBuf>,
    /// Body typed so far
    #[arg(long)]
    pub prefix: String,
    /// Subject of the message being written
    #[arg(long, default_value = "")]
    pub subject: String,
    /// Body of the message being replied to
    #[arg(long)]
    pub previous_body: Option<String>,
    /// Sender locale, xx-XX
    #[arg(long, default_value = "en-US")]
    pub locale: String,
    /// Seconds since the epoch
    #[arg(long, default_value_t = 0, allow_negative_numbers = true)]
    pub timestamp: i64,
    /// Offset of the sender's local time from UTC
    #[arg(long, allow_negative_numbers = true)]
    pub utc_offset_minutes: Option<i32>,
    #[command(flatten)]
    pub serving: ServingArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Cleaned messages whose bodies are typed one character at a time
    #[arg(long, value_name = "FILE")]
    pub scripts: PathBuf,
    /// Concurrent sessions (one script each)
    #[arg(long, default_value_t = 8)]
    pub sessions: usize,
    /// Rows per batched step for the batched configuration
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    /// Also write the report as JSON
    #[arg(long, value_name = "FILE")]
    pub json: Option<PathBuf>,
    #[command(flatten)]
    pub serving: ServingArgs,
}
