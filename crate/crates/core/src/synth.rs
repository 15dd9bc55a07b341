//! Seeded synthetic mail corpora for tests, benchmarks and demos.
//!
//! Bodies depend on the subject through a topic noun, so a model that reads
//! the context can predict what a context-free model cannot. User corpora
//! mix those topic bodies with a private style built from words that never
//! occur in the shared corpus.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::RawMessage;

/// `(subject, noun)`: every body of a topic mentions its noun.
pub const TOPICS: [(&str, &str); 8] = [
    ("Q3 invoice", "invoice"),
    ("lunch on friday", "reservation"),
    ("design review", "mockup"),
    ("quarterly numbers", "report"),
    ("team offsite", "agenda"),
    ("new laptop", "laptop"),
    ("conference travel", "itinerary"),
    ("contract renewal", "contract"),
];

const TEMPLATES: [&str; 7] = [
    "{open} the {noun} is ready .",
    "please see the attached {noun} .",
    "can we talk about the {noun} {when} ?",
    "I told her the {noun} looks good .",
    "he said the {noun} will be late .",
    "Yes , the {noun} is fine .",
    "the {noun} is at {link} .",
];

const OPENERS: [&str; 3] = ["Just a heads up ,", "FYI ,", "Good news :"];
const WHENS: [&str; 3] = ["tomorrow", "on monday", "later today"];
const LINKS: [&str; 2] = ["https://example.com/shared", "files@example.com"];

/// Reply pair for the partial-word fixture: `previous_body` and `body`.
pub const THANKS_REPLY: (&str, &str) = ("Thank you!", "You're welcome!");

/// Private phrases per style; none of their words appear in the topic corpus.
pub const STYLES: [[&str; 3]; 2] = [
    [
        "howdy partner , saddle up .",
        "yeehaw , round up the herd .",
        "howdy partner , round up the cattle .",
    ],
    [
        "ahoy matey , hoist the sails .",
        "ahoy matey , swab the deck .",
        "avast , hoist the anchor .",
    ],
];

fn timestamp(rng: &mut ChaCha8Rng) -> i64 {
    // 2024
    rng.gen_range(1_704_067_200..1_735_689_600)
}

fn message(subject: &str, previous_body: Option<&str>, body: String, rng: &mut ChaCha8Rng) -> RawMessage {
    RawMessage {
        subject: subject.to_string(),
        previous_body: previous_body.map(str::to_string),
        body,
        timestamp: timestamp(rng),
        locale: "en-US".to_string(),
        language: Some("en".to_string()),
        utc_offset_minutes: None,
    }
}

/// One body about `noun`.
pub fn topic_body(noun: &str, rng: &mut ChaCha8Rng) -> String {
    TEMPLATES
        .choose(rng)
        .unwrap()
        .replace("{open}", OPENERS.choose(rng).unwrap())
        .replace("{when}", WHENS.choose(rng).unwrap())
        .replace("{link}", LINKS.choose(rng).unwrap())
        .replace("{noun}", noun)
}

fn topic_message(rng: &mut ChaCha8Rng) -> RawMessage {
    let (subject, noun) = *TOPICS.choose(rng).unwrap();
    let body = topic_body(noun, rng);
    message(subject, None, body, rng)
}

fn thanks_message(rng: &mut ChaCha8Rng) -> RawMessage {
    let (subject, _) = *TOPICS.choose(rng).unwrap();
    message(&format!("Re: {subject}"), Some(THANKS_REPLY.0), THANKS_REPLY.1.to_string(), rng)
}

/// The shared corpus: topic messages plus one reply to a thank-you in ten.
pub fn topic_corpus(n: usize, seed: u64) -> Vec<RawMessage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            if rng.gen_bool(0.1) {
                thanks_message(&mut rng)
            } else {
                topic_message(&mut rng)
            }
        })
        .collect()
}

/// A user's sent mail in `style`: half topic messages, half private phrases
/// under a random topic subject.
pub fn user_corpus(style: usize, n: usize, seed: u64) -> Vec<RawMessage> {
    let phrases = &STYLES[style % STYLES.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            if rng.gen_bool(0.5) {
                topic_message(&mut rng)
            } else {
                let (subject, _) = *TOPICS.choose(&mut rng).unwrap();
                let body = phrases.choose(&mut rng).unwrap().to_string();
                message(subject, None, body, &mut rng)
            }
        })
        .collect()
}
