use chrono::{DateTime, Datelike, Timelike};
use serde::{Deserialize, Serialize};

use super::{encode, CleanMessage};
use crate::vocab::{Special, TokenId, Vocabulary};

pub const DEFAULT_MAX_TARGET_LEN: usize = 100;

const LOCALES: [&str; 9] = [
    "en-US", "en-GB", "es-ES", "es-MX", "fr-FR", "it-IT", "pt-BR", "pt-PT", "de-DE",
];

/// Number of locale ids, including id 0 for locales outside the table.
pub const NUM_LOCALES: usize = LOCALES.len() + 1;

pub fn locale_table() -> &'static [&'static str] {
    &LOCALES
}

/// Small integer id of a locale tag; 0 for anything outside the table.
pub fn locale_id(tag: &str) -> u8 {
    LOCALES
        .iter()
        .position(|l| *l == tag)
        .map(|i| i as u8 + 1)
        .unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeBucket {
    Night,
    Morning,
    Afternoon,
    Evening,
}

impl TimeBucket {
    pub const COUNT: usize = 4;

    /// night [0,6), morning [6,12), afternoon [12,18), evening [18,24).
    pub fn from_hour(hour: u32) -> TimeBucket {
        match hour {
            0..=5 => TimeBucket::Night,
            6..=11 => TimeBucket::Morning,
            12..=17 => TimeBucket::Afternoon,
            _ => TimeBucket::Evening,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextFeatures {
    pub subject_ids: Vec<TokenId>,
    pub prev_body_ids: Vec<TokenId>,
    pub time_bucket: TimeBucket,
    /// 0 = Monday.
    pub day_of_week: u8,
    /// 1..=12.
    pub month: u8,
    pub locale_id: u8,
}

impl ContextFeatures {
    /// Calendar features from a timestamp, in local time when an offset is
    /// given and UTC otherwise.
    pub fn new(
        subject_ids: Vec<TokenId>,
        prev_body_ids: Vec<TokenId>,
        timestamp: i64,
        utc_offset_minutes: Option<i32>,
        locale: &str,
    ) -> Self {
        let offset = utc_offset_minutes.unwrap_or(0) as i64 * 60;
        let local = DateTime::from_timestamp(timestamp.saturating_add(offset), 0)
            .unwrap_or(DateTime::UNIX_EPOCH)
            .naive_utc();
        ContextFeatures {
            subject_ids,
            prev_body_ids,
            time_bucket: TimeBucket::from_hour(local.hour()),
            day_of_week: local.weekday().num_days_from_monday() as u8,
            month: local.month() as u8,
            locale_id: locale_id(locale),
        }
    }

    /// Context with empty fields at the epoch; handy for context-free use.
    pub fn empty() -> Self {
        ContextFeatures::new(Vec::new(), Vec::new(), 0, None, "")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExampleMode {
    /// Context kept in separate fields.
    #[serde(rename = "lm-a")]
    LmA,
    /// Context packed into the token sequence between separators.
    #[serde(rename = "lm-b")]
    LmB,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub context: ContextFeatures,
    /// Body ids, ending in exactly one `<EOS>`.
    pub target_ids: Vec<TokenId>,
    /// `<SUBJ> subject <PREV> previous <BODY> target`, LM-B only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub packed_ids: Option<Vec<TokenId>>,
}

impl TrainingExample {
    pub fn from_message(
        msg: &CleanMessage,
        vocab: &Vocabulary,
        mode: ExampleMode,
        max_target_len: usize,
    ) -> TrainingExample {
        let subject_ids = encode(vocab, msg.subject.iter().map(String::as_str));
        let prev_body_ids = encode(vocab, msg.previous_body.iter().map(String::as_str));
        let context = ContextFeatures::new(
            subject_ids,
            prev_body_ids,
            msg.timestamp,
            msg.utc_offset_minutes,
            &msg.locale,
        );

        let budget = max_target_len.max(1) - 1;
        let mut target_ids = Vec::new();
        for sentence in &msg.body {
            let ids = encode(vocab, sentence.iter().map(String::as_str));
            if target_ids.len() + ids.len() > budget {
                if target_ids.is_empty() {
                    target_ids.extend_from_slice(&ids[..budget]);
                }
                break;
            }
            target_ids.extend(ids);
        }
        target_ids.push(Special::Eos.id());

        let packed_ids = (mode == ExampleMode::LmB).then(|| pack(&context, &target_ids));
        TrainingExample {
            context,
            target_ids,
            packed_ids,
        }
    }
}

pub(crate) fn pack(context: &ContextFeatures, body: &[TokenId]) -> Vec<TokenId> {
    let mut v = Vec::with_capacity(3 + context.subject_ids.len() + context.prev_body_ids.len() + body.len());
    v.push(Special::Subj.id());
    v.extend(&context.subject_ids);
    v.push(Special::Prev.id());
    v.extend(&context.prev_body_ids);
    v.push(Special::Body.id());
    v.extend(body);
    v
}

/// Lazily turns cleaned messages into training examples.
pub fn make_examples<'a, I>(
    msgs: I,
    vocab: &'a Vocabulary,
    mode: ExampleMode,
) -> impl Iterator<Item = TrainingExample> + 'a
where
    I: IntoIterator<Item = &'a CleanMessage>,
    I::IntoIter: 'a,
{
    msgs.into_iter()
        .map(move |m| TrainingExample::from_message(m, vocab, mode, DEFAULT_MAX_TARGET_LEN))
}
