//! Newline-delimited JSON messages. Unknown fields are ignored.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OpenRequest {
    #[serde(default)]
    pub subject: String,
    #[serde(default)]
    pub previous_body: Option<String>,
    #[serde(default)]
    pub timestamp: i64,
    #[serde(default)]
    pub locale: String,
    #[serde(default)]
    pub utc_offset_minutes: Option<i32>,
    /// Selects the user's personal model when one exists.
    #[serde(default)]
    pub user: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestRequest {
    pub session: String,
    pub seq: u64,
    pub prefix: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Request {
    Open(OpenRequest),
    Suggest(SuggestRequest),
    Close { session: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestResponse {
    pub seq: u64,
    /// Text to insert at the end of the prefix; empty unless triggered.
    pub suggestion: String,
    /// `null` when the decoder found no candidate.
    pub confidence: Option<f64>,
    pub triggered: bool,
    pub us_total: u64,
    /// Time spent advancing the model over newly typed tokens.
    pub us_encode: u64,
    pub encode_steps: usize,
    pub beam_steps: usize,
}

impl SuggestResponse {
    /// Equality of what the user would see: suggestion, confidence bits and
    /// trigger flag. Seq, timing and work counters are ignored.
    pub fn same_result(&self, other: &SuggestResponse) -> bool {
        self.suggestion == other.suggestion
            && self.triggered == other.triggered
            && self.confidence.map(f64::to_bits) == other.confidence.map(f64::to_bits)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Response {
    Suggest(SuggestResponse),
    Opened { ok: bool, session: String },
    Ok { ok: bool },
    Error {
        ok: bool,
        error: String,
        #[serde(skip_serializing_if = "Option::is_none")]
        retry_after_ms: Option<u64>,
    },
}

impl Response {
    pub fn error(msg: impl Into<String>, retry_after_ms: Option<u64>) -> Response {
        Response::Error {
            ok: false,
            error: msg.into(),
            retry_after_ms,
        }
    }

    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("responses serialize");
        s.push('\n');
        s
    }
}
