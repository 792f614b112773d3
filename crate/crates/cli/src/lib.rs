//! Command implementations and the HTTP service for the `groundqa` binary.

use std::fmt;

use serde::{Deserialize, Serialize};

use groundqa::{Answer, KnowledgeBase};

pub mod commands;
pub mod config;
pub mod service;

/// Process exit status.
pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_IO: i32 = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CliError {
    Validation(String),
    Io(String),
}

impl CliError {
    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }

    pub fn io(msg: impl Into<String>) -> Self {
        CliError::Io(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

macro_rules! classify {
    ($($ty:ty => $io:pat),* $(,)?) => {$(
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                match e {
                    $io => CliError::Io(e.to_string()),
                    _ => CliError::Validation(e.to_string()),
                }
            }
        }
    )*};
}

classify! {
    groundqa::KbError => groundqa::KbError::Io(_),
    groundqa::EncoderError => groundqa::EncoderError::Io(_),
    groundqa::tfidf::TfidfError => groundqa::tfidf::TfidfError::Io(_),
    groundqa::dataset::DatasetError => groundqa::dataset::DatasetError::Io(_),
    groundqa::rouge::RougeError => groundqa::rouge::RougeError::Io(_),
}

impl From<groundqa::PipelineError> for CliError {
    fn from(e: groundqa::PipelineError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<groundqa::losses::TrainError> for CliError {
    fn from(e: groundqa::losses::TrainError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<groundqa::gradcheck::GradcheckError> for CliError {
    fn from(e: groundqa::gradcheck::GradcheckError) -> Self {
        CliError::Validation(e.to_string())
    }
}

/// One query, as accepted by `POST /query` and by batch files. Batch lines
/// may carry `summary` instead of `question`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct QueryRequest {
    #[serde(default, alias = "summary")]
    pub question: Option<String>,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedFaq {
    pub id: String,
    pub question: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerSentence {
    pub index: usize,
    pub text: String,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingMs {
    #[serde(rename = "match")]
    pub match_ms: f64,
    #[serde(rename = "select")]
    pub select_ms: f64,
    #[serde(rename = "total")]
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub matched_faq: MatchedFaq,
    pub answers: Vec<AnswerSentence>,
    pub timing_ms: TimingMs,
}

impl QueryResponse {
    /// With `report_timing` off the timing fields are zero, which makes
    /// bodies reproducible.
    pub fn from_answer(answer: &Answer, kb: &KnowledgeBase, report_timing: bool) -> Self {
        let m = &answer.matched;
        let t = &answer.timing;
        let timing_ms = if report_timing {
            TimingMs { match_ms: t.match_ms, select_ms: t.select_ms, total_ms: t.total_ms }
        } else {
            TimingMs { match_ms: 0.0, select_ms: 0.0, total_ms: 0.0 }
        };
        QueryResponse {
            id: None,
            matched_faq: MatchedFaq {
                id: m.matched_id.clone(),
                question: kb.entry(m.matched_index).question.text().to_string(),
                score: m.matched_score.0,
            },
            answers: answer
                .selection
                .selected
                .iter()
                .map(|s| AnswerSentence { index: s.index, text: s.text.clone(), score: s.score.0 })
                .collect(),
            timing_ms,
        }
    }
}
