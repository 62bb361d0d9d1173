//! Answer extraction, normalization and scoring.

mod extract;
mod metrics;
mod record;
mod score;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use extract::{extract_answer, AnswerFormat, ExtractedAnswer};
pub use metrics::{exact_match, normalize, parse_number, token_f1};
pub use record::{QuestionRecord, RoundAnswers};
pub use score::{aggregate, score_question, ScoringRule, Summary};

/// How a question's gold answer is compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerKind {
    /// Free-form span scored by EM and token F1.
    Open,
    YesNo,
    /// Gold is a letter `A`..`Z`.
    MultipleChoice,
    Numeric,
    /// One of SUPPORTS / REFUTES / NOT ENOUGH INFO.
    Fever,
}

impl AnswerKind {
    pub fn uses_f1(self) -> bool {
        matches!(self, AnswerKind::Open)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gold {
    pub answers: Vec<String>,
    pub kind: AnswerKind,
}

impl Gold {
    pub fn new(answers: impl IntoIterator<Item = impl Into<String>>, kind: AnswerKind) -> Self {
        Self {
            answers: answers.into_iter().map(Into::into).collect(),
            kind,
        }
    }
}

/// EM and F1 of one answer; accuracy-scored kinds set both to the accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub em: f64,
    pub f1: f64,
}

impl Metrics {
    pub const ZERO: Metrics = Metrics { em: 0.0, f1: 0.0 };

    pub fn accuracy(correct: bool) -> Self {
        let v = if correct { 1.0 } else { 0.0 };
        Metrics { em: v, f1: v }
    }

    pub fn mean(items: &[Metrics]) -> Metrics {
        if items.is_empty() {
            return Metrics::ZERO;
        }
        let n = items.len() as f64;
        Metrics {
            em: items.iter().map(|m| m.em).sum::<f64>() / n,
            f1: items.iter().map(|m| m.f1).sum::<f64>() / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionScore {
    pub question_id: String,
    /// One entry per scored response; `None` marks an unformatted response.
    pub per_response: Vec<Option<Metrics>>,
    pub score: Metrics,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("run {run} covers different questions than run 0")]
    MismatchedQuestions { run: usize },
    #[error("question `{0}` appears twice in one run")]
    DuplicateQuestion(String),
    #[error("no runs to aggregate")]
    NoRuns,
}
