use serde::{Deserialize, Serialize};

use super::QuestionScore;
use crate::setting::{Method, Task};

/// Extracted answers of one round, one slot per agent (`None` when the
/// response had no formatted answer).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundAnswers {
    pub round: usize,
    pub answers: Vec<Option<String>>,
}

/// One line of `records.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub question_id: String,
    pub dataset: String,
    pub task: Task,
    pub method: Method,
    pub seed: u64,
    /// Layers whose states were transferred; empty for text-only methods.
    pub layers: Vec<usize>,
    pub rounds: Vec<RoundAnswers>,
    pub score: QuestionScore,
    pub token_bytes: u64,
    pub latent_bytes: u64,
}
