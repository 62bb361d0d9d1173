use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EnvError;
use crate::evalkit::{AnswerKind, Gold};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub question: String,
    pub answers: Vec<String>,
    /// Inferred from the answers when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<AnswerKind>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub choices: Vec<String>,
}

impl Question {
    /// The declared kind, or yes/no when every answer is yes or no,
    /// multiple choice when every answer is a single capital letter and
    /// choices are listed, else open.
    pub fn kind(&self) -> AnswerKind {
        if let Some(k) = self.kind {
            return k;
        }
        let lower: Vec<String> = self
            .answers
            .iter()
            .map(|a| a.trim().to_lowercase())
            .collect();
        if lower.iter().all(|a| a == "yes" || a == "no") {
            AnswerKind::YesNo
        } else if !self.choices.is_empty()
            && self
                .answers
                .iter()
                .all(|a| a.trim().len() == 1 && a.trim().chars().all(|c| c.is_ascii_uppercase()))
        {
            AnswerKind::MultipleChoice
        } else {
            AnswerKind::Open
        }
    }

    pub fn gold(&self) -> Gold {
        Gold {
            answers: self.answers.clone(),
            kind: self.kind(),
        }
    }
}

pub fn read_dataset(reader: impl BufRead) -> Result<Vec<Question>, EnvError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| EnvError::Malformed {
            line: i + 1,
            reason,
        };
        let q: Question = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        if q.id.is_empty() {
            return Err(malformed("empty id".into()));
        }
        if q.question.trim().is_empty() {
            return Err(malformed(format!("question `{}` has empty text", q.id)));
        }
        if q.answers.is_empty() || q.answers.iter().any(|a| a.trim().is_empty()) {
            return Err(malformed(format!(
                "question `{}` needs non-empty answers",
                q.id
            )));
        }
        if !seen.insert(q.id.clone()) {
            return Err(malformed(format!("duplicate id `{}`", q.id)));
        }
        out.push(q);
    }
    Ok(out)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<Question>, EnvError> {
    read_dataset(std::io::BufReader::new(std::fs::File::open(path)?))
}

pub fn write_dataset(questions: &[Question], mut out: impl Write) -> Result<(), EnvError> {
    for q in questions {
        serde_json::to_writer(&mut out, q).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
