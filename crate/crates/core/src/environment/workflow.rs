use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{retrieve, Corpus, RetrievalIndex};

const SIMILAR_TITLES: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verb", content = "arg")]
pub enum WorkflowAction {
    Search(String),
    Lookup(String),
    Finish(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum ActionParseError {
    #[error("no action found")]
    NoAction,
    #[error("unknown action `{0}`")]
    UnknownVerb(String),
    #[error("action `{0}` has an empty argument")]
    EmptyArgument(String),
    #[error("action argument is not closed with `]`")]
    Unterminated,
    #[error("malformed action line")]
    Malformed,
}

/// Parses `Action <k>: <Verb>[<arg>]` starting at `s` (just past "Action").
fn parse_one(s: &str) -> Result<WorkflowAction, ActionParseError> {
    let s = s.trim_start_matches([' ', '\t']);
    let digits = s.len() - s.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    let s = &s[digits..];
    let s = s
        .strip_prefix(':')
        .ok_or(ActionParseError::Malformed)?
        .trim_start_matches([' ', '\t']);
    let open = s.find('[').ok_or(ActionParseError::Malformed)?;
    let verb = &s[..open];
    if verb.is_empty() || !verb.chars().all(|c| c.is_ascii_alphabetic()) {
        return Err(ActionParseError::Malformed);
    }
    let body = &s[open + 1..];
    let mut depth = 1usize;
    let mut close = None;
    for (i, c) in body.char_indices() {
        match c {
            '[' => depth += 1,
            ']' => {
                depth -= 1;
                if depth == 0 {
                    close = Some(i);
                    break;
                }
            }
            '\n' => break,
            _ => {}
        }
    }
    let arg = body[..close.ok_or(ActionParseError::Unterminated)?]
        .trim()
        .to_string();
    if arg.is_empty() {
        return Err(ActionParseError::EmptyArgument(verb.to_string()));
    }
    match verb {
        "Search" => Ok(WorkflowAction::Search(arg)),
        "Lookup" => Ok(WorkflowAction::Lookup(arg)),
        "Finish" => Ok(WorkflowAction::Finish(arg)),
        other => Err(ActionParseError::UnknownVerb(other.to_string())),
    }
}

/// The last well-formed action in `text`. When none parses, the failure
/// of the last attempted action line is reported.
pub fn parse_action(text: &str) -> Result<WorkflowAction, ActionParseError> {
    let mut last_err = ActionParseError::NoAction;
    for (start, _) in text.rmatch_indices("Action") {
        match parse_one(&text[start + "Action".len()..]) {
            Ok(a) => return Ok(a),
            Err(ActionParseError::Malformed) => {}
            Err(e) if last_err == ActionParseError::NoAction => last_err = e,
            Err(_) => {}
        }
    }
    Err(last_err)
}

/// Observation returned for an action that failed to parse.
pub fn invalid_action_observation(err: &ActionParseError) -> Observation {
    Observation(format!("Invalid action ({err}). Valid actions are Search[entity], Lookup[keyword] and Finish[answer]."))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Observation(pub String);

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EnvState {
    /// Corpus index of the passage the last successful Search opened.
    pub current: Option<usize>,
    pub lookup_keyword: Option<String>,
    pub lookup_cursor: usize,
    pub finished: bool,
    pub answer: Option<String>,
}

/// Read-only tool backend: a corpus and its index.
#[derive(Debug, Clone, Copy)]
pub struct ToolEnv<'a> {
    pub corpus: &'a Corpus,
    pub index: &'a RetrievalIndex,
}

/// Applies one action, returning the next state and the observation.
pub fn env_step(
    env: ToolEnv<'_>,
    state: &EnvState,
    action: &WorkflowAction,
) -> (EnvState, Observation) {
    let mut next = state.clone();
    let obs = match action {
        WorkflowAction::Search(entity) => match env.corpus.find_title(entity) {
            Some(i) => {
                next.current = Some(i);
                next.lookup_keyword = None;
                next.lookup_cursor = 0;
                env.corpus.docs()[i].first_paragraph().to_string()
            }
            None => {
                let titles: Vec<String> = retrieve(env.index, entity, SIMILAR_TITLES)
                    .iter()
                    .map(|h| format!("'{}'", env.corpus.docs()[h.index].title))
                    .collect();
                format!(
                    "Could not find [{entity}]. Similar: [{}].",
                    titles.join(", ")
                )
            }
        },
        WorkflowAction::Lookup(keyword) => match state.current {
            None => "There is no current passage. Search for an entity first.".to_string(),
            Some(i) => {
                let needle = keyword.to_lowercase();
                let hits: Vec<&String> = env.corpus.docs()[i]
                    .sentences()
                    .iter()
                    .filter(|s| s.to_lowercase().contains(&needle))
                    .collect();
                if state.lookup_keyword.as_deref() != Some(keyword.as_str()) {
                    next.lookup_keyword = Some(keyword.clone());
                    next.lookup_cursor = 0;
                }
                let cursor = next.lookup_cursor;
                if cursor >= hits.len() {
                    "No more results.".to_string()
                } else {
                    next.lookup_cursor += 1;
                    format!("(Result {} / {}) {}", cursor + 1, hits.len(), hits[cursor])
                }
            }
        },
        WorkflowAction::Finish(answer) => {
            next.finished = true;
            next.answer = Some(answer.clone());
            "Episode finished.".to_string()
        }
    };
    (next, Observation(obs))
}
