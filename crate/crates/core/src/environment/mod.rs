//! Document store, BM25 retrieval, question sets and the tool environment
//! used by the workflow task.

mod bm25;
mod corpus;
mod dataset;
mod workflow;

use thiserror::Error;

pub use bm25::{build_index, retrieve, tokenize, Hit, RetrievalIndex, BM25_B, BM25_K1};
pub use corpus::{load_corpus, read_corpus, split_sentences, write_corpus, Corpus, Document};
pub use dataset::{load_dataset, read_dataset, write_dataset, Question};
pub use workflow::{
    env_step, invalid_action_observation, parse_action, ActionParseError, EnvState, Observation,
    ToolEnv, WorkflowAction,
};

/// Splits ranked items positionally: ranks 1, 3, 5, ... go to the first
/// shard and ranks 2, 4, 6, ... to the second.
pub fn shard_docs<T: Clone>(ranked: &[T]) -> (Vec<T>, Vec<T>) {
    let a = ranked.iter().step_by(2).cloned().collect();
    let b = ranked.iter().skip(1).step_by(2).cloned().collect();
    (a, b)
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
