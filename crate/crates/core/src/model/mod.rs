//! Decoder-only transformer inference with hidden-state hooks.
//!
//! [`ToyModel`] is generic over the compute [`Scalar`](crate::Scalar);
//! callers usually hold it behind the object-safe [`LanguageModel`] trait
//! so the protocol layers stay independent of the element type.

mod archive;
mod config;
mod decode;
mod hooks;
mod tokenizer;
mod toy;
mod weights;

use std::ops::Deref;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use archive::{
    export_archive, load_archive, read_archive, write_archive, ArchiveModel, ARCHIVE_MAGIC,
};
pub use config::ModelConfig;
pub use decode::{
    argmax, sample_index, sampling_distribution, softmax, CipherSource, DecodeMode, DecodeSettings,
    FinishReason, GenerateOptions, GenerationRecord, HiddenStateTrajectory, StopRule,
};
pub use hooks::{HookBus, InjectionPlan};
pub use tokenizer::{Tokenizer, TokenizerMode, BYTE_TOKENS};
pub use toy::{ForwardTrace, Session, ToyModel};
pub use weights::{expected_shapes, LayerWeights, Tensor, Weights};

pub type TokenId = u32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("invalid decode settings: {0}")]
    InvalidSettings(String),
    #[error("unsupported dtype `{0}`")]
    UnsupportedDType(String),
    #[error("token id {id} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { id: TokenId, vocab: usize },
    #[error("sequence of {needed} positions exceeds max_seq {max_seq}")]
    PositionOverflow { needed: usize, max_seq: usize },
    #[error("injection at position {position} outside the processed span [{start}, {end})")]
    InjectionOutOfRange {
        position: usize,
        start: usize,
        end: usize,
    },
    #[error("layer {layer} out of range for a {n_layers}-layer model")]
    LayerOutOfRange { layer: usize, n_layers: usize },
    #[error("vector width {found} does not match d_model {expected}")]
    WidthMismatch { expected: usize, found: usize },
    #[error("prompt is empty and the session has no context")]
    EmptyPrompt,
    #[error("distribution invalid: {0}")]
    InvalidDistribution(String),
    #[error("tensor `{tensor}` has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        tensor: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("archive is missing tensor `{0}`")]
    MissingTensor(String),
    #[error("archive has unexpected tensor `{0}`")]
    UnexpectedTensor(String),
    #[error("archive truncated: {0}")]
    Truncated(String),
    #[error("malformed archive header: {0}")]
    MalformedHeader(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for ModelError {
    fn from(e: std::io::Error) -> Self {
        ModelError::Io(e.to_string())
    }
}

/// A residual-stream vector (always stored as `f32`).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HiddenState(Vec<f32>);

impl HiddenState {
    pub fn new(values: Vec<f32>) -> Self {
        Self(values)
    }

    pub fn zeros(width: usize) -> Self {
        Self(vec![0.0; width])
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self(self.0.iter().map(|&x| f(x)).collect())
    }

    pub fn norm(&self) -> f32 {
        self.0
            .iter()
            .map(|&x| (x as f64) * (x as f64))
            .sum::<f64>()
            .sqrt() as f32
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

impl Deref for HiddenState {
    type Target = [f32];

    fn deref(&self) -> &[f32] {
        &self.0
    }
}

impl From<Vec<f32>> for HiddenState {
    fn from(v: Vec<f32>) -> Self {
        Self(v)
    }
}

/// One prompt position: a vocabulary token or a raw input embedding that
/// bypasses the embedding table.
#[derive(Debug, Clone, PartialEq)]
pub enum PromptInput {
    Token(TokenId),
    Embedding(Vec<f32>),
}

impl From<TokenId> for PromptInput {
    fn from(t: TokenId) -> Self {
        PromptInput::Token(t)
    }
}

pub fn token_inputs(tokens: &[TokenId]) -> Vec<PromptInput> {
    tokens.iter().copied().map(PromptInput::Token).collect()
}

/// A read-only model that can open decoding sessions.
pub trait LanguageModel: Send + Sync {
    fn config(&self) -> &ModelConfig;

    /// Row `t` of the input embedding table.
    fn embedding_row(&self, t: TokenId) -> Result<Vec<f32>, ModelError>;

    /// `Σ_v probs[v] · embedding_row(v)`, accumulated in f64.
    fn weighted_embedding(&self, probs: &[f32]) -> Result<Vec<f32>, ModelError>;

    /// SHA-256 of every weight tensor.
    fn checksum(&self) -> String;

    fn session(&self) -> Box<dyn DecodeSession + '_>;
}

/// A stateful decoding context with its own key/value cache.
///
/// Tokens processed in a session stay cached; later calls continue the
/// same sequence and never re-process earlier positions.
pub trait DecodeSession: Send {
    /// Number of positions already in the cache.
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Processes `prompt` (injecting per `hooks`), then decodes.
    fn generate(
        &mut self,
        prompt: &[PromptInput],
        settings: &DecodeSettings,
        hooks: &HookBus,
        opts: &GenerateOptions,
    ) -> Result<GenerationRecord, ModelError>;

    /// Processes `prompt` and records every layer's output and the logits at
    /// every position.
    fn trace(
        &mut self,
        prompt: &[PromptInput],
        hooks: &HookBus,
    ) -> Result<ForwardTrace, ModelError>;

    /// Mean log-probability of `continuation` after `prompt`. The session
    /// is left holding both.
    fn score(
        &mut self,
        prompt: &[PromptInput],
        hooks: &HookBus,
        continuation: &[TokenId],
    ) -> Result<f64, ModelError>;

    /// Independent copy of the session state.
    fn fork(&self) -> Box<dyn DecodeSession + '_>;
}

/// One-shot generation on a fresh session.
pub fn generate(
    model: &dyn LanguageModel,
    prompt: &[PromptInput],
    settings: &DecodeSettings,
    hooks: &HookBus,
) -> Result<GenerationRecord, ModelError> {
    model
        .session()
        .generate(prompt, settings, hooks, &GenerateOptions::default())
}
