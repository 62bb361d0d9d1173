//! Agents, prompt assembly with exact message spans, and the protocol
//! drivers: information-asymmetry discussion, debate, sequential workflow
//! and the single-agent baselines.
//!
//! All agents of a run share one model and tokenizer. A receiver's prompt
//! splices each sender's token ids verbatim, so position `start + i` of a
//! message span holds token `i` of that message and its payload entry `i`.

mod agent;
mod prompt;
mod protocols;
mod templates;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use agent::{
    agent_respond, AgentProfile, AppliedPlan, Policy, Response, StopKind, TurnContext,
};
pub use prompt::{
    assemble_prompt, AssembledPrompt, MessageSpan, MessageStore, PromptContext, PromptSegment,
    TurnMark,
};
pub use protocols::{
    run_debate, run_ia, run_single, run_workflow, Round, TaskResult, Termination, Transcript, Turn,
};
pub use templates::{Role, Template, TemplateSet, TurnEdge, TurnSyntax, TEMPLATE_NAMES};

use crate::codecs::{CodecError, DeltaTrajectory, Message, Payload, RawStateTrajectory};
use crate::environment::EnvError;
use crate::model::{
    CipherSource, DecodeSettings, LanguageModel, ModelConfig, ModelError, Tokenizer,
};
use crate::seed::derive_seed;
use crate::setting::{Method, Task};

#[derive(Debug, Error)]
pub enum OrchestrationError {
    #[error("prompt references unknown message {0:?}")]
    UnknownMessage(crate::codecs::MessageId),
    #[error("message {0:?} appears twice in one prompt")]
    DuplicateSpan(crate::codecs::MessageId),
    #[error("template slot `{0}` was not filled")]
    UnfilledSlot(String),
    #[error("prompt needs {needed} positions, model allows {max_seq}")]
    Overflow { needed: usize, max_seq: usize },
    #[error("payload mismatch: {0}")]
    PayloadMismatch(String),
    #[error("tokenizer has {tokenizer} ids but the model vocabulary is {model}")]
    TokenizerMismatch { tokenizer: usize, model: usize },
    #[error("invalid protocol config: {0}")]
    InvalidConfig(String),
    #[error("template: {0}")]
    Template(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Shared read-only state of a run.
#[derive(Clone, Copy)]
pub struct RunContext<'a> {
    pub model: &'a dyn LanguageModel,
    pub tokenizer: &'a Tokenizer,
    pub templates: &'a TemplateSet,
    pub syntax: &'a TurnSyntax,
}

impl<'a> RunContext<'a> {
    pub fn new(
        model: &'a dyn LanguageModel,
        tokenizer: &'a Tokenizer,
        templates: &'a TemplateSet,
        syntax: &'a TurnSyntax,
    ) -> Result<Self, OrchestrationError> {
        let vocab = model.config().vocab_size;
        if tokenizer.vocab_size() > vocab {
            return Err(OrchestrationError::TokenizerMismatch {
                tokenizer: tokenizer.vocab_size(),
                model: vocab,
            });
        }
        Ok(Self {
            model,
            tokenizer,
            templates,
            syntax,
        })
    }
}

/// Alteration applied to outgoing latent payloads.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", content = "factor", rename_all = "snake_case")]
pub enum PayloadTransform {
    #[default]
    None,
    /// Replace every delta or raw state with zeros.
    Zero,
    /// Multiply every delta or raw state.
    Scale(f32),
}

impl PayloadTransform {
    pub fn apply(self, msg: Message) -> Message {
        let factor = match self {
            PayloadTransform::None => return msg,
            PayloadTransform::Zero => 0.0,
            PayloadTransform::Scale(f) => f,
        };
        let payload = match msg.payload {
            Payload::Deltas(ds) => Payload::Deltas(
                ds.iter()
                    .map(|d| {
                        if factor == 0.0 {
                            DeltaTrajectory::zeros(d.layer(), d.len(), width(d.deltas()))
                        } else {
                            d.scaled(factor)
                        }
                    })
                    .collect(),
            ),
            Payload::RawStates(rs) => Payload::RawStates(
                rs.into_iter()
                    .map(|r| RawStateTrajectory {
                        layer: r.layer,
                        states: r
                            .states
                            .iter()
                            .map(|h| {
                                if factor == 0.0 {
                                    h.map(|_| 0.0)
                                } else {
                                    h.map(|x| x * factor)
                                }
                            })
                            .collect(),
                    })
                    .collect(),
            ),
            other => other,
        };
        Message { payload, ..msg }
    }
}

fn width(states: &[crate::model::HiddenState]) -> usize {
    states.first().map_or(0, |s| s.len())
}

/// Generation token budgets per setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenBudgets {
    pub ia: usize,
    pub debate: usize,
    pub workflow_step: usize,
    pub workflow_single: usize,
}

impl Default for TokenBudgets {
    fn default() -> Self {
        Self {
            ia: 256,
            debate: 512,
            workflow_step: 100,
            workflow_single: 256,
        }
    }
}

/// Default sampling settings of a model family, used where decoding is
/// sampled (debate).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingPreset {
    #[default]
    Qwen,
    Llama,
}

impl SamplingPreset {
    pub fn settings(self, max_new_tokens: usize, seed: u64) -> DecodeSettings {
        match self {
            SamplingPreset::Qwen => DecodeSettings::qwen_default(max_new_tokens, seed),
            SamplingPreset::Llama => DecodeSettings::llama_default(max_new_tokens, seed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CipherSourceKind {
    /// Re-softmax logits at the agent's scheduled temperature.
    #[default]
    Resoftmax,
    /// Use the distribution the sampler would draw from.
    SamplingPass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolConfig {
    pub method: Method,
    /// Injection and capture layers for SDE and raw-state runs.
    pub layers: Vec<usize>,
    /// Debate agent count.
    pub agents: usize,
    pub ia_rounds: usize,
    pub debate_rounds: usize,
    pub max_steps: usize,
    pub budgets: TokenBudgets,
    pub sampling: SamplingPreset,
    pub cipher_source: CipherSourceKind,
    pub transform: PayloadTransform,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            method: Method::Nl,
            layers: Vec::new(),
            agents: 2,
            ia_rounds: 5,
            debate_rounds: 3,
            max_steps: 7,
            budgets: TokenBudgets::default(),
            sampling: SamplingPreset::default(),
            cipher_source: CipherSourceKind::default(),
            transform: PayloadTransform::default(),
        }
    }
}

impl ProtocolConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    pub fn with_layers(mut self, layers: impl IntoIterator<Item = usize>) -> Self {
        self.layers = layers.into_iter().collect();
        self
    }

    pub fn validate(&self, model: &ModelConfig) -> Result<(), OrchestrationError> {
        let bad = |m: String| Err(OrchestrationError::InvalidConfig(m));
        if self.method.is_layered() && self.layers.is_empty() {
            return bad(format!("{} needs at least one layer", self.method));
        }
        if let Some(l) = self.layers.iter().find(|&&l| l >= model.n_layers) {
            return bad(format!(
                "layer {l} out of range for a {}-layer model",
                model.n_layers
            ));
        }
        if self.layers.windows(2).any(|w| w[0] >= w[1]) {
            return bad("layers must be strictly ascending".into());
        }
        if self.agents < 2 {
            return bad("debate needs at least two agents".into());
        }
        if self.ia_rounds == 0 || self.debate_rounds == 0 || self.max_steps == 0 {
            return bad("round and step limits must be at least 1".into());
        }
        let b = &self.budgets;
        if [b.ia, b.debate, b.workflow_step, b.workflow_single].contains(&0) {
            return bad("token budgets must be at least 1".into());
        }
        Ok(())
    }

    /// Agent `index` of `n` for `task`. Debate decodes with the sampling
    /// preset; CIPHER agents in a debate run at `(index+1)/n` of the
    /// preset temperature. Everything else decodes greedily (CIPHER at
    /// temperature 0).
    pub fn profile(
        &self,
        task: Task,
        index: usize,
        n: usize,
        seed: u64,
        budget: usize,
        stop: StopKind,
    ) -> AgentProfile {
        let method = if self.method == Method::Single {
            Method::Nl
        } else {
            self.method
        };
        let (settings, temperature) = match task {
            Task::Debate => {
                let mut s = self.sampling.settings(budget, seed);
                if method == Method::Cipher {
                    s.temperature *= (index + 1) as f32 / n as f32;
                }
                let t = if method == Method::Cipher {
                    s.temperature
                } else {
                    0.0
                };
                (s, t)
            }
            _ => (DecodeSettings::greedy(budget).with_seed(seed), 0.0),
        };
        let cipher = match self.cipher_source {
            CipherSourceKind::Resoftmax => CipherSource::Resoftmax { temperature },
            CipherSourceKind::SamplingPass => CipherSource::SamplingPass,
        };
        AgentProfile {
            id: index,
            method,
            layers: if method.is_layered() {
                self.layers.clone()
            } else {
                Vec::new()
            },
            settings,
            cipher,
            stop,
            transform: self.transform,
        }
    }
}

/// Seed of `agent`'s generation in `round`.
pub fn turn_seed(run_seed: u64, agent: usize, round: usize) -> u64 {
    derive_seed(run_seed, &[agent as u64, round as u64])
}
