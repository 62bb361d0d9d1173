//! Converting generation records into inter-agent messages and back.
//!
//! * [`encode_sde`]: successive differences of a hidden-state trajectory.
//! * [`build_injection_plan`]: aligns a message payload to the positions its
//!   tokens occupy in a receiver prompt.
//! * [`encode_cipher`]: probability-weighted input embeddings.
//! * [`wire`]: the binary transport for layered payloads.

mod cipher;
mod message;
mod overhead;
mod sde;
pub mod wire;

use thiserror::Error;

pub use crate::model::{HiddenStateTrajectory, InjectionPlan};
pub use cipher::{cipher_distributions, encode_cipher, CipherEmbeddings};
pub use message::{
    build_injection_plan, inject, AgentId, Message, MessageId, Payload, RawStateTrajectory,
};
pub use overhead::{overhead_report, OverheadReport};
pub use sde::{encode_raw, encode_sde, reconstruct_states, DeltaTrajectory};
pub use wire::{deserialize, serialize, LayerRows, WireDType, WireExpect, WirePacket};

use crate::model::ModelError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("vector width {found} does not match {expected}")]
    WidthMismatch { expected: usize, found: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("span covers {span} positions but the message has {tokens} tokens")]
    SpanMismatch { span: usize, tokens: usize },
    #[error("payload carries {payload} entries for {tokens} tokens")]
    LengthMismatch { payload: usize, tokens: usize },
    #[error("payload kind `{0}` cannot be injected")]
    NotInjectable(&'static str),
    #[error("distribution {index} invalid: {reason}")]
    InvalidDistribution { index: usize, reason: String },
    #[error("temperature {0} must be finite and non-negative")]
    InvalidTemperature(f32),
    #[error("wire: {0}")]
    Wire(#[from] wire::WireError),
    #[error(transparent)]
    Model(#[from] ModelError),
}
