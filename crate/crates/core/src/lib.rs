//! State-delta communication between language-model agents.
//!
//! * [`model`]: transformer inference with per-layer capture and injection.
//! * [`codecs`]: messages, delta encoding, CIPHER embeddings, wire format.
//! * [`environment`]: documents, retrieval and the ReAct tool interface.
//! * [`orchestration`]: prompt assembly and multi-agent protocols.
//! * [`evalkit`]: answer extraction and scoring.
//! * [`lab`]: layer sweeps, experiment runs and reports.
//!
//! A sender captures layers 1 and 2 while decoding; the receiver gets the
//! message tokens plus the deltas injected at their positions:
//!
//! ```
//! use statedelta::codecs::{build_injection_plan, encode_sde, Message, MessageId, Payload};
//! use statedelta::model::{
//!     token_inputs, DecodeSettings, GenerateOptions, HookBus, LanguageModel, ModelConfig,
//!     Tokenizer,
//! };
//! use statedelta::ToyModelF32;
//!
//! let cfg = ModelConfig::toy();
//! let model = ToyModelF32::seeded(cfg.clone(), 7).unwrap();
//! let tok = Tokenizer::for_vocab(cfg.vocab_size).unwrap();
//! let rec = model
//!     .session()
//!     .generate(
//!         &token_inputs(&tok.encode("Passage 1: the river")),
//!         &DecodeSettings::greedy(8),
//!         &HookBus::capturing([1, 2]),
//!         &GenerateOptions::default(),
//!     )
//!     .unwrap();
//! let deltas = rec.trajectories.values().map(|t| encode_sde(t).unwrap()).collect();
//! let text = tok.decode(&rec.tokens);
//! let msg = Message::new(MessageId(0), 0, rec.tokens, text, Payload::Deltas(deltas)).unwrap();
//!
//! let mut prompt = tok.encode("Partner message: ");
//! let start = prompt.len();
//! prompt.extend(&msg.tokens);
//! let plan = build_injection_plan(&msg, start..prompt.len()).unwrap();
//! let trace = model
//!     .session()
//!     .trace(&token_inputs(&prompt), &HookBus::new().with_plan(plan))
//!     .unwrap();
//! assert_eq!(trace.layer_states.len(), prompt.len());
//! ```

pub mod codecs;
pub mod environment;
pub mod evalkit;
pub mod lab;
pub mod model;
pub mod orchestration;
pub mod scalar;
pub mod seed;
pub mod setting;

pub use scalar::{DType, Scalar};
pub use setting::{Method, Task};

pub type ToyModelF32 = model::ToyModel<f32>;
pub type ToyModelF64 = model::ToyModel<f64>;
