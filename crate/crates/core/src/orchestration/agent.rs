use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{AssembledPrompt, MessageStore, OrchestrationError, PayloadTransform, RunContext};
use crate::codecs::{
    build_injection_plan, encode_cipher, encode_raw, encode_sde, AgentId, Message, MessageId,
    Payload,
};
use crate::environment::{parse_action, Question};
use crate::evalkit::{extract_answer, AnswerFormat};
use crate::model::{
    CipherSource, DecodeSession, DecodeSettings, FinishReason, GenerateOptions, HookBus, StopRule,
    TokenId, Tokenizer,
};
use crate::setting::Method;

/// When an agent's generation may end before its token budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopKind {
    Never,
    /// Once a closed `\boxed{...}` appears.
    Boxed,
    /// Once a complete `Action k: Verb[arg]` appears.
    Action,
}

struct TextStop {
    tokenizer: Arc<Tokenizer>,
    kind: StopKind,
}

impl StopRule for TextStop {
    fn should_stop(&self, generated: &[TokenId]) -> bool {
        let last = match generated.last() {
            Some(&t) => self.tokenizer.decode(&[t]),
            None => return false,
        };
        match self.kind {
            StopKind::Never => false,
            StopKind::Boxed => {
                last.contains('}')
                    && extract_answer(&self.tokenizer.decode(generated), AnswerFormat::Boxed)
                        .is_some()
            }
            StopKind::Action => {
                last.contains(']') && parse_action(&self.tokenizer.decode(generated)).is_ok()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub id: AgentId,
    pub method: Method,
    /// Layers captured for outgoing payloads and accepted on incoming ones.
    pub layers: Vec<usize>,
    pub settings: DecodeSettings,
    pub cipher: CipherSource,
    pub stop: StopKind,
    /// Applied to every outgoing payload (ablations and sanity checks).
    pub transform: PayloadTransform,
}

/// Who is speaking, when, and about what.
#[derive(Debug, Clone, Copy)]
pub struct TurnContext<'q> {
    pub agent: AgentId,
    /// 1-based round (IA, debate) or step (workflow).
    pub round: usize,
    pub question: &'q Question,
}

/// How an agent's response tokens are chosen.
#[derive(Clone, Default)]
pub enum Policy {
    /// Decode from the model.
    #[default]
    Free,
    /// Teacher-force a scripted text per turn.
    Scripted(Arc<dyn Fn(&TurnContext<'_>) -> String + Send + Sync>),
    /// From round `from_round` on, force whichever candidate has the highest
    /// mean log-probability under the receiver's (injected) context; decode
    /// freely before. `{step}` in a candidate is replaced by the round.
    Choose {
        candidates: Vec<String>,
        from_round: usize,
    },
}

impl std::fmt::Debug for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Policy::Free => f.write_str("Free"),
            Policy::Scripted(_) => f.write_str("Scripted"),
            Policy::Choose {
                candidates,
                from_round,
            } => f
                .debug_struct("Choose")
                .field("candidates", candidates)
                .field("from_round", from_round)
                .finish(),
        }
    }
}

impl Policy {
    pub fn scripted(f: impl Fn(&TurnContext<'_>) -> String + Send + Sync + 'static) -> Self {
        Policy::Scripted(Arc::new(f))
    }
}

/// A latent payload applied while processing one message span.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppliedPlan {
    pub message: MessageId,
    pub sender: AgentId,
    pub start: usize,
    pub end: usize,
    pub kind: String,
    pub layers: Vec<usize>,
}

/// Outcome of one agent turn.
#[derive(Debug, Clone, PartialEq)]
pub struct Response {
    pub message: MessageId,
    pub applied: Vec<AppliedPlan>,
    pub finish: FinishReason,
    pub chosen: Option<usize>,
}

fn payload_for(method: Method) -> &'static [&'static str] {
    match method {
        Method::Sde => &["deltas"],
        Method::Raw => &["raw_states"],
        Method::Cipher => &["cipher"],
        Method::Nl | Method::Single => &["none"],
    }
}

/// Builds the hooks for `prompt` from the peer messages it embeds.
fn peer_hooks(
    agent: &AgentProfile,
    prompt: &AssembledPrompt,
    store: &MessageStore,
) -> Result<(HookBus, Vec<AppliedPlan>), OrchestrationError> {
    let mut hooks = HookBus::new();
    let mut applied = Vec::new();
    for span in &prompt.spans {
        let msg = store
            .get(span.message)
            .ok_or(OrchestrationError::UnknownMessage(span.message))?;
        if msg.sender == agent.id {
            continue;
        }
        let kind = msg.payload.kind();
        if !payload_for(agent.method).contains(&kind) {
            return Err(OrchestrationError::PayloadMismatch(format!(
                "{} agent {} received a `{kind}` payload from agent {}",
                agent.method, agent.id, msg.sender
            )));
        }
        let layers = msg.payload.layers();
        if let Some(bad) = layers.iter().find(|l| !agent.layers.contains(l)) {
            return Err(OrchestrationError::PayloadMismatch(format!(
                "payload layer {bad} is outside the selection {:?}",
                agent.layers
            )));
        }
        match &msg.payload {
            Payload::Deltas(_) | Payload::RawStates(_) => {
                hooks.add_plan(build_injection_plan(msg, span.range())?)
            }
            Payload::Cipher(_) | Payload::None => {}
        }
        if !matches!(msg.payload, Payload::None) {
            applied.push(AppliedPlan {
                message: span.message,
                sender: span.sender,
                start: span.start,
                end: span.end,
                kind: kind.to_string(),
                layers,
            });
        }
    }
    Ok((hooks, applied))
}

/// Runs one agent turn on `session`: injects peer payloads found in
/// `prompt`, generates, encodes the outgoing payload and stores the message.
pub fn agent_respond(
    ctx: &RunContext<'_>,
    agent: &AgentProfile,
    session: &mut dyn DecodeSession,
    prompt: &AssembledPrompt,
    store: &mut MessageStore,
    policy: &Policy,
    turn: &TurnContext<'_>,
) -> Result<Response, OrchestrationError> {
    if prompt.start != session.len() {
        return Err(OrchestrationError::PayloadMismatch(format!(
            "prompt assembled at position {} but the session holds {}",
            prompt.start,
            session.len()
        )));
    }
    let (plans, applied) = peer_hooks(agent, prompt, store)?;
    let inputs = prompt.inputs(store)?;
    let layered = agent.method.is_layered();
    let mut hooks = plans.clone();
    if layered {
        hooks = hooks.with_capture(agent.layers.iter().copied());
    }

    let mut forced: Option<Vec<TokenId>> = None;
    let mut chosen = None;
    match policy {
        Policy::Free => {}
        Policy::Scripted(script) => forced = Some(ctx.tokenizer.encode(&script(turn))),
        Policy::Choose {
            candidates,
            from_round,
        } if turn.round >= *from_round && !candidates.is_empty() => {
            let step = turn.round.to_string();
            let encoded: Vec<Vec<TokenId>> = candidates
                .iter()
                .map(|c| ctx.tokenizer.encode(&c.replace("{step}", &step)))
                .collect();
            let mut best: Option<(usize, f64)> = None;
            for (i, cand) in encoded.iter().enumerate() {
                let score = session.fork().score(&inputs, &plans, cand)?;
                if best.is_none_or(|(_, s)| score > s) {
                    best = Some((i, score));
                }
            }
            let (i, _) = best.expect("non-empty candidates");
            chosen = Some(i);
            forced = Some(encoded[i].clone());
        }
        Policy::Choose { .. } => {}
    }
    if forced.as_ref().is_some_and(Vec::is_empty) {
        return Err(OrchestrationError::PayloadMismatch(
            "forced response is empty".into(),
        ));
    }

    let cipher = agent.method == Method::Cipher;
    let opts = GenerateOptions {
        stop: (agent.stop != StopKind::Never).then(|| {
            Arc::new(TextStop {
                tokenizer: Arc::new(ctx.tokenizer.clone()),
                kind: agent.stop,
            }) as Arc<dyn StopRule>
        }),
        forced,
        cipher: cipher.then_some(agent.cipher),
        record_distributions: cipher,
    };
    let record = session.generate(&inputs, &agent.settings, &hooks, &opts)?;

    let payload = match agent.method {
        Method::Nl | Method::Single => Payload::None,
        Method::Sde => Payload::Deltas(
            agent
                .layers
                .iter()
                .map(|l| encode_sde(&record.trajectories[l]))
                .collect::<Result<_, _>>()?,
        ),
        Method::Raw => Payload::RawStates(
            agent
                .layers
                .iter()
                .map(|l| encode_raw(&record.trajectories[l]))
                .collect::<Result<_, _>>()?,
        ),
        Method::Cipher => Payload::Cipher(encode_cipher(
            record
                .step_distributions
                .as_deref()
                .expect("recorded for CIPHER"),
            ctx.model,
        )?),
    };
    let text = ctx.tokenizer.decode(&record.tokens);
    let msg = Message::new(store.next_id(), agent.id, record.tokens, text, payload)?;
    let msg = agent.transform.apply(msg);
    let id = store.push(msg);
    Ok(Response {
        message: id,
        applied,
        finish: record.finish_reason,
        chosen,
    })
}
