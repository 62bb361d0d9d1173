use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{CipherEmbeddings, CodecError, DeltaTrajectory};
use crate::model::{HiddenState, InjectionPlan, TokenId};

pub type AgentId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MessageId(pub usize);

/// Original hidden states `h_1..h_n` at one layer (the ablation payload).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawStateTrajectory {
    pub layer: usize,
    pub states: Vec<HiddenState>,
}

/// Method-specific latent content riding along with a message's tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "data", rename_all = "snake_case")]
pub enum Payload {
    None,
    Deltas(Vec<DeltaTrajectory>),
    RawStates(Vec<RawStateTrajectory>),
    Cipher(CipherEmbeddings),
}

impl Payload {
    pub fn kind(&self) -> &'static str {
        match self {
            Payload::None => "none",
            Payload::Deltas(_) => "deltas",
            Payload::RawStates(_) => "raw_states",
            Payload::Cipher(_) => "cipher",
        }
    }

    /// Layer ids carried by a layered payload, in payload order.
    pub fn layers(&self) -> Vec<usize> {
        match self {
            Payload::Deltas(d) => d.iter().map(DeltaTrajectory::layer).collect(),
            Payload::RawStates(r) => r.iter().map(|r| r.layer).collect(),
            _ => Vec::new(),
        }
    }

    /// Entry counts per layer (or per embedding sequence).
    fn lengths(&self) -> Vec<usize> {
        match self {
            Payload::None => Vec::new(),
            Payload::Deltas(d) => d.iter().map(DeltaTrajectory::len).collect(),
            Payload::RawStates(r) => r.iter().map(|r| r.states.len()).collect(),
            Payload::Cipher(c) => vec![c.embeddings.len(), c.rendering.len()],
        }
    }
}

/// The unit of inter-agent transfer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub id: MessageId,
    pub sender: AgentId,
    pub tokens: Vec<TokenId>,
    pub text: String,
    pub payload: Payload,
}

impl Message {
    /// Builds a message, checking that every payload sequence has one entry
    /// per token.
    pub fn new(
        id: MessageId,
        sender: AgentId,
        tokens: Vec<TokenId>,
        text: String,
        payload: Payload,
    ) -> Result<Self, CodecError> {
        for n in payload.lengths() {
            if n != tokens.len() {
                return Err(CodecError::LengthMismatch {
                    payload: n,
                    tokens: tokens.len(),
                });
            }
        }
        Ok(Self {
            id,
            sender,
            tokens,
            text,
            payload,
        })
    }

    /// This message with every delta replaced by zeros.
    pub fn with_zeroed_deltas(&self) -> Self {
        let payload = match &self.payload {
            Payload::Deltas(ds) => Payload::Deltas(
                ds.iter()
                    .map(|d| {
                        DeltaTrajectory::zeros(
                            d.layer(),
                            d.len(),
                            d.deltas().first().map_or(0, |s| s.len()),
                        )
                    })
                    .collect(),
            ),
            other => other.clone(),
        };
        Self {
            payload,
            ..self.clone()
        }
    }
}

/// Maps token `i` of `msg` to prompt position `span.start + i` at every
/// payload layer. Delta payloads add `s_i`; raw-state payloads add `h_i`.
pub fn build_injection_plan(
    msg: &Message,
    span: Range<usize>,
) -> Result<InjectionPlan, CodecError> {
    let n = msg.tokens.len();
    if span.end < span.start || span.end - span.start != n {
        return Err(CodecError::SpanMismatch {
            span: span.end.saturating_sub(span.start),
            tokens: n,
        });
    }
    let mut plan = InjectionPlan::new();
    match &msg.payload {
        Payload::Deltas(ds) => {
            for d in ds {
                for (i, s) in d.deltas().iter().enumerate() {
                    plan.insert(d.layer(), span.start + i, s.clone());
                }
            }
        }
        Payload::RawStates(rs) => {
            for r in rs {
                for (i, h) in r.states.iter().enumerate() {
                    plan.insert(r.layer, span.start + i, h.clone());
                }
            }
        }
        other => return Err(CodecError::NotInjectable(other.kind())),
    }
    Ok(plan)
}

/// `h + s`, elementwise.
pub fn inject(h: &HiddenState, s: &HiddenState) -> Result<HiddenState, CodecError> {
    if h.len() != s.len() {
        return Err(CodecError::WidthMismatch {
            expected: h.len(),
            found: s.len(),
        });
    }
    Ok(HiddenState::new(
        h.iter().zip(s.iter()).map(|(&a, &b)| a + b).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hs(v: &[f32]) -> HiddenState {
        HiddenState::new(v.to_vec())
    }

    fn sde_message(n: usize) -> Message {
        let deltas = (0..n).map(|i| hs(&[i as f32, 1.0])).collect();
        Message::new(
            MessageId(0),
            1,
            (0..n as TokenId).collect(),
            String::new(),
            Payload::Deltas(vec![DeltaTrajectory::from_deltas(3, deltas).unwrap()]),
        )
        .unwrap()
    }

    #[test]
    fn plan_maps_tokens_onto_span() {
        let plan = build_injection_plan(&sde_message(2), 10..12).unwrap();
        assert_eq!(plan.positions(3).collect::<Vec<_>>(), vec![10, 11]);
        assert_eq!(plan.get(3, 10).unwrap().as_slice(), &[0.0, 1.0]);
        assert_eq!(plan.get(3, 11).unwrap().as_slice(), &[1.0, 1.0]);
        assert_eq!(plan.layers().collect::<Vec<_>>(), vec![3]);
    }

    #[test]
    fn empty_message_gives_empty_plan() {
        let plan = build_injection_plan(&sde_message(0), 4..4).unwrap();
        assert!(plan.is_empty());
    }

    #[test]
    fn span_length_must_match() {
        assert!(matches!(
            build_injection_plan(&sde_message(2), 10..13),
            Err(CodecError::SpanMismatch { .. })
        ));
    }

    #[test]
    fn nl_payload_is_not_injectable() {
        let m = Message::new(MessageId(1), 0, vec![1, 2], "hi".into(), Payload::None).unwrap();
        assert_eq!(
            build_injection_plan(&m, 0..2).unwrap_err(),
            CodecError::NotInjectable("none")
        );
    }

    #[test]
    fn length_discipline_enforced() {
        let d = DeltaTrajectory::from_deltas(0, vec![hs(&[1.0])]).unwrap();
        let err = Message::new(
            MessageId(0),
            0,
            vec![1, 2],
            String::new(),
            Payload::Deltas(vec![d]),
        )
        .unwrap_err();
        assert_eq!(
            err,
            CodecError::LengthMismatch {
                payload: 1,
                tokens: 2
            }
        );
    }

    #[test]
    fn inject_arithmetic() {
        assert_eq!(
            inject(&hs(&[0.5, 0.5]), &hs(&[2.0, 3.0])).unwrap(),
            hs(&[2.5, 3.5])
        );
        let h = hs(&[0.25, -4.0]);
        assert_eq!(inject(&h, &HiddenState::zeros(2)).unwrap(), h);
        let s = hs(&[2.0, 0.5]);
        assert_eq!(inject(&inject(&h, &s).unwrap(), &s.map(|x| -x)).unwrap(), h);
        let h = hs(&[0.1, -4.3]);
        let back = inject(&inject(&h, &s).unwrap(), &s.map(|x| -x)).unwrap();
        assert!(back
            .iter()
            .zip(h.iter())
            .all(|(a, b)| (a - b).abs() <= 1e-6));
        assert!(inject(&h, &hs(&[1.0])).is_err());
    }

    #[test]
    fn zeroed_deltas_keep_shape() {
        let z = sde_message(3).with_zeroed_deltas();
        match &z.payload {
            Payload::Deltas(d) => {
                assert_eq!(d[0].len(), 3);
                assert!(d[0].deltas().iter().all(|s| s.iter().all(|&x| x == 0.0)));
            }
            _ => unreachable!(),
        }
    }
}
