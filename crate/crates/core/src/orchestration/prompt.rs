use std::collections::BTreeSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{OrchestrationError, Role, TurnEdge, TurnSyntax};
use crate::codecs::{AgentId, Message, MessageId, Payload};
use crate::model::{PromptInput, TokenId, Tokenizer};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PromptSegment {
    Literal(String),
    /// Splices the referenced message's token ids verbatim.
    Message(MessageId),
    /// A template slot that was never filled; assembling it is an error.
    Slot(String),
    Turn(Role, TurnEdge),
}

/// Every message sent during one protocol run; ids are dense indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MessageStore {
    messages: Vec<Message>,
}

impl MessageStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn next_id(&self) -> MessageId {
        MessageId(self.messages.len())
    }

    /// Stores `msg`, which must carry [`next_id`](Self::next_id).
    pub fn push(&mut self, msg: Message) -> MessageId {
        assert_eq!(msg.id, self.next_id(), "message ids are assigned densely");
        self.messages.push(msg);
        MessageId(self.messages.len() - 1)
    }

    pub fn get(&self, id: MessageId) -> Option<&Message> {
        self.messages.get(id.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Message> {
        self.messages.iter()
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageSpan {
    pub message: MessageId,
    pub sender: AgentId,
    /// Absolute sequence positions `[start, end)`.
    pub start: usize,
    pub end: usize,
}

impl MessageSpan {
    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnMark {
    pub role: Role,
    pub edge: TurnEdge,
    pub position: usize,
}

/// Token ids for one prompt increment, starting at absolute position
/// `start` of the receiving session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssembledPrompt {
    pub start: usize,
    pub ids: Vec<TokenId>,
    pub spans: Vec<MessageSpan>,
    pub turns: Vec<TurnMark>,
}

impl AssembledPrompt {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn span(&self, id: MessageId) -> Option<&MessageSpan> {
        self.spans.iter().find(|s| s.message == id)
    }

    /// Ids covered by an absolute range.
    pub fn ids_at(&self, range: Range<usize>) -> &[TokenId] {
        &self.ids[range.start - self.start..range.end - self.start]
    }

    /// Model inputs: token ids, except that spans of CIPHER messages feed
    /// their weighted embeddings.
    pub fn inputs(&self, store: &MessageStore) -> Result<Vec<PromptInput>, OrchestrationError> {
        let mut inputs: Vec<PromptInput> =
            self.ids.iter().map(|&t| PromptInput::Token(t)).collect();
        for span in &self.spans {
            let msg = store
                .get(span.message)
                .ok_or(OrchestrationError::UnknownMessage(span.message))?;
            if let Payload::Cipher(c) = &msg.payload {
                for (i, e) in c.embeddings.iter().enumerate() {
                    inputs[span.start - self.start + i] = PromptInput::Embedding(e.clone());
                }
            }
        }
        Ok(inputs)
    }
}

pub struct PromptContext<'a> {
    pub tokenizer: &'a Tokenizer,
    pub syntax: &'a TurnSyntax,
    pub messages: &'a MessageStore,
}

/// Tokenizes each segment on its own and concatenates, recording the span
/// of every message reference.
pub fn assemble_prompt(
    segments: &[PromptSegment],
    ctx: &PromptContext<'_>,
    start: usize,
    max_seq: usize,
) -> Result<AssembledPrompt, OrchestrationError> {
    let mut ids = Vec::new();
    let mut spans = Vec::new();
    let mut turns = Vec::new();
    let mut seen = BTreeSet::new();
    for seg in segments {
        match seg {
            PromptSegment::Literal(text) => ids.extend(ctx.tokenizer.encode(text)),
            PromptSegment::Turn(role, edge) => {
                turns.push(TurnMark {
                    role: *role,
                    edge: *edge,
                    position: start + ids.len(),
                });
                ids.extend(ctx.tokenizer.encode(ctx.syntax.marker(*role, *edge)));
            }
            PromptSegment::Slot(name) => {
                return Err(OrchestrationError::UnfilledSlot(name.clone()))
            }
            PromptSegment::Message(id) => {
                let msg = ctx
                    .messages
                    .get(*id)
                    .ok_or(OrchestrationError::UnknownMessage(*id))?;
                if !seen.insert(*id) {
                    return Err(OrchestrationError::DuplicateSpan(*id));
                }
                let s = start + ids.len();
                ids.extend_from_slice(&msg.tokens);
                spans.push(MessageSpan {
                    message: *id,
                    sender: msg.sender,
                    start: s,
                    end: s + msg.tokens.len(),
                });
            }
        }
    }
    let needed = start + ids.len();
    if needed > max_seq {
        return Err(OrchestrationError::Overflow { needed, max_seq });
    }
    Ok(AssembledPrompt {
        start,
        ids,
        spans,
        turns,
    })
}
