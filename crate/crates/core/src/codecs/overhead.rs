use serde::{Deserialize, Serialize};

use super::{Message, Payload};

/// Bytes per token id on the text channel.
pub const TOKEN_ID_BYTES: usize = 4;
/// Bytes per latent element (f32).
pub const LATENT_ELEMENT_BYTES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OverheadReport {
    pub token_bytes: usize,
    pub latent_bytes: usize,
    /// `latent_bytes / token_bytes`; 0 when either side is empty.
    pub ratio: f64,
}

impl OverheadReport {
    pub fn accumulate(&mut self, other: &OverheadReport) {
        self.token_bytes += other.token_bytes;
        self.latent_bytes += other.latent_bytes;
        self.ratio = ratio(self.latent_bytes, self.token_bytes);
    }
}

fn ratio(latent: usize, tokens: usize) -> f64 {
    if latent == 0 || tokens == 0 {
        0.0
    } else {
        latent as f64 / tokens as f64
    }
}

/// Latent bytes a message adds on top of its token ids.
pub fn overhead_report(msg: &Message) -> OverheadReport {
    let token_bytes = msg.tokens.len() * TOKEN_ID_BYTES;
    let elements: usize = match &msg.payload {
        Payload::None => 0,
        Payload::Deltas(ds) => ds.iter().flat_map(|d| d.deltas()).map(|s| s.len()).sum(),
        Payload::RawStates(rs) => rs.iter().flat_map(|r| &r.states).map(|s| s.len()).sum(),
        Payload::Cipher(c) => c.embeddings.iter().map(Vec::len).sum(),
    };
    let latent_bytes = elements * LATENT_ELEMENT_BYTES;
    OverheadReport {
        token_bytes,
        latent_bytes,
        ratio: ratio(latent_bytes, token_bytes),
    }
}
