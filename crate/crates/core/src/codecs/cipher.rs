use serde::{Deserialize, Serialize};

use super::CodecError;
use crate::model::{argmax, softmax, LanguageModel, TokenId};

const NORMALIZATION_TOLERANCE: f64 = 1e-6;

/// Expected input embeddings, one per generated step, plus the argmax
/// tokens used when the message has to be shown as text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CipherEmbeddings {
    pub embeddings: Vec<Vec<f32>>,
    pub rendering: Vec<TokenId>,
}

impl CipherEmbeddings {
    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }
}

/// Per-step distributions from raw logits; temperature 0 is the argmax limit.
pub fn cipher_distributions(
    logits: &[Vec<f32>],
    temperature: f32,
) -> Result<Vec<Vec<f32>>, CodecError> {
    if !temperature.is_finite() || temperature < 0.0 {
        return Err(CodecError::InvalidTemperature(temperature));
    }
    logits
        .iter()
        .enumerate()
        .map(|(i, l)| {
            if l.iter().any(|x| x.is_nan()) {
                return Err(CodecError::InvalidDistribution {
                    index: i,
                    reason: "NaN logit".into(),
                });
            }
            Ok(softmax(l, temperature))
        })
        .collect()
}

/// Maps each distribution `p` to `Σ_v p(v) · E[v]` over the model's input
/// embedding table.
pub fn encode_cipher(
    distributions: &[Vec<f32>],
    model: &dyn LanguageModel,
) -> Result<CipherEmbeddings, CodecError> {
    let vocab = model.config().vocab_size;
    let mut embeddings = Vec::with_capacity(distributions.len());
    let mut rendering = Vec::with_capacity(distributions.len());
    for (i, p) in distributions.iter().enumerate() {
        let bad = |reason: String| CodecError::InvalidDistribution { index: i, reason };
        if p.len() != vocab {
            return Err(bad(format!(
                "length {} does not match vocabulary {vocab}",
                p.len()
            )));
        }
        if p.iter().any(|x| x.is_nan()) {
            return Err(bad("contains NaN".into()));
        }
        if p.iter().any(|&x| x < 0.0 || x.is_infinite()) {
            return Err(bad("contains a negative or infinite entry".into()));
        }
        let total: f64 = p.iter().map(|&x| x as f64).sum();
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(bad(format!("sums to {total}")));
        }
        embeddings.push(model.weighted_embedding(p)?);
        rendering.push(argmax(p) as TokenId);
    }
    Ok(CipherEmbeddings {
        embeddings,
        rendering,
    })
}
