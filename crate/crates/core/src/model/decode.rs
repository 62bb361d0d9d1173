//! Decoding settings, token selection and generation records.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{HiddenState, ModelError, TokenId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    Greedy,
    Sampled,
}

/// Token-selection parameters. Greedy mode ignores every sampling field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeSettings {
    pub mode: DecodeMode,
    pub temperature: f32,
    pub top_p: f32,
    /// 0 disables top-k filtering.
    pub top_k: usize,
    pub repetition_penalty: f32,
    pub max_new_tokens: usize,
    pub seed: u64,
}

impl DecodeSettings {
    pub fn greedy(max_new_tokens: usize) -> Self {
        Self {
            mode: DecodeMode::Greedy,
            temperature: 0.0,
            top_p: 1.0,
            top_k: 0,
            repetition_penalty: 1.0,
            max_new_tokens,
            seed: 0,
        }
    }

    /// Qwen2.5-Instruct default sampling: temperature 0.7, top-p 0.8,
    /// top-k 20, repetition penalty 1.05.
    pub fn qwen_default(max_new_tokens: usize, seed: u64) -> Self {
        Self {
            mode: DecodeMode::Sampled,
            temperature: 0.7,
            top_p: 0.8,
            top_k: 20,
            repetition_penalty: 1.05,
            max_new_tokens,
            seed,
        }
    }

    /// Llama3.1-Instruct default sampling: temperature 0.6, top-p 0.9.
    pub fn llama_default(max_new_tokens: usize, seed: u64) -> Self {
        Self {
            mode: DecodeMode::Sampled,
            temperature: 0.6,
            top_p: 0.9,
            top_k: 0,
            repetition_penalty: 1.0,
            max_new_tokens,
            seed,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidSettings(m.to_string()));
        if self.max_new_tokens == 0 {
            return bad("max_new_tokens must be at least 1");
        }
        if self.mode == DecodeMode::Greedy {
            return Ok(());
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return bad("temperature must be finite and non-negative");
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad("top_p must lie in (0, 1]");
        }
        if !(self.repetition_penalty.is_finite() && self.repetition_penalty > 0.0) {
            return bad("repetition_penalty must be positive");
        }
        Ok(())
    }
}

/// Decides when generation halts early, given the tokens generated so far.
pub trait StopRule: Send + Sync {
    fn should_stop(&self, generated: &[TokenId]) -> bool;
}

impl<F> StopRule for F
where
    F: Fn(&[TokenId]) -> bool + Send + Sync,
{
    fn should_stop(&self, generated: &[TokenId]) -> bool {
        self(generated)
    }
}

/// Where a CIPHER sender takes its per-step distribution from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CipherSource {
    /// `softmax(logits / temperature)`; temperature 0 is the one-hot argmax.
    Resoftmax { temperature: f32 },
    /// The distribution the sampler used (after penalty, top-k and top-p).
    SamplingPass,
}

/// Extra per-call generation behavior.
#[derive(Clone, Default)]
pub struct GenerateOptions {
    pub stop: Option<Arc<dyn StopRule>>,
    /// Teacher-forced continuation; replaces token selection entirely.
    pub forced: Option<Vec<TokenId>>,
    /// Feed the probability-weighted embedding back as the next input and
    /// render each step as its argmax token.
    pub cipher: Option<CipherSource>,
    /// Keep per-step logits and distributions in the record.
    pub record_distributions: bool,
}

impl fmt::Debug for GenerateOptions {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GenerateOptions")
            .field("stop", &self.stop.is_some())
            .field("forced", &self.forced.as_ref().map(Vec::len))
            .field("cipher", &self.cipher)
            .field("record_distributions", &self.record_distributions)
            .finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Length,
    Stop,
    /// A forced continuation ran out.
    ForcedEnd,
}

/// Hidden states at one layer: index 0 is the last prompt position, index
/// `i` the position holding generated token `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenStateTrajectory {
    pub layer: usize,
    pub states: Vec<HiddenState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRecord {
    pub tokens: Vec<TokenId>,
    /// Absolute position of the first generated token.
    pub first_position: usize,
    pub trajectories: BTreeMap<usize, HiddenStateTrajectory>,
    pub step_logits: Option<Vec<Vec<f32>>>,
    pub step_distributions: Option<Vec<Vec<f32>>>,
    /// CIPHER feedback embeddings, one per generated token.
    pub fed_embeddings: Option<Vec<Vec<f32>>>,
    /// Sum of log-probabilities of the emitted tokens under the model.
    pub logprob: f64,
    pub finish_reason: FinishReason,
}

/// Numerically stable softmax at a temperature; `temperature == 0` gives
/// the one-hot distribution on the first maximal logit.
pub fn softmax(logits: &[f32], temperature: f32) -> Vec<f32> {
    if temperature == 0.0 {
        let mut out = vec![0.0; logits.len()];
        out[argmax(logits)] = 1.0;
        return out;
    }
    let t = temperature as f64;
    let max = logits
        .iter()
        .fold(f64::NEG_INFINITY, |m, &x| m.max(x as f64));
    let exps: Vec<f64> = logits
        .iter()
        .map(|&x| ((x as f64 - max) / t).exp())
        .collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| (e / z) as f32).collect()
}

/// Index of the first maximal entry.
pub fn argmax(xs: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn log_softmax_at(logits: &[f32], idx: usize) -> f64 {
    let max = logits
        .iter()
        .fold(f64::NEG_INFINITY, |m, &x| m.max(x as f64));
    let z: f64 = logits.iter().map(|&x| (x as f64 - max).exp()).sum();
    logits[idx] as f64 - max - z.ln()
}

/// Applies penalty, temperature, top-k and top-p; returns the sampling
/// distribution over the full vocabulary.
pub fn sampling_distribution(
    logits: &[f32],
    settings: &DecodeSettings,
    context: &[TokenId],
) -> Vec<f32> {
    let mut l = logits.to_vec();
    if settings.repetition_penalty != 1.0 {
        let mut seen = vec![false; l.len()];
        for &t in context {
            if let Some(s) = seen.get_mut(t as usize) {
                *s = true;
            }
        }
        for (x, _) in l.iter_mut().zip(&seen).filter(|(_, &s)| s) {
            *x = if *x > 0.0 {
                *x / settings.repetition_penalty
            } else {
                *x * settings.repetition_penalty
            };
        }
    }
    let mut probs = softmax(&l, settings.temperature);
    if settings.temperature == 0.0 {
        return probs;
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut keep = order.len();
    if settings.top_k > 0 {
        keep = keep.min(settings.top_k);
    }
    if settings.top_p < 1.0 {
        let mut cum = 0.0f64;
        for (rank, &i) in order.iter().enumerate().take(keep) {
            cum += probs[i] as f64;
            if cum >= settings.top_p as f64 {
                keep = rank + 1;
                break;
            }
        }
    }
    for &i in &order[keep..] {
        probs[i] = 0.0;
    }
    let z: f64 = probs.iter().map(|&p| p as f64).sum();
    probs.iter_mut().for_each(|p| *p = (*p as f64 / z) as f32);
    probs
}

/// Draws an index from a distribution by inverse CDF.
pub fn sample_index<R: Rng>(probs: &[f32], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0f64;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            cum += p as f64;
            last = i;
            if u < cum {
                return i;
            }
        }
    }
    last
}
