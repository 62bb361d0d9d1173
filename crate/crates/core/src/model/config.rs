use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::scalar::DType;

/// Shape and numerics of a decoder-only transformer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub vocab_size: usize,
    pub max_seq: usize,
    /// Hidden width of the feed-forward block.
    pub d_ff: usize,
    #[serde(default = "default_dtype")]
    pub dtype: DType,
    #[serde(default = "default_eps")]
    pub norm_eps: f64,
}

fn default_dtype() -> DType {
    DType::F32
}

fn default_eps() -> f64 {
    1e-5
}

impl ModelConfig {
    /// A config with `d_ff = 4 * d_model`, f32 compute and the default epsilon.
    pub fn new(
        n_layers: usize,
        d_model: usize,
        n_heads: usize,
        vocab_size: usize,
        max_seq: usize,
    ) -> Self {
        Self {
            n_layers,
            d_model,
            n_heads,
            vocab_size,
            max_seq,
            d_ff: 4 * d_model,
            dtype: DType::F32,
            norm_eps: default_eps(),
        }
    }

    /// The desk-scale default used by the CLI and the acceptance suite.
    pub fn toy() -> Self {
        Self::new(4, 32, 4, 512, 16_384)
    }

    pub fn with_dtype(mut self, dtype: DType) -> Self {
        self.dtype = dtype;
        self
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidConfig(msg));
        if self.n_layers == 0 {
            return bad("n_layers must be at least 1".into());
        }
        if self.n_heads == 0 {
            return bad("n_heads must be at least 1".into());
        }
        if self.d_model == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.vocab_size < 2 {
            return bad(format!("vocab_size {} must be at least 2", self.vocab_size));
        }
        if self.vocab_size > u32::MAX as usize {
            return bad("vocab_size does not fit a 32-bit token id".into());
        }
        if self.max_seq == 0 {
            return bad("max_seq must be at least 1".into());
        }
        if self.d_ff == 0 {
            return bad("d_ff must be at least 1".into());
        }
        if !(self.norm_eps.is_finite() && self.norm_eps > 0.0) {
            return bad(format!("norm_eps {} must be positive", self.norm_eps));
        }
        if self.dtype == DType::F16 {
            return Err(ModelError::UnsupportedDType(self.dtype.to_string()));
        }
        Ok(())
    }
}
