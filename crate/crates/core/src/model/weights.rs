//! Weight storage, seeded construction and checksums.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use super::{ModelConfig, ModelError};
use crate::scalar::Scalar;

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn from_vec(shape: Vec<usize>, data: Vec<S>) -> Result<Self, ModelError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(ModelError::ShapeMismatch {
                tensor: "<anonymous>".into(),
                expected: shape,
                found: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn filled(shape: Vec<usize>, value: S) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    fn random(shape: Vec<usize>, std: f64, rng: &mut ChaCha8Rng) -> Self {
        let dist = Normal::new(0.0, std).expect("finite std");
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| S::from_f64(dist.sample(rng)).expect("finite sample"))
            .collect();
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    /// Row `i` of a 2-D tensor.
    pub fn row(&self, i: usize) -> &[S] {
        let w = self.shape[1];
        &self.data[i * w..(i + 1) * w]
    }

    /// `out = x · W` for `W` of shape `[in, out]`.
    pub fn matvec(&self, x: &[S], out: &mut [S]) {
        let (rows, cols) = (self.shape[0], self.shape[1]);
        debug_assert_eq!(x.len(), rows);
        debug_assert_eq!(out.len(), cols);
        out.iter_mut().for_each(|o| *o = S::zero());
        for (i, &xi) in x.iter().enumerate() {
            let row = &self.data[i * cols..(i + 1) * cols];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += xi * w;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights<S> {
    pub attn_norm: Tensor<S>,
    pub wq: Tensor<S>,
    pub wk: Tensor<S>,
    pub wv: Tensor<S>,
    pub wo: Tensor<S>,
    pub mlp_norm: Tensor<S>,
    pub w_up: Tensor<S>,
    pub w_down: Tensor<S>,
}

/// All parameters of the decoder, in the canonical tensor naming used by
/// the archive format.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights<S> {
    pub tok_embed: Tensor<S>,
    pub pos_embed: Tensor<S>,
    pub layers: Vec<LayerWeights<S>>,
    pub final_norm: Tensor<S>,
    pub lm_head: Tensor<S>,
}

/// Canonical `(name, shape)` list for a config, in archive order.
pub fn expected_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (d, v, f) = (cfg.d_model, cfg.vocab_size, cfg.d_ff);
    let mut out = vec![
        ("tok_embed".to_string(), vec![v, d]),
        ("pos_embed".to_string(), vec![cfg.max_seq, d]),
    ];
    for l in 0..cfg.n_layers {
        let p = format!("layers.{l}.");
        out.push((p.clone() + "attn_norm", vec![d]));
        out.push((p.clone() + "wq", vec![d, d]));
        out.push((p.clone() + "wk", vec![d, d]));
        out.push((p.clone() + "wv", vec![d, d]));
        out.push((p.clone() + "wo", vec![d, d]));
        out.push((p.clone() + "mlp_norm", vec![d]));
        out.push((p.clone() + "w_up", vec![d, f]));
        out.push((p + "w_down", vec![f, d]));
    }
    out.push(("final_norm".to_string(), vec![d]));
    out.push(("lm_head".to_string(), vec![d, v]));
    out
}

impl<S: Scalar> Weights<S> {
    /// Draws every parameter from one ChaCha stream in canonical order.
    pub fn seeded(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, v, f) = (cfg.d_model, cfg.vocab_size, cfg.d_ff);
        let proj = 1.0 / (d as f64).sqrt();
        let tok_embed = Tensor::random(vec![v, d], 1.0, &mut rng);
        let pos_embed = Tensor::random(vec![cfg.max_seq, d], 0.1, &mut rng);
        let layers = (0..cfg.n_layers)
            .map(|_| LayerWeights {
                attn_norm: Tensor::filled(vec![d], S::one()),
                wq: Tensor::random(vec![d, d], proj, &mut rng),
                wk: Tensor::random(vec![d, d], proj, &mut rng),
                wv: Tensor::random(vec![d, d], proj, &mut rng),
                wo: Tensor::random(vec![d, d], proj, &mut rng),
                mlp_norm: Tensor::filled(vec![d], S::one()),
                w_up: Tensor::random(vec![d, f], proj, &mut rng),
                w_down: Tensor::random(vec![f, d], 1.0 / (f as f64).sqrt(), &mut rng),
            })
            .collect();
        let final_norm = Tensor::filled(vec![d], S::one());
        let lm_head = Tensor::random(vec![d, v], 2.0 * proj, &mut rng);
        Self {
            tok_embed,
            pos_embed,
            layers,
            final_norm,
            lm_head,
        }
    }

    /// Tensors paired with their canonical names, in archive order.
    pub fn named(&self) -> Vec<(String, &Tensor<S>)> {
        let mut out = vec![
            ("tok_embed".to_string(), &self.tok_embed),
            ("pos_embed".to_string(), &self.pos_embed),
        ];
        for (l, lw) in self.layers.iter().enumerate() {
            let p = format!("layers.{l}.");
            out.push((p.clone() + "attn_norm", &lw.attn_norm));
            out.push((p.clone() + "wq", &lw.wq));
            out.push((p.clone() + "wk", &lw.wk));
            out.push((p.clone() + "wv", &lw.wv));
            out.push((p.clone() + "wo", &lw.wo));
            out.push((p.clone() + "mlp_norm", &lw.mlp_norm));
            out.push((p.clone() + "w_up", &lw.w_up));
            out.push((p + "w_down", &lw.w_down));
        }
        out.push(("final_norm".to_string(), &self.final_norm));
        out.push(("lm_head".to_string(), &self.lm_head));
        out
    }

    /// Reassembles weights from named tensors, checking every shape.
    pub fn from_named(
        cfg: &ModelConfig,
        mut tensors: BTreeMap<String, Tensor<S>>,
    ) -> Result<Self, ModelError> {
        for (name, shape) in expected_shapes(cfg) {
            match tensors.get(&name) {
                None => return Err(ModelError::MissingTensor(name)),
                Some(t) if t.shape != shape => {
                    return Err(ModelError::ShapeMismatch {
                        tensor: name,
                        expected: shape,
                        found: t.shape.clone(),
                    })
                }
                Some(_) => {}
            }
        }
        let mut take = |name: &str| tensors.remove(name).expect("checked above");
        let tok_embed = take("tok_embed");
        let pos_embed = take("pos_embed");
        let layers = (0..cfg.n_layers)
            .map(|l| LayerWeights {
                attn_norm: take(&format!("layers.{l}.attn_norm")),
                wq: take(&format!("layers.{l}.wq")),
                wk: take(&format!("layers.{l}.wk")),
                wv: take(&format!("layers.{l}.wv")),
                wo: take(&format!("layers.{l}.wo")),
                mlp_norm: take(&format!("layers.{l}.mlp_norm")),
                w_up: take(&format!("layers.{l}.w_up")),
                w_down: take(&format!("layers.{l}.w_down")),
            })
            .collect();
        let final_norm = take("final_norm");
        let lm_head = take("lm_head");
        if let Some(extra) = tensors.keys().next() {
            return Err(ModelError::UnexpectedTensor(extra.clone()));
        }
        Ok(Self {
            tok_embed,
            pos_embed,
            layers,
            final_norm,
            lm_head,
        })
    }

    /// SHA-256 over names, shapes and little-endian element bytes.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        let mut buf = Vec::new();
        for (name, t) in self.named() {
            hasher.update(name.as_bytes());
            for &dim in t.shape() {
                hasher.update((dim as u64).to_le_bytes());
            }
            buf.clear();
            for &x in t.data() {
                x.write_le(&mut buf);
            }
            hasher.update(&buf);
        }
        hex::encode(hasher.finalize())
    }
}
