//! Flat tensor container.
//!
//! Layout: an 8-byte little-endian header length `N`, then `N` bytes of
//! UTF-8 header text, then the concatenated little-endian tensor payloads.
//! The header is line oriented:
//!
//! ```text
//! sde-archive 1
//! config n_layers=4 d_model=32 n_heads=4 vocab_size=512 max_seq=16384 d_ff=128 norm_eps=0.00001 dtype=f32
//! tensor tok_embed f32 512,32 0 65536
//! ...
//! ```
//!
//! Each `tensor` line carries name, dtype, comma-separated shape, byte
//! offset into the payload region and byte length.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use half::f16;

use super::{
    expected_shapes, DecodeSession, LanguageModel, ModelConfig, ModelError, Tensor, TokenId,
    ToyModel, Weights,
};
use crate::scalar::{DType, Scalar};

pub const ARCHIVE_MAGIC: &str = "sde-archive 1";

/// A model whose compute type is chosen at runtime.
#[derive(Debug, Clone, PartialEq)]
pub enum ArchiveModel {
    F32(ToyModel<f32>),
    F64(ToyModel<f64>),
}

impl ArchiveModel {
    /// Seeded toy model in the config's dtype.
    pub fn seeded(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        match config.dtype {
            DType::F32 => Ok(Self::F32(ToyModel::seeded(config, seed)?)),
            DType::F64 => Ok(Self::F64(ToyModel::seeded(config, seed)?)),
            DType::F16 => Err(ModelError::UnsupportedDType("f16".into())),
        }
    }

    pub fn to_archive_bytes(&self) -> Vec<u8> {
        match self {
            Self::F32(m) => write_archive(m),
            Self::F64(m) => write_archive(m),
        }
    }
}

impl LanguageModel for ArchiveModel {
    fn config(&self) -> &ModelConfig {
        match self {
            Self::F32(m) => m.config(),
            Self::F64(m) => m.config(),
        }
    }

    fn embedding_row(&self, t: TokenId) -> Result<Vec<f32>, ModelError> {
        match self {
            Self::F32(m) => m.embedding_row(t),
            Self::F64(m) => m.embedding_row(t),
        }
    }

    fn weighted_embedding(&self, probs: &[f32]) -> Result<Vec<f32>, ModelError> {
        match self {
            Self::F32(m) => m.weighted_embedding(probs),
            Self::F64(m) => m.weighted_embedding(probs),
        }
    }

    fn checksum(&self) -> String {
        match self {
            Self::F32(m) => m.checksum(),
            Self::F64(m) => m.checksum(),
        }
    }

    fn session(&self) -> Box<dyn DecodeSession + '_> {
        match self {
            Self::F32(m) => m.session(),
            Self::F64(m) => m.session(),
        }
    }
}

fn config_line(cfg: &ModelConfig) -> String {
    format!(
        "config n_layers={} d_model={} n_heads={} vocab_size={} max_seq={} d_ff={} norm_eps={:e} dtype={}",
        cfg.n_layers, cfg.d_model, cfg.n_heads, cfg.vocab_size, cfg.max_seq, cfg.d_ff, cfg.norm_eps, cfg.dtype
    )
}

/// Serializes a model into archive bytes.
pub fn write_archive<S: Scalar>(model: &ToyModel<S>) -> Vec<u8> {
    let mut header = format!("{ARCHIVE_MAGIC}\n{}\n", config_line(model.config()));
    let mut payload = Vec::new();
    for (name, t) in model.weights().named() {
        let offset = payload.len();
        for &x in t.data() {
            x.write_le(&mut payload);
        }
        let shape: Vec<String> = t.shape().iter().map(ToString::to_string).collect();
        header.push_str(&format!(
            "tensor {name} {} {} {offset} {}\n",
            S::DTYPE,
            shape.join(","),
            payload.len() - offset
        ));
    }
    let mut out = Vec::with_capacity(8 + header.len() + payload.len());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&payload);
    out
}

pub fn export_archive<S: Scalar>(model: &ToyModel<S>, path: &Path) -> Result<(), ModelError> {
    fs::write(path, write_archive(model))?;
    Ok(())
}

pub fn load_archive(path: &Path) -> Result<ArchiveModel, ModelError> {
    read_archive(&fs::read(path)?)
}

fn malformed(msg: impl Into<String>) -> ModelError {
    ModelError::MalformedHeader(msg.into())
}

fn parse_config(line: &str) -> Result<ModelConfig, ModelError> {
    let rest = line
        .strip_prefix("config ")
        .ok_or_else(|| malformed("missing config line"))?;
    let fields: BTreeMap<&str, &str> = rest
        .split_whitespace()
        .map(|kv| {
            kv.split_once('=')
                .ok_or_else(|| malformed(format!("bad config field `{kv}`")))
        })
        .collect::<Result<_, _>>()?;
    let get = |k: &str| {
        fields
            .get(k)
            .copied()
            .ok_or_else(|| malformed(format!("config lacks `{k}`")))
    };
    let num = |k: &str| -> Result<usize, ModelError> {
        get(k)?
            .parse()
            .map_err(|_| malformed(format!("config field `{k}` is not an integer")))
    };
    let dtype_name = get("dtype")?;
    let dtype =
        DType::parse(dtype_name).ok_or_else(|| ModelError::UnsupportedDType(dtype_name.into()))?;
    let cfg = ModelConfig {
        n_layers: num("n_layers")?,
        d_model: num("d_model")?,
        n_heads: num("n_heads")?,
        vocab_size: num("vocab_size")?,
        max_seq: num("max_seq")?,
        d_ff: num("d_ff")?,
        dtype,
        norm_eps: get("norm_eps")?
            .parse()
            .map_err(|_| malformed("norm_eps is not a number"))?,
    };
    cfg.validate()?;
    Ok(cfg)
}

struct Entry {
    name: String,
    dtype: DType,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

fn parse_entry(line: &str) -> Result<Entry, ModelError> {
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.len() != 6 || parts[0] != "tensor" {
        return Err(malformed(format!("bad tensor line `{line}`")));
    }
    let dtype =
        DType::parse(parts[2]).ok_or_else(|| ModelError::UnsupportedDType(parts[2].into()))?;
    let shape = parts[3]
        .split(',')
        .map(|d| {
            d.parse::<usize>()
                .map_err(|_| malformed(format!("bad shape `{}`", parts[3])))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| malformed(format!("bad number `{s}`")))
    };
    Ok(Entry {
        name: parts[1].to_string(),
        dtype,
        shape,
        offset: num(parts[4])?,
        len: num(parts[5])?,
    })
}

fn decode_tensor<S: Scalar>(entry: &Entry, bytes: &[u8]) -> Result<Tensor<S>, ModelError> {
    let width = entry.dtype.size_of();
    let data: Vec<S> = match entry.dtype {
        DType::F16 => bytes
            .chunks_exact(width)
            .map(|c| S::lift(f16::from_le_bytes([c[0], c[1]]).to_f32()))
            .collect(),
        DType::F32 => bytes
            .chunks_exact(width)
            .map(|c| S::lift(f32::read_le(c)))
            .collect(),
        DType::F64 => bytes
            .chunks_exact(width)
            .map(|c| S::from_f64(f64::read_le(c)).expect("finite"))
            .collect(),
    };
    Tensor::from_vec(entry.shape.clone(), data)
}

fn build<S: Scalar>(
    cfg: ModelConfig,
    entries: &[Entry],
    payload: &[u8],
) -> Result<ToyModel<S>, ModelError> {
    let mut tensors = BTreeMap::new();
    for e in entries {
        tensors.insert(
            e.name.clone(),
            decode_tensor::<S>(e, &payload[e.offset..e.offset + e.len])?,
        );
    }
    let weights = Weights::from_named(&cfg, tensors)?;
    ToyModel::from_weights(cfg, weights)
}

/// Parses and validates archive bytes.
pub fn read_archive(bytes: &[u8]) -> Result<ArchiveModel, ModelError> {
    if bytes.len() < 8 {
        return Err(ModelError::Truncated(format!(
            "{} bytes is shorter than the length prefix",
            bytes.len()
        )));
    }
    let header_len = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"));
    let available = (bytes.len() - 8) as u64;
    if header_len > available {
        return Err(ModelError::Truncated(format!(
            "header length {header_len} exceeds the {available} bytes after the prefix"
        )));
    }
    let header_end = 8 + header_len as usize;
    let header =
        std::str::from_utf8(&bytes[8..header_end]).map_err(|_| malformed("header is not UTF-8"))?;
    let payload = &bytes[header_end..];
    let mut lines = header.lines();
    if lines.next() != Some(ARCHIVE_MAGIC) {
        return Err(malformed("bad magic line"));
    }
    let cfg = parse_config(
        lines
            .next()
            .ok_or_else(|| malformed("missing config line"))?,
    )?;
    let entries = lines
        .filter(|l| !l.trim().is_empty())
        .map(parse_entry)
        .collect::<Result<Vec<_>, _>>()?;

    let expected: BTreeMap<String, Vec<usize>> = expected_shapes(&cfg).into_iter().collect();
    for e in &entries {
        match expected.get(&e.name) {
            None => return Err(ModelError::UnexpectedTensor(e.name.clone())),
            Some(shape) if *shape != e.shape => {
                return Err(ModelError::ShapeMismatch {
                    tensor: e.name.clone(),
                    expected: shape.clone(),
                    found: e.shape.clone(),
                })
            }
            Some(_) => {}
        }
        let want = e.shape.iter().product::<usize>() * e.dtype.size_of();
        if e.len != want {
            return Err(malformed(format!(
                "tensor `{}` declares {} bytes, shape needs {want}",
                e.name, e.len
            )));
        }
        if e.offset
            .checked_add(e.len)
            .is_none_or(|end| end > payload.len())
        {
            return Err(ModelError::Truncated(format!(
                "tensor `{}` spans bytes {}..{} of a {}-byte payload",
                e.name,
                e.offset,
                e.offset.saturating_add(e.len),
                payload.len()
            )));
        }
    }
    match cfg.dtype {
        DType::F32 => Ok(ArchiveModel::F32(build(cfg, &entries, payload)?)),
        DType::F64 => Ok(ArchiveModel::F64(build(cfg, &entries, payload)?)),
        DType::F16 => Err(ModelError::UnsupportedDType("f16".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ToyModel<f32> {
        ToyModel::seeded(ModelConfig::new(2, 8, 2, 16, 8), 5).unwrap()
    }

    #[test]
    fn roundtrip_preserves_checksum() {
        let m = small();
        let back = read_archive(&write_archive(&m)).unwrap();
        assert_eq!(back.checksum(), m.checksum());
        assert_eq!(back, ArchiveModel::F32(m));
    }

    #[test]
    fn f64_roundtrip() {
        let m = ToyModel::<f64>::seeded(ModelConfig::new(1, 4, 1, 8, 4).with_dtype(DType::F64), 2)
            .unwrap();
        let back = read_archive(&write_archive(&m)).unwrap();
        assert_eq!(back.checksum(), m.checksum());
    }

    fn rewrite_header(bytes: &[u8], f: impl Fn(&str) -> String) -> Vec<u8> {
        let n = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        let header = f(std::str::from_utf8(&bytes[8..8 + n]).unwrap());
        let mut out = (header.len() as u64).to_le_bytes().to_vec();
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(&bytes[8 + n..]);
        out
    }

    #[test]
    fn wrong_shape_names_the_tensor() {
        let bytes = write_archive(&small());
        let bad = rewrite_header(&bytes, |h| {
            h.replace("tensor layers.1.wk f32 8,8", "tensor layers.1.wk f32 4,16")
        });
        match read_archive(&bad).unwrap_err() {
            ModelError::ShapeMismatch { tensor, .. } => assert_eq!(tensor, "layers.1.wk"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn unknown_dtype_is_rejected() {
        let bytes = write_archive(&small());
        let bad = rewrite_header(&bytes, |h| {
            h.replace("tensor final_norm f32", "tensor final_norm bf16")
        });
        assert!(matches!(
            read_archive(&bad).unwrap_err(),
            ModelError::UnsupportedDType(_)
        ));
    }

    #[test]
    fn truncations_are_detected() {
        let bytes = write_archive(&small());
        // header length beyond the file
        let n = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        assert!(matches!(
            read_archive(&bytes[..8 + n / 2]).unwrap_err(),
            ModelError::Truncated(_)
        ));
        // payload cut short
        assert!(matches!(
            read_archive(&bytes[..bytes.len() - 3]).unwrap_err(),
            ModelError::Truncated(_)
        ));
        assert!(matches!(
            read_archive(&bytes[..4]).unwrap_err(),
            ModelError::Truncated(_)
        ));
    }

    #[test]
    fn missing_tensor_is_rejected() {
        let bytes = write_archive(&small());
        let bad = rewrite_header(&bytes, |h| {
            h.lines()
                .filter(|l| !l.starts_with("tensor lm_head"))
                .map(|l| format!("{l}\n"))
                .collect()
        });
        assert_eq!(
            read_archive(&bad).unwrap_err(),
            ModelError::MissingTensor("lm_head".into())
        );
    }
}
