//! Binary transport for layered latent payloads.
//!
//! Layout, all integers little-endian:
//!
//! | field        | type            |
//! |--------------|-----------------|
//! | magic        | `b"SDE1"`       |
//! | version      | u16             |
//! | layer count  | u16             |
//! | layer ids    | u16 × count     |
//! | n_tokens     | u32             |
//! | d_model      | u32             |
//! | dtype tag    | u8 (0 f32, 1 f16) |
//! | payload      | rows, layer-major then token-minor |
//!
//! The layout carries no checksum. Parsing therefore checks the layer ids
//! against the receiver's expected selection and requires them strictly
//! ascending; any single-byte header change then fails to parse.

use half::f16;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{CodecError, DeltaTrajectory, Payload, RawStateTrajectory};
use crate::model::HiddenState;

pub const MAGIC: &[u8; 4] = b"SDE1";
pub const VERSION: u16 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WireError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    VersionMismatch(u16),
    #[error("unknown dtype tag {0}")]
    UnknownDType(u8),
    #[error("packet is {found} bytes, header implies {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("packet truncated inside the header")]
    Truncated,
    #[error("layer ids {0:?} are not strictly ascending")]
    LayerOrder(Vec<u16>),
    #[error("layer ids {found:?} differ from the expected selection {expected:?}")]
    UnexpectedLayers { expected: Vec<u16>, found: Vec<u16> },
    #[error("d_model {found} differs from the expected {expected}")]
    UnexpectedWidth { expected: u32, found: u32 },
    #[error("{0} does not fit the header field")]
    Overflow(&'static str),
    #[error("rows are ragged: {0}")]
    Ragged(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WireDType {
    #[default]
    F32,
    F16,
}

impl WireDType {
    pub fn tag(self) -> u8 {
        match self {
            WireDType::F32 => 0,
            WireDType::F16 => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self, WireError> {
        match tag {
            0 => Ok(WireDType::F32),
            1 => Ok(WireDType::F16),
            t => Err(WireError::UnknownDType(t)),
        }
    }

    pub fn bytes_per_element(self) -> usize {
        match self {
            WireDType::F32 => 4,
            WireDType::F16 => 2,
        }
    }
}

/// One layer's rows, one per token.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerRows {
    pub layer: u16,
    pub rows: Vec<HiddenState>,
}

/// What the receiver expects; `None` fields are not checked.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WireExpect {
    pub layers: Option<Vec<u16>>,
    pub d_model: Option<u32>,
}

impl WireExpect {
    pub fn new(layers: Vec<u16>, d_model: u32) -> Self {
        Self {
            layers: Some(layers),
            d_model: Some(d_model),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WirePacket {
    pub version: u16,
    pub layers: Vec<u16>,
    pub n_tokens: u32,
    pub d_model: u32,
    pub dtype: WireDType,
    pub payload: Vec<u8>,
}

fn header_len(n_layers: usize) -> usize {
    4 + 2 + 2 + 2 * n_layers + 4 + 4 + 1
}

fn check_ascending(layers: &[u16]) -> Result<(), WireError> {
    if layers.windows(2).all(|w| w[0] < w[1]) {
        Ok(())
    } else {
        Err(WireError::LayerOrder(layers.to_vec()))
    }
}

impl WirePacket {
    pub fn payload_len(&self) -> usize {
        self.n_tokens as usize
            * self.layers.len()
            * self.d_model as usize
            * self.dtype.bytes_per_element()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(header_len(self.layers.len()) + self.payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u16).to_le_bytes());
        for l in &self.layers {
            out.extend_from_slice(&l.to_le_bytes());
        }
        out.extend_from_slice(&self.n_tokens.to_le_bytes());
        out.extend_from_slice(&self.d_model.to_le_bytes());
        out.push(self.dtype.tag());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn parse(bytes: &[u8], expect: &WireExpect) -> Result<Self, WireError> {
        let take = |at: usize, n: usize| bytes.get(at..at + n).ok_or(WireError::Truncated);
        let u16_at = |at: usize| take(at, 2).map(|b| u16::from_le_bytes([b[0], b[1]]));
        let u32_at = |at: usize| take(at, 4).map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]));

        let magic: [u8; 4] = take(0, 4)?.try_into().expect("4 bytes");
        if &magic != MAGIC {
            return Err(WireError::BadMagic(magic));
        }
        let version = u16_at(4)?;
        if version != VERSION {
            return Err(WireError::VersionMismatch(version));
        }
        let count = u16_at(6)? as usize;
        let layers = (0..count)
            .map(|i| u16_at(8 + 2 * i))
            .collect::<Result<Vec<_>, _>>()?;
        let at = 8 + 2 * count;
        let n_tokens = u32_at(at)?;
        let d_model = u32_at(at + 4)?;
        let dtype = WireDType::from_tag(*take(at + 8, 1)?.first().expect("1 byte"))?;
        check_ascending(&layers)?;
        if let Some(want) = &expect.layers {
            if *want != layers {
                return Err(WireError::UnexpectedLayers {
                    expected: want.clone(),
                    found: layers,
                });
            }
        }
        if let Some(want) = expect.d_model {
            if want != d_model {
                return Err(WireError::UnexpectedWidth {
                    expected: want,
                    found: d_model,
                });
            }
        }
        let head = header_len(count);
        let packet = WirePacket {
            version,
            layers,
            n_tokens,
            d_model,
            dtype,
            payload: Vec::new(),
        };
        let expected = head + packet.payload_len();
        if bytes.len() != expected {
            return Err(WireError::LengthMismatch {
                expected,
                found: bytes.len(),
            });
        }
        Ok(WirePacket {
            payload: bytes[head..].to_vec(),
            ..packet
        })
    }
}

/// Packs per-layer rows. Layers must be strictly ascending and share one
/// token count and width.
pub fn serialize(rows: &[LayerRows], dtype: WireDType) -> Result<WirePacket, WireError> {
    let layers: Vec<u16> = rows.iter().map(|r| r.layer).collect();
    check_ascending(&layers)?;
    if layers.len() > u16::MAX as usize {
        return Err(WireError::Overflow("layer count"));
    }
    let n_tokens = rows.first().map_or(0, |r| r.rows.len());
    let d_model = rows
        .first()
        .and_then(|r| r.rows.first())
        .map_or(0, |h| h.len());
    let mut payload =
        Vec::with_capacity(n_tokens * layers.len() * d_model * dtype.bytes_per_element());
    for r in rows {
        if r.rows.len() != n_tokens {
            return Err(WireError::Ragged(format!(
                "layer {} has {} rows, expected {n_tokens}",
                r.layer,
                r.rows.len()
            )));
        }
        for h in &r.rows {
            if h.len() != d_model {
                return Err(WireError::Ragged(format!(
                    "layer {} has a row of width {}, expected {d_model}",
                    r.layer,
                    h.len()
                )));
            }
            for &x in h.iter() {
                match dtype {
                    WireDType::F32 => payload.extend_from_slice(&x.to_le_bytes()),
                    WireDType::F16 => payload.extend_from_slice(&f16::from_f32(x).to_le_bytes()),
                }
            }
        }
    }
    Ok(WirePacket {
        version: VERSION,
        layers,
        n_tokens: u32::try_from(n_tokens).map_err(|_| WireError::Overflow("n_tokens"))?,
        d_model: u32::try_from(d_model).map_err(|_| WireError::Overflow("d_model"))?,
        dtype,
        payload,
    })
}

/// Unpacks rows; f16 payloads widen to f32.
pub fn deserialize(packet: &WirePacket) -> Result<Vec<LayerRows>, WireError> {
    let expected = packet.payload_len();
    if packet.payload.len() != expected {
        return Err(WireError::LengthMismatch {
            expected,
            found: packet.payload.len(),
        });
    }
    let bpe = packet.dtype.bytes_per_element();
    let d = packet.d_model as usize;
    let n = packet.n_tokens as usize;
    let values: Vec<f32> = packet
        .payload
        .chunks_exact(bpe)
        .map(|c| match packet.dtype {
            WireDType::F32 => f32::from_le_bytes([c[0], c[1], c[2], c[3]]),
            WireDType::F16 => f16::from_le_bytes([c[0], c[1]]).to_f32(),
        })
        .collect();
    Ok(packet
        .layers
        .iter()
        .enumerate()
        .map(|(li, &layer)| LayerRows {
            layer,
            rows: (0..n)
                .map(|t| HiddenState::new(values[(li * n + t) * d..(li * n + t + 1) * d].to_vec()))
                .collect(),
        })
        .collect())
}

fn layer_id(layer: usize) -> Result<u16, CodecError> {
    u16::try_from(layer).map_err(|_| WireError::Overflow("layer id").into())
}

impl Payload {
    /// Layered rows sorted by layer; `None` for NL and CIPHER payloads.
    pub fn to_layer_rows(&self) -> Result<Option<Vec<LayerRows>>, CodecError> {
        let mut rows = match self {
            Payload::Deltas(ds) => ds
                .iter()
                .map(|d| {
                    Ok(LayerRows {
                        layer: layer_id(d.layer())?,
                        rows: d.deltas().to_vec(),
                    })
                })
                .collect::<Result<Vec<_>, CodecError>>()?,
            Payload::RawStates(rs) => rs
                .iter()
                .map(|r| {
                    Ok(LayerRows {
                        layer: layer_id(r.layer)?,
                        rows: r.states.clone(),
                    })
                })
                .collect::<Result<Vec<_>, CodecError>>()?,
            _ => return Ok(None),
        };
        rows.sort_by_key(|r| r.layer);
        Ok(Some(rows))
    }

    pub fn deltas_from_rows(rows: Vec<LayerRows>) -> Result<Self, CodecError> {
        Ok(Payload::Deltas(
            rows.into_iter()
                .map(|r| DeltaTrajectory::from_deltas(r.layer as usize, r.rows))
                .collect::<Result<_, _>>()?,
        ))
    }

    pub fn raw_from_rows(rows: Vec<LayerRows>) -> Self {
        Payload::RawStates(
            rows.into_iter()
                .map(|r| RawStateTrajectory {
                    layer: r.layer as usize,
                    states: r.rows,
                })
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(n: usize, layers: &[u16], d: usize) -> Vec<LayerRows> {
        layers
            .iter()
            .map(|&l| LayerRows {
                layer: l,
                rows: (0..n)
                    .map(|t| {
                        HiddenState::new(
                            (0..d)
                                .map(|k| (l as f32) - 0.25 * t as f32 + k as f32 / 8.0)
                                .collect(),
                        )
                    })
                    .collect(),
            })
            .collect()
    }

    #[test]
    fn size_formula() {
        let p = serialize(&fixture(4, &[3, 9], 8), WireDType::F32).unwrap();
        assert_eq!(p.payload.len(), 256);
        assert_eq!(p.to_bytes().len(), header_len(2) + 256);
        let p16 = serialize(&fixture(4, &[3, 9], 8), WireDType::F16).unwrap();
        assert_eq!(p16.payload.len(), 128);
    }

    #[test]
    fn roundtrip_f32() {
        let rows = fixture(5, &[1, 2, 7], 6);
        let bytes = serialize(&rows, WireDType::F32).unwrap().to_bytes();
        let back = WirePacket::parse(&bytes, &WireExpect::new(vec![1, 2, 7], 6)).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(deserialize(&back).unwrap(), rows);
    }

    #[test]
    fn f16_mode_is_flagged_and_close() {
        let rows = fixture(2, &[0], 4);
        let bytes = serialize(&rows, WireDType::F16).unwrap().to_bytes();
        let p = WirePacket::parse(&bytes, &WireExpect::default()).unwrap();
        assert_eq!(p.dtype, WireDType::F16);
        for (a, b) in deserialize(&p).unwrap()[0].rows.iter().zip(&rows[0].rows) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() <= 1e-2 * y.abs().max(1.0));
            }
        }
    }

    #[test]
    fn specific_header_errors() {
        let bytes = serialize(&fixture(1, &[2], 2), WireDType::F32)
            .unwrap()
            .to_bytes();
        let any = WireExpect::default();
        let mut b = bytes.clone();
        b[4] = 2;
        assert_eq!(
            WirePacket::parse(&b, &any).unwrap_err(),
            WireError::VersionMismatch(2)
        );
        let mut b = bytes.clone();
        b[header_len(1) - 1] = 9;
        assert_eq!(
            WirePacket::parse(&b, &any).unwrap_err(),
            WireError::UnknownDType(9)
        );
        let mut b = bytes.clone();
        b.pop();
        assert!(matches!(
            WirePacket::parse(&b, &any),
            Err(WireError::LengthMismatch { .. })
        ));
        assert_eq!(
            WirePacket::parse(&bytes[..3], &any).unwrap_err(),
            WireError::Truncated
        );
    }

    #[test]
    fn serialize_rejects_unsorted_or_ragged() {
        assert!(matches!(
            serialize(&fixture(1, &[4, 2], 2), WireDType::F32),
            Err(WireError::LayerOrder(_))
        ));
        let mut rows = fixture(2, &[1, 2], 2);
        rows[1].rows.pop();
        assert!(matches!(
            serialize(&rows, WireDType::F32),
            Err(WireError::Ragged(_))
        ));
    }

    #[test]
    fn empty_payload_roundtrips() {
        let bytes = serialize(&[], WireDType::F32).unwrap().to_bytes();
        let p = WirePacket::parse(&bytes, &WireExpect::default()).unwrap();
        assert!(deserialize(&p).unwrap().is_empty());
    }
}
