//! Ranking layers from a sweep table and turning a ranking into layer sets.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::LabError;
use crate::evalkit::Metrics;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerScore {
    pub layer: usize,
    pub em: f64,
    pub f1: f64,
}

impl LayerScore {
    pub fn new(layer: usize, em: f64, f1: f64) -> Self {
        Self { layer, em, f1 }
    }

    pub fn metrics(&self) -> Metrics {
        Metrics {
            em: self.em,
            f1: self.f1,
        }
    }
}

/// Per-layer scores of a sweep, one row per candidate layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerScoreTable {
    pub rows: Vec<LayerScore>,
}

impl LayerScoreTable {
    /// Rows must name distinct layers; they are kept sorted by layer.
    pub fn new(mut rows: Vec<LayerScore>) -> Result<Self, LabError> {
        rows.sort_by_key(|r| r.layer);
        if let Some(w) = rows.windows(2).find(|w| w[0].layer == w[1].layer) {
            return Err(LabError::Invalid(format!(
                "layer {} appears twice in the score table",
                w[0].layer
            )));
        }
        Ok(Self { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, layer: usize) -> Option<&LayerScore> {
        self.rows.iter().find(|r| r.layer == layer)
    }

    pub fn layers(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.layer).collect()
    }
}

/// Scalar used to order layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankKey {
    /// `F1 + EM / 2`.
    #[default]
    F1HalfEm,
    /// `EM + F1`.
    EmPlusF1,
}

impl RankKey {
    pub fn value(self, row: &LayerScore) -> f64 {
        match self {
            RankKey::F1HalfEm => row.f1 + 0.5 * row.em,
            RankKey::EmPlusF1 => row.em + row.f1,
        }
    }
}

impl FromStr for RankKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "f1_half_em" => Ok(RankKey::F1HalfEm),
            "em_plus_f1" => Ok(RankKey::EmPlusF1),
            other => Err(format!(
                "unknown rank key `{other}` (expected f1_half_em or em_plus_f1)"
            )),
        }
    }
}

/// Rows ordered best first: by key, then F1, then lower layer id.
pub fn rank_layers(table: &LayerScoreTable, key: RankKey) -> Vec<LayerScore> {
    let mut rows = table.rows.clone();
    rows.sort_by(|a, b| compare_rows(key, a, b));
    rows
}

/// How many top layers to inject into for a model with `n_layers` layers:
/// `clamp(floor(L / 16), 1, 3)`, giving 1, 2 and 3 for 28, 32 and 48.
pub fn layer_count(n_layers: usize) -> usize {
    (n_layers / 16).clamp(1, 3)
}

/// Which ranked layers a run injects into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "k", rename_all = "snake_case")]
pub enum LayerStrategy {
    /// The `k` best layers together.
    CombineTopK(usize),
    /// The `k`-th best layer alone.
    OnlyTopK(usize),
    /// Every layer of the model.
    All,
}

impl fmt::Display for LayerStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerStrategy::CombineTopK(k) => write!(f, "combine-top-{k}"),
            LayerStrategy::OnlyTopK(k) => write!(f, "only-top-{k}"),
            LayerStrategy::All => f.write_str("all"),
        }
    }
}

impl FromStr for LayerStrategy {
    type Err = String;

    /// Accepts `all`, `combine-top-K` and `only-top-K`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase().replace('_', "-");
        if s == "all" {
            return Ok(LayerStrategy::All);
        }
        let parse_k = |rest: &str| {
            rest.parse::<usize>()
                .map_err(|_| format!("bad k in layer strategy `{s}`"))
        };
        if let Some(rest) = s.strip_prefix("combine-top-") {
            Ok(LayerStrategy::CombineTopK(parse_k(rest)?))
        } else if let Some(rest) = s.strip_prefix("only-top-") {
            Ok(LayerStrategy::OnlyTopK(parse_k(rest)?))
        } else {
            Err(format!(
                "unknown layer strategy `{s}` (expected all, combine-top-K or only-top-K)"
            ))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSelection {
    /// Ascending layer ids.
    pub layers: Vec<usize>,
    pub strategy: LayerStrategy,
}

/// Layer set of `strategy` given a best-first ranking.
pub fn strategy_layers(
    ranking: &[usize],
    strategy: LayerStrategy,
    n_layers: usize,
) -> Result<LayerSelection, LabError> {
    let check_k = |k: usize| {
        if k == 0 || k > ranking.len() {
            Err(LabError::Invalid(format!(
                "k = {k} is outside 1..={} ranked layers",
                ranking.len()
            )))
        } else {
            Ok(k)
        }
    };
    let layers: BTreeSet<usize> = match strategy {
        LayerStrategy::All => (0..n_layers).collect(),
        LayerStrategy::CombineTopK(k) => ranking[..check_k(k)?].iter().copied().collect(),
        LayerStrategy::OnlyTopK(k) => [ranking[check_k(k)? - 1]].into_iter().collect(),
    };
    if let Some(&bad) = layers.iter().find(|&&l| l >= n_layers) {
        return Err(LabError::Invalid(format!(
            "layer {bad} does not exist in a {n_layers}-layer model"
        )));
    }
    Ok(LayerSelection {
        layers: layers.into_iter().collect(),
        strategy,
    })
}

/// Ranks `table` and keeps the combined top `count` layers, where `count`
/// defaults to [`layer_count`].
pub fn rank_and_select(
    table: &LayerScoreTable,
    n_layers: usize,
    key: RankKey,
    count: Option<usize>,
) -> Result<LayerSelection, LabError> {
    if table.is_empty() {
        return Err(LabError::Invalid("layer score table is empty".into()));
    }
    let ranking: Vec<usize> = rank_layers(table, key).iter().map(|r| r.layer).collect();
    let k = count
        .unwrap_or_else(|| layer_count(n_layers))
        .min(ranking.len());
    strategy_layers(&ranking, LayerStrategy::CombineTopK(k), n_layers)
}

/// Orders two rows the way [`rank_layers`] does (`Less` = better).
pub fn compare_rows(key: RankKey, a: &LayerScore, b: &LayerScore) -> Ordering {
    key.value(b)
        .total_cmp(&key.value(a))
        .then(b.f1.total_cmp(&a.f1))
        .then(a.layer.cmp(&b.layer))
}
