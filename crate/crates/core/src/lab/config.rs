//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{LabError, LayerStrategy, RankKey};
use crate::model::ModelConfig;
use crate::orchestration::ProtocolConfig;
use crate::scalar::DType;
use crate::setting::{Method, Task};

pub const ENV_OUT_DIR: &str = "SDE_OUT_DIR";
pub const ENV_THREADS: &str = "SDE_THREADS";

/// Shape and seed of a randomly initialised toy model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToySpec {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub vocab_size: usize,
    pub max_seq: usize,
    pub dtype: DType,
    pub seed: u64,
}

impl Default for ToySpec {
    fn default() -> Self {
        let c = ModelConfig::toy();
        Self {
            n_layers: c.n_layers,
            d_model: c.d_model,
            n_heads: c.n_heads,
            vocab_size: c.vocab_size,
            max_seq: c.max_seq,
            dtype: c.dtype,
            seed: 0,
        }
    }
}

impl ToySpec {
    pub fn config(&self) -> ModelConfig {
        ModelConfig::new(
            self.n_layers,
            self.d_model,
            self.n_heads,
            self.vocab_size,
            self.max_seq,
        )
        .with_dtype(self.dtype)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Toy(ToySpec),
    /// A tensor archive written by `export-model`.
    Archive {
        path: PathBuf,
    },
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::Toy(ToySpec::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// Plain decoding.
    Free,
    /// Force the answer candidate the model scores highest.
    #[default]
    Choose,
}

/// How agents produce text. `choose` turns each question's `choices` into
/// answer candidates from round `from_round` on; questions without choices
/// decode freely.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    pub from_round: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            kind: PolicyKind::Choose,
            from_round: 2,
        }
    }
}

/// Everything a run needs. Relative paths resolve against the working
/// directory; an absent dataset or corpus selects the bundled fixtures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub task: Task,
    /// Method, explicit layers, agent count, round and step limits, token
    /// budgets, sampling preset, CIPHER source and payload transform.
    #[serde(flatten)]
    pub protocol: ProtocolConfig,
    /// Derives `layers` from a sweep table when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strategy: Option<LayerStrategy>,
    /// `layer_table.json` from `sweep-layers`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layer_table: Option<PathBuf>,
    pub rank_key: RankKey,
    /// Layers swept by `sweep-layers`; all layers when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<usize>>,
    /// Overrides the depth-based layer count of the selection.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub select_count: Option<usize>,
    pub model: ModelSpec,
    /// Turn-marker preset: tags, chatml or llama3.
    pub syntax: String,
    /// Directory of prompt templates overriding the built-in ones.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub templates: Option<PathBuf>,
    pub policy: PolicyConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    /// Label written into records; defaults to the dataset file stem.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset_name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    /// Passages retrieved per IA question before sharding.
    pub retrieval_k: usize,
    /// Run seeds; empty means `[1, 2, 3]` for debate and `[0]` otherwise.
    pub seeds: Vec<u64>,
    /// Use only the first `limit` questions.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub limit: Option<usize>,
    pub out_dir: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: Task::Ia,
            protocol: ProtocolConfig::default(),
            strategy: None,
            layer_table: None,
            rank_key: RankKey::default(),
            candidates: None,
            select_count: None,
            model: ModelSpec::default(),
            syntax: "tags".into(),
            templates: None,
            policy: PolicyConfig::default(),
            dataset: None,
            dataset_name: None,
            corpus: None,
            retrieval_k: 6,
            seeds: Vec::new(),
            limit: None,
            out_dir: PathBuf::from("runs/latest"),
            threads: None,
        }
    }
}

impl ExperimentConfig {
    pub fn new(task: Task, method: Method) -> Self {
        Self {
            task,
            protocol: ProtocolConfig::new(method),
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, LabError> {
        toml::from_str(text).map_err(|e| LabError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String, LabError> {
        toml::to_string(self).map_err(|e| LabError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LabError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Applies `SDE_OUT_DIR` and `SDE_THREADS` from the environment.
    pub fn apply_env(&mut self) -> Result<(), LabError> {
        self.apply_overrides(
            std::env::var(ENV_OUT_DIR).ok(),
            std::env::var(ENV_THREADS).ok(),
        )
    }

    pub fn apply_overrides(
        &mut self,
        out_dir: Option<String>,
        threads: Option<String>,
    ) -> Result<(), LabError> {
        if let Some(dir) = out_dir.filter(|d| !d.is_empty()) {
            self.out_dir = PathBuf::from(dir);
        }
        if let Some(t) = threads.filter(|t| !t.is_empty()) {
            let n = t.trim().parse().map_err(|_| {
                LabError::Config(format!("{ENV_THREADS}=`{t}` is not a thread count"))
            })?;
            self.threads = Some(n);
        }
        Ok(())
    }

    pub fn method(&self) -> Method {
        self.protocol.method
    }

    /// Run seeds after defaulting.
    pub fn run_seeds(&self) -> Vec<u64> {
        match (self.seeds.is_empty(), self.task) {
            (false, _) => self.seeds.clone(),
            (true, Task::Debate) => vec![1, 2, 3],
            (true, _) => vec![0],
        }
    }

    pub fn dataset_label(&self) -> String {
        if let Some(name) = &self.dataset_name {
            return name.clone();
        }
        match &self.dataset {
            Some(p) => p
                .file_stem()
                .map_or_else(|| "dataset".into(), |s| s.to_string_lossy().into_owned()),
            None => "fixture".into(),
        }
    }

    /// Checks that do not need the model or the assets.
    pub fn validate(&self) -> Result<(), LabError> {
        let bad = |m: String| Err(LabError::Config(m));
        if self.protocol.method.is_layered()
            && self.protocol.layers.is_empty()
            && self.strategy.is_none()
        {
            return bad(format!(
                "method {} needs `layers` or a `strategy`",
                self.protocol.method
            ));
        }
        if !self.protocol.method.is_layered()
            && (!self.protocol.layers.is_empty() || self.strategy.is_some())
        {
            return bad(format!(
                "method {} does not take layers",
                self.protocol.method
            ));
        }
        if self.strategy.is_some() && !self.protocol.layers.is_empty() {
            return bad("set either `layers` or `strategy`, not both".into());
        }
        if self.strategy.is_some_and(|s| s != LayerStrategy::All) && self.layer_table.is_none() {
            return bad("a ranked layer strategy needs `layer_table`".into());
        }
        if self.retrieval_k == 0 && self.task == Task::Ia {
            return bad("retrieval_k must be at least 1".into());
        }
        if self.policy.from_round == 0 {
            return bad("policy.from_round must be at least 1".into());
        }
        if self.threads == Some(0) {
            return bad("threads must be at least 1".into());
        }
        if self.limit == Some(0) {
            return bad("limit must be at least 1".into());
        }
        if crate::orchestration::TurnSyntax::preset(&self.syntax).is_none() {
            return bad(format!("unknown turn syntax `{}`", self.syntax));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_roundtrip() {
        let mut c = ExperimentConfig::new(Task::Debate, Method::Sde);
        c.protocol.layers = vec![1, 3];
        c.seeds = vec![4, 5];
        c.dataset = Some("data/q.jsonl".into());
        let text = c.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), c);
    }

    #[test]
    fn minimal_document() {
        let c = ExperimentConfig::from_toml(
            "task = \"workflow\"\nmethod = \"cipher\"\nmax_steps = 3\n[budgets]\nworkflow_step = 20\n[model]\nkind = \"toy\"\nn_layers = 2\n",
        )
        .unwrap();
        assert_eq!(c.task, Task::Workflow);
        assert_eq!(c.method(), Method::Cipher);
        assert_eq!(c.protocol.max_steps, 3);
        assert_eq!(c.protocol.budgets.workflow_step, 20);
        assert_eq!(c.protocol.budgets.ia, 256);
        assert!(matches!(
            c.model,
            ModelSpec::Toy(ToySpec {
                n_layers: 2,
                d_model: 32,
                ..
            })
        ));
        c.validate().unwrap();
    }

    #[test]
    fn seeds_default_by_task() {
        assert_eq!(
            ExperimentConfig::new(Task::Debate, Method::Nl).run_seeds(),
            vec![1, 2, 3]
        );
        assert_eq!(
            ExperimentConfig::new(Task::Ia, Method::Nl).run_seeds(),
            vec![0]
        );
    }

    #[test]
    fn overrides() {
        let mut c = ExperimentConfig::default();
        c.apply_overrides(Some("/tmp/x".into()), Some("3".into()))
            .unwrap();
        assert_eq!(c.out_dir, PathBuf::from("/tmp/x"));
        assert_eq!(c.threads, Some(3));
        assert!(c.apply_overrides(None, Some("many".into())).is_err());
    }

    #[test]
    fn validation() {
        assert!(ExperimentConfig::new(Task::Ia, Method::Sde)
            .validate()
            .is_err());
        let mut c = ExperimentConfig::new(Task::Ia, Method::Nl);
        c.protocol.layers = vec![1];
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::new(Task::Ia, Method::Sde);
        c.strategy = Some(LayerStrategy::CombineTopK(2));
        assert!(c.validate().is_err());
        c.layer_table = Some("t.json".into());
        c.validate().unwrap();
        c.syntax = "xml".into();
        assert!(c.validate().is_err());
    }
}
