//! Executes experiments over a dataset, persists records and manifests,
//! and drives layer sweeps.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    rank_and_select, rank_layers, strategy_layers, ExperimentConfig, LabError, LayerScore,
    LayerScoreTable, LayerSelection, LayerStrategy, ModelSpec, PolicyKind,
};
use crate::codecs::OverheadReport;
use crate::environment::{
    build_index, read_corpus, read_dataset, retrieve, shard_docs, Corpus, Document, Question,
    RetrievalIndex, ToolEnv,
};
use crate::evalkit::{
    aggregate, score_question, AnswerFormat, QuestionRecord, ScoringRule, Summary,
};
use crate::model::{load_archive, ArchiveModel, LanguageModel, Tokenizer};
use crate::orchestration::{
    run_debate, run_ia, run_single, run_workflow, Policy, RunContext, TaskResult, TemplateSet,
    TurnSyntax,
};
use crate::seed::{derive_seed, stable_hash};
use crate::setting::{Method, Task};

pub const FIXTURE_CORPUS: &str = include_str!("../../assets/fixtures/corpus.jsonl");
pub const FIXTURE_QUESTIONS: &str = include_str!("../../assets/fixtures/questions.jsonl");

/// The bundled 200-document corpus.
pub fn fixture_corpus() -> Corpus {
    read_corpus(FIXTURE_CORPUS.as_bytes()).expect("bundled corpus parses")
}

/// The bundled 25-question set.
pub fn fixture_questions() -> Vec<Question> {
    read_dataset(FIXTURE_QUESTIONS.as_bytes()).expect("bundled questions parse")
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read_asset(path: &Path) -> Result<Vec<u8>, LabError> {
    if !path.exists() {
        return Err(LabError::MissingAsset(path.to_path_buf()));
    }
    fs::read(path).map_err(|e| LabError::io(path, e))
}

/// Model, text assets and retrieval index shared by every question of a run.
pub struct LabAssets {
    pub model: ArchiveModel,
    pub tokenizer: Tokenizer,
    pub templates: TemplateSet,
    pub syntax: TurnSyntax,
    pub corpus: Corpus,
    pub index: RetrievalIndex,
    pub questions: Vec<Question>,
    pub dataset_sha256: String,
    pub corpus_sha256: String,
}

impl LabAssets {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self, LabError> {
        let model = match &cfg.model {
            ModelSpec::Toy(spec) => ArchiveModel::seeded(spec.config(), spec.seed)?,
            ModelSpec::Archive { path } => {
                if !path.exists() {
                    return Err(LabError::MissingAsset(path.clone()));
                }
                load_archive(path)?
            }
        };
        let (dataset_bytes, questions) = match &cfg.dataset {
            Some(p) => {
                let bytes = read_asset(p)?;
                let qs = read_dataset(bytes.as_slice())?;
                (bytes, qs)
            }
            None => (FIXTURE_QUESTIONS.as_bytes().to_vec(), fixture_questions()),
        };
        let (corpus_bytes, corpus) = match &cfg.corpus {
            Some(p) => {
                let bytes = read_asset(p)?;
                let c = read_corpus(bytes.as_slice())?;
                (bytes, c)
            }
            None => (FIXTURE_CORPUS.as_bytes().to_vec(), fixture_corpus()),
        };
        let templates = match &cfg.templates {
            Some(dir) if !dir.exists() => return Err(LabError::MissingAsset(dir.clone())),
            Some(dir) => TemplateSet::from_dir(dir)?,
            None => TemplateSet::builtin(),
        };
        let syntax = TurnSyntax::preset(&cfg.syntax)
            .ok_or_else(|| LabError::Config(format!("unknown turn syntax `{}`", cfg.syntax)))?;
        let vocab = model.config().vocab_size;
        let tokenizer = Tokenizer::for_vocab(vocab).ok_or_else(|| {
            LabError::Config(format!(
                "vocab_size {vocab} cannot hold the 256 byte tokens"
            ))
        })?;
        let index = build_index(&corpus)?;
        let mut questions = questions;
        if let Some(n) = cfg.limit {
            questions.truncate(n);
        }
        Ok(Self {
            model,
            tokenizer,
            templates,
            syntax,
            corpus,
            index,
            questions,
            dataset_sha256: sha256_hex(&dataset_bytes),
            corpus_sha256: sha256_hex(&corpus_bytes),
        })
    }

    pub fn context(&self) -> Result<RunContext<'_>, LabError> {
        Ok(RunContext::new(
            &self.model,
            &self.tokenizer,
            &self.templates,
            &self.syntax,
        )?)
    }

    /// BM25 top-`k` passages for `question`, split into odd and even ranks.
    pub fn shards(&self, question: &Question, k: usize) -> (Vec<Document>, Vec<Document>) {
        let ranked: Vec<Document> = retrieve(&self.index, &question.question, k)
            .iter()
            .map(|h| self.corpus.docs()[h.index].clone())
            .collect();
        shard_docs(&ranked)
    }
}

/// Answer candidates for a choosing policy, shaped like the answer format
/// the run is scored on.
pub fn answer_policy(cfg: &ExperimentConfig, question: &Question) -> Policy {
    if cfg.policy.kind == PolicyKind::Free || question.choices.is_empty() {
        return Policy::Free;
    }
    let format = ScoringRule::for_run(cfg.task, cfg.method()).format(question.kind());
    let candidates = question
        .choices
        .iter()
        .map(|c| match format {
            AnswerFormat::Boxed => format!("The answer is \\boxed{{{c}}}."),
            AnswerFormat::Choice => format!("The answer is ({c})."),
            AnswerFormat::Finish => format!("Action {{step}}: Finish[{c}]"),
        })
        .collect();
    // single baselines answer in their only round
    let from_round = if cfg.method() == Method::Single {
        1
    } else {
        cfg.policy.from_round
    };
    Policy::Choose {
        candidates,
        from_round,
    }
}

fn question_seed(run_seed: u64, question: &Question) -> u64 {
    derive_seed(run_seed, &[stable_hash(&question.id)])
}

/// Runs one question under `cfg` (with `cfg.protocol.layers` already
/// resolved) and scores it.
pub fn run_question(
    assets: &LabAssets,
    cfg: &ExperimentConfig,
    question: &Question,
    run_seed: u64,
) -> Result<(QuestionRecord, TaskResult), LabError> {
    let ctx = assets.context()?;
    let policy = answer_policy(cfg, question);
    let seed = question_seed(run_seed, question);
    let protocol = &cfg.protocol;
    let result = match (cfg.method(), cfg.task) {
        (Method::Single, Task::Ia) => {
            let (a, b) = assets.shards(question, cfg.retrieval_k);
            run_single(
                &ctx,
                Task::Ia,
                question,
                Some([&a, &b]),
                protocol,
                &policy,
                seed,
            )?
        }
        (Method::Single, task) => run_single(&ctx, task, question, None, protocol, &policy, seed)?,
        (_, Task::Ia) => {
            let (a, b) = assets.shards(question, cfg.retrieval_k);
            run_ia(&ctx, question, [&a, &b], protocol, &policy, seed)?
        }
        (_, Task::Debate) => run_debate(&ctx, question, protocol, &policy, seed)?,
        (_, Task::Workflow) => {
            let env = ToolEnv {
                corpus: &assets.corpus,
                index: &assets.index,
            };
            run_workflow(&ctx, question, env, protocol, &policy, seed)?
        }
    };
    let rule = ScoringRule::for_run(cfg.task, cfg.method());
    let score = score_question(
        &question.id,
        &result.final_responses,
        &question.gold(),
        rule,
    );
    let record = QuestionRecord {
        question_id: question.id.clone(),
        dataset: cfg.dataset_label(),
        task: cfg.task,
        method: cfg.method(),
        seed: run_seed,
        layers: protocol.layers.clone(),
        rounds: result.round_answers.clone(),
        score,
        token_bytes: result.overhead.token_bytes as u64,
        latent_bytes: result.overhead.latent_bytes as u64,
    };
    Ok((record, result))
}

fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool, LabError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        b = b.num_threads(n);
    }
    b.build()
        .map_err(|e| LabError::Config(format!("thread pool: {e}")))
}

/// Runs every (seed, question) pair not in `skip`, in parallel, handing
/// each record to `sink` as it completes. Returns the new records in
/// seed-then-dataset order.
fn execute_with(
    assets: &LabAssets,
    cfg: &ExperimentConfig,
    skip: &HashSet<(u64, String)>,
    sink: &(dyn Fn(&QuestionRecord) -> Result<(), LabError> + Sync),
) -> Result<Vec<QuestionRecord>, LabError> {
    cfg.protocol.validate(assets.model.config())?;
    let jobs: Vec<(u64, &Question)> = cfg
        .run_seeds()
        .into_iter()
        .flat_map(|s| assets.questions.iter().map(move |q| (s, q)))
        .filter(|(s, q)| !skip.contains(&(*s, q.id.clone())))
        .collect();
    thread_pool(cfg.threads)?.install(|| {
        jobs.par_iter()
            .map(|&(s, q)| {
                let (record, _) = run_question(assets, cfg, q, s)?;
                sink(&record)?;
                Ok(record)
            })
            .collect()
    })
}

/// In-memory run over all questions and seeds.
pub fn execute(
    assets: &LabAssets,
    cfg: &ExperimentConfig,
) -> Result<Vec<QuestionRecord>, LabError> {
    execute_with(assets, cfg, &HashSet::new(), &|_| Ok(()))
}

fn summarize(cfg: &ExperimentConfig, records: &[QuestionRecord]) -> Result<Summary, LabError> {
    let runs: Vec<Vec<_>> = cfg
        .run_seeds()
        .iter()
        .map(|&s| {
            records
                .iter()
                .filter(|r| r.seed == s)
                .map(|r| r.score.clone())
                .collect()
        })
        .collect();
    Ok(aggregate(
        &runs,
        ScoringRule::for_run(cfg.task, cfg.method()),
    )?)
}

fn total_overhead(records: &[QuestionRecord]) -> OverheadReport {
    let mut total = OverheadReport::default();
    for r in records {
        total.accumulate(&OverheadReport {
            token_bytes: r.token_bytes as usize,
            latent_bytes: r.latent_bytes as usize,
            ratio: 0.0,
        });
    }
    total
}

/// Resolves `strategy` against the persisted sweep table.
fn resolve_layers(
    cfg: &ExperimentConfig,
    n_layers: usize,
) -> Result<(ExperimentConfig, Option<LayerSelection>), LabError> {
    let mut resolved = cfg.clone();
    let selection = match cfg.strategy {
        None => None,
        Some(LayerStrategy::All) => Some(strategy_layers(&[], LayerStrategy::All, n_layers)?),
        Some(strategy) => {
            let path = cfg
                .layer_table
                .as_ref()
                .ok_or_else(|| LabError::Config("strategy needs layer_table".into()))?;
            let text = read_asset(path)?;
            let table: LayerScoreTable =
                serde_json::from_slice(&text).map_err(|e| LabError::json(path, e))?;
            let ranking: Vec<usize> = rank_layers(&table, cfg.rank_key)
                .iter()
                .map(|r| r.layer)
                .collect();
            Some(strategy_layers(&ranking, strategy, n_layers)?)
        }
    };
    if let Some(sel) = &selection {
        resolved.protocol.layers = sel.layers.clone();
        resolved.strategy = None;
        resolved.layer_table = None;
    }
    resolved.seeds = cfg.run_seeds();
    Ok((resolved, selection))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordIndex {
    pub seed: u64,
    pub question_id: String,
    /// 0-based line in `records.jsonl`.
    pub line: usize,
}

/// Everything needed to re-execute a run and check it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Crate version that produced the run.
    pub version: String,
    /// Config with layers and seeds resolved.
    pub config: ExperimentConfig,
    /// Selection the layers were derived from, if a strategy was used.
    pub selection: Option<LayerSelection>,
    pub model_checksum: String,
    pub dataset_sha256: String,
    pub corpus_sha256: String,
    pub records: Vec<RecordIndex>,
    pub summary: Summary,
    pub overhead: OverheadReport,
    pub wall_clock_secs: f64,
}

const RECORDS_FILE: &str = "records.jsonl";
const MANIFEST_FILE: &str = "manifest.json";
const PARTIAL_DIR: &str = ".partial";

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), LabError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| LabError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| LabError::io(path, e))
}

fn read_jsonl_records(path: &Path) -> Result<Vec<QuestionRecord>, LabError> {
    let file = File::open(path).map_err(|e| LabError::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| LabError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        // a torn final line from an interrupted run is dropped and recomputed
        match serde_json::from_str(&line) {
            Ok(r) => out.push(r),
            Err(_) => break,
        }
    }
    Ok(out)
}

/// Runs `cfg` and persists `records.jsonl` and `manifest.json` under
/// `cfg.out_dir`. Records stream into `.partial/` as questions finish;
/// rerunning after an interruption skips the questions already recorded
/// there. Both final files are written by rename.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunManifest, LabError> {
    cfg.validate()?;
    let assets = LabAssets::load(cfg)?;
    run_experiment_with(&assets, cfg)
}

pub(crate) fn run_experiment_with(
    assets: &LabAssets,
    cfg: &ExperimentConfig,
) -> Result<RunManifest, LabError> {
    let started = Instant::now();
    let (resolved, selection) = resolve_layers(cfg, assets.model.config().n_layers)?;
    resolved.protocol.validate(assets.model.config())?;
    let out = &cfg.out_dir;
    let partial = out.join(PARTIAL_DIR);
    fs::create_dir_all(&partial).map_err(|e| LabError::io(&partial, e))?;

    let stamp = serde_json::to_string(&(
        &resolved,
        assets.model.checksum(),
        &assets.dataset_sha256,
        &assets.corpus_sha256,
    ))
    .expect("config serializes");
    let stamp_path = partial.join("config.json");
    let partial_records = partial.join(RECORDS_FILE);
    let mut previous = Vec::new();
    if stamp_path.exists() {
        let old = fs::read_to_string(&stamp_path).map_err(|e| LabError::io(&stamp_path, e))?;
        if old == stamp && partial_records.exists() {
            previous = read_jsonl_records(&partial_records)?;
        }
    }
    // rewrite the kept prefix so a torn line cannot precede new appends
    let mut text = String::new();
    for r in &previous {
        text.push_str(&serde_json::to_string(r).expect("record serializes"));
        text.push('\n');
    }
    fs::write(&partial_records, text).map_err(|e| LabError::io(&partial_records, e))?;
    fs::write(&stamp_path, &stamp).map_err(|e| LabError::io(&stamp_path, e))?;
    if !previous.is_empty() {
        log::info!("resuming: {} records already present", previous.len());
    }

    let appender = Mutex::new(
        OpenOptions::new()
            .append(true)
            .open(&partial_records)
            .map_err(|e| LabError::io(&partial_records, e))?,
    );
    let skip: HashSet<(u64, String)> = previous
        .iter()
        .map(|r| (r.seed, r.question_id.clone()))
        .collect();
    let sink = |r: &QuestionRecord| -> Result<(), LabError> {
        let mut line = serde_json::to_string(r).expect("record serializes");
        line.push('\n');
        let mut f = appender.lock().expect("appender lock");
        f.write_all(line.as_bytes())
            .and_then(|_| f.flush())
            .map_err(|e| LabError::io(&partial_records, e))
    };
    let fresh = execute_with(assets, &resolved, &skip, &sink)?;
    drop(appender);

    let order: BTreeMap<(u64, &str), usize> = resolved
        .run_seeds()
        .iter()
        .enumerate()
        .flat_map(|(si, &s)| {
            assets
                .questions
                .iter()
                .enumerate()
                .map(move |(qi, q)| ((s, q.id.as_str()), si * 1_000_000_000 + qi))
        })
        .collect();
    let mut records: Vec<QuestionRecord> = previous.into_iter().chain(fresh).collect();
    records.retain(|r| order.contains_key(&(r.seed, r.question_id.as_str())));
    records.sort_by_key(|r| order[&(r.seed, r.question_id.as_str())]);
    records.dedup_by(|a, b| a.seed == b.seed && a.question_id == b.question_id);

    let mut text = String::new();
    let mut index = Vec::with_capacity(records.len());
    for (line, r) in records.iter().enumerate() {
        text.push_str(&serde_json::to_string(r).expect("record serializes"));
        text.push('\n');
        index.push(RecordIndex {
            seed: r.seed,
            question_id: r.question_id.clone(),
            line,
        });
    }
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: resolved.clone(),
        selection,
        model_checksum: assets.model.checksum(),
        dataset_sha256: assets.dataset_sha256.clone(),
        corpus_sha256: assets.corpus_sha256.clone(),
        records: index,
        summary: summarize(&resolved, &records)?,
        overhead: total_overhead(&records),
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    write_atomic(&out.join(RECORDS_FILE), text.as_bytes())?;
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_atomic(&out.join(MANIFEST_FILE), json.as_bytes())?;
    fs::remove_dir_all(&partial).map_err(|e| LabError::io(&partial, e))?;
    Ok(manifest)
}

pub fn load_manifest(dir: impl AsRef<Path>) -> Result<RunManifest, LabError> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    let bytes = read_asset(&path)?;
    serde_json::from_slice(&bytes).map_err(|e| LabError::json(&path, e))
}

/// Re-executes the run described by `manifest` into `out_dir`, refusing
/// when the model or data no longer hash to the recorded values.
pub fn rerun_manifest(
    manifest: &RunManifest,
    out_dir: impl Into<PathBuf>,
) -> Result<RunManifest, LabError> {
    let mut cfg = manifest.config.clone();
    cfg.out_dir = out_dir.into();
    let assets = LabAssets::load(&cfg)?;
    let checks = [
        (
            "model checksum",
            &manifest.model_checksum,
            assets.model.checksum(),
        ),
        (
            "dataset hash",
            &manifest.dataset_sha256,
            assets.dataset_sha256.clone(),
        ),
        (
            "corpus hash",
            &manifest.corpus_sha256,
            assets.corpus_sha256.clone(),
        ),
    ];
    for (what, want, got) in checks {
        if *want != got {
            return Err(LabError::Mismatch(format!(
                "{what} is {got}, manifest has {want}"
            )));
        }
    }
    let mut out = run_experiment_with(&assets, &cfg)?;
    out.selection = manifest.selection.clone();
    Ok(out)
}

/// IA with SDE restricted to each candidate layer in turn, scored on the
/// run's questions.
pub fn sweep_layers(
    assets: &LabAssets,
    cfg: &ExperimentConfig,
    candidates: &[usize],
) -> Result<LayerScoreTable, LabError> {
    let n_layers = assets.model.config().n_layers;
    if let Some(&bad) = candidates.iter().find(|&&l| l >= n_layers) {
        return Err(LabError::Invalid(format!(
            "layer {bad} does not exist in a {n_layers}-layer model"
        )));
    }
    let mut rows = Vec::with_capacity(candidates.len());
    for &layer in candidates {
        let mut c = cfg.clone();
        c.task = Task::Ia;
        c.protocol.method = Method::Sde;
        c.protocol.layers = vec![layer];
        c.strategy = None;
        let records = execute(assets, &c)?;
        let s = summarize(&c, &records)?;
        log::info!("layer {layer}: em {:.4} f1 {:.4}", s.em, s.f1);
        rows.push(LayerScore::new(layer, s.em, s.f1));
    }
    LayerScoreTable::new(rows)
}

/// Runs `cfg` with the layer set `strategy` derives from `table`.
pub fn evaluate_strategy(
    assets: &LabAssets,
    cfg: &ExperimentConfig,
    table: &LayerScoreTable,
    strategy: LayerStrategy,
) -> Result<(LayerSelection, Summary), LabError> {
    let ranking: Vec<usize> = rank_layers(table, cfg.rank_key)
        .iter()
        .map(|r| r.layer)
        .collect();
    let selection = strategy_layers(&ranking, strategy, assets.model.config().n_layers)?;
    let mut c = cfg.clone();
    c.protocol.layers = selection.layers.clone();
    c.strategy = None;
    let records = execute(assets, &c)?;
    let summary = summarize(&c, &records)?;
    Ok((selection, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub table: LayerScoreTable,
    /// Layer ids best first.
    pub ranking: Vec<usize>,
    pub selection: LayerSelection,
}

/// Sweeps `cfg.candidates` (all layers when unset), selects layers and
/// writes `layer_table.json`, `selection.json` and `layers.csv` to
/// `cfg.out_dir`.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepReport, LabError> {
    let assets = LabAssets::load(cfg)?;
    let n_layers = assets.model.config().n_layers;
    let candidates = cfg
        .candidates
        .clone()
        .unwrap_or_else(|| (0..n_layers).collect());
    let table = sweep_layers(&assets, cfg, &candidates)?;
    let selection = rank_and_select(&table, n_layers, cfg.rank_key, cfg.select_count)?;
    let ranking = rank_layers(&table, cfg.rank_key)
        .iter()
        .map(|r| r.layer)
        .collect();
    let report = SweepReport {
        table,
        ranking,
        selection,
    };
    let out = &cfg.out_dir;
    fs::create_dir_all(out).map_err(|e| LabError::io(out, e))?;
    write_atomic(
        &out.join("layer_table.json"),
        serde_json::to_string_pretty(&report.table)
            .expect("table serializes")
            .as_bytes(),
    )?;
    write_atomic(
        &out.join("selection.json"),
        serde_json::to_string_pretty(&report)
            .expect("report serializes")
            .as_bytes(),
    )?;
    super::report::write_layers_csv(
        &out.join("layers.csv"),
        Some(&report.table),
        cfg.rank_key,
        &report.selection.layers,
    )?;
    Ok(report)
}
