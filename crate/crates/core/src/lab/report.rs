//! CSV reports of a finished run.

use std::fs;
use std::path::{Path, PathBuf};

use super::{rank_layers, LabError, LayerScoreTable, RankKey, RunManifest};
use crate::evalkit::QuestionRecord;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportFiles {
    pub summary: PathBuf,
    pub layers: PathBuf,
    pub overhead: PathBuf,
}

/// Reads `records.jsonl` of a run directory.
pub fn load_records(dir: impl AsRef<Path>) -> Result<Vec<QuestionRecord>, LabError> {
    let path = dir.as_ref().join("records.jsonl");
    let text = fs::read_to_string(&path).map_err(|e| LabError::io(&path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| LabError::json(&path, e)))
        .collect()
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>, LabError> {
    let file = fs::File::create(path).map_err(|e| LabError::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

/// `summary.csv`: one row per metric for the whole run and per seed.
/// Header only when the run has no records.
fn write_summary_csv(
    path: &Path,
    manifest: &RunManifest,
    records: &[QuestionRecord],
) -> Result<(), LabError> {
    let mut w = writer(path)?;
    w.write_record([
        "task",
        "method",
        "dataset",
        "run",
        "n_questions",
        "metric",
        "value",
    ])?;
    if !records.is_empty() {
        let c = &manifest.config;
        let s = &manifest.summary;
        let (task, method, dataset) = (
            c.task.to_string(),
            c.method().to_string(),
            c.dataset_label(),
        );
        let n = s.n_questions.to_string();
        let mut row = |run: &str, metric: &str, value: f64| {
            w.write_record([
                &task,
                &method,
                &dataset,
                run,
                &n,
                metric,
                &value.to_string(),
            ])
        };
        row("all", "em", s.em)?;
        row("all", "f1", s.f1)?;
        for (seed, m) in c.run_seeds().iter().zip(&s.per_run) {
            let run = format!("seed{seed}");
            row(&run, "em", m.em)?;
            row(&run, "f1", m.f1)?;
        }
    }
    w.flush().map_err(|e| LabError::io(path, e))
}

/// `layers.csv`: sweep rows best first with the rank key and whether the
/// layer is in `selected`. Header only without a table.
pub(crate) fn write_layers_csv(
    path: &Path,
    table: Option<&LayerScoreTable>,
    key: RankKey,
    selected: &[usize],
) -> Result<(), LabError> {
    let mut w = writer(path)?;
    w.write_record(["rank", "layer", "em", "f1", "key", "selected"])?;
    if let Some(table) = table {
        for (i, r) in rank_layers(table, key).iter().enumerate() {
            w.write_record([
                (i + 1).to_string(),
                r.layer.to_string(),
                r.em.to_string(),
                r.f1.to_string(),
                key.value(r).to_string(),
                selected.contains(&r.layer).to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| LabError::io(path, e))
}

/// `overhead.csv`: token and latent bytes per question.
fn write_overhead_csv(path: &Path, records: &[QuestionRecord]) -> Result<(), LabError> {
    let mut w = writer(path)?;
    w.write_record([
        "seed",
        "question_id",
        "token_bytes",
        "latent_bytes",
        "ratio",
    ])?;
    for r in records {
        let ratio = if r.token_bytes == 0 || r.latent_bytes == 0 {
            0.0
        } else {
            r.latent_bytes as f64 / r.token_bytes as f64
        };
        w.write_record([
            r.seed.to_string(),
            r.question_id.clone(),
            r.token_bytes.to_string(),
            r.latent_bytes.to_string(),
            ratio.to_string(),
        ])?;
    }
    w.flush().map_err(|e| LabError::io(path, e))
}

/// Writes `summary.csv`, `layers.csv` and `overhead.csv` into `dir`.
pub fn write_report(
    manifest: &RunManifest,
    records: &[QuestionRecord],
    table: Option<&LayerScoreTable>,
    dir: impl AsRef<Path>,
) -> Result<ReportFiles, LabError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    let files = ReportFiles {
        summary: dir.join("summary.csv"),
        layers: dir.join("layers.csv"),
        overhead: dir.join("overhead.csv"),
    };
    write_summary_csv(&files.summary, manifest, records)?;
    write_layers_csv(
        &files.layers,
        table,
        manifest.config.rank_key,
        &manifest.config.protocol.layers,
    )?;
    write_overhead_csv(&files.overhead, records)?;
    Ok(files)
}
