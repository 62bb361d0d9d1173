//! `sdelab`: run latent-communication experiments on toy or archived models.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use statedelta::lab::{
    load_manifest, load_records, rerun_manifest, run_experiment, run_sweep, write_report,
    ExperimentConfig, LayerScoreTable, LayerStrategy, ModelSpec, PolicyKind, RankKey, ToySpec,
};
use statedelta::model::{load_archive, ArchiveModel};
use statedelta::orchestration::TemplateSet;
use statedelta::{DType, Method, Task};

#[derive(Parser)]
#[command(
    name = "sdelab",
    version,
    about = "Latent inter-agent communication experiments"
)]
struct Cli {
    /// Log level filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a task over a dataset and persist records and a manifest.
    Run(RunArgs),
    /// Score every candidate layer with single-layer SDE on the IA task.
    SweepLayers(SweepArgs),
    /// Write summary, layer and overhead CSVs for a finished run.
    Report(ReportArgs),
    /// Write a config's model to a tensor archive, optionally with the
    /// editable prompt templates.
    ExportModel(ExportArgs),
    /// Create a seeded random model archive.
    MakeToyModel(ToyArgs),
}

/// Options shared by `run` and `sweep-layers`; each overrides the config
/// file, which overrides `SDE_OUT_DIR` / `SDE_THREADS`.
#[derive(Args)]
struct Common {
    /// TOML experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Question file (JSONL); the bundled fixture when absent.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Corpus file (JSONL); the bundled fixture when absent.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Model archive to load instead of the config's model.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Only the first N questions.
    #[arg(long)]
    limit: Option<usize>,
    /// Worker threads.
    #[arg(long)]
    threads: Option<usize>,
    /// Prompt template directory.
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Answer policy: free or choose.
    #[arg(long)]
    policy: Option<String>,
    /// Comma-separated run seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    task: Option<Task>,
    /// nl, sde, cipher, raw or single.
    #[arg(long)]
    method: Option<Method>,
    /// Comma-separated injection layers.
    #[arg(long, value_delimiter = ',', conflicts_with = "strategy")]
    layers: Option<Vec<usize>>,
    /// all, combine-top-K or only-top-K.
    #[arg(long)]
    strategy: Option<LayerStrategy>,
    /// `layer_table.json` written by `sweep-layers`.
    #[arg(long)]
    layer_table: Option<PathBuf>,
    /// Debate agents.
    #[arg(long)]
    agents: Option<usize>,
    /// Round limit of the task (IA or debate).
    #[arg(long)]
    rounds: Option<usize>,
    /// Workflow step limit.
    #[arg(long)]
    max_steps: Option<usize>,
    /// Re-execute the run recorded in this directory's manifest.
    #[arg(long, conflicts_with_all = ["task", "method", "layers", "strategy"])]
    from_manifest: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated candidate layers; every layer when absent.
    #[arg(long, value_delimiter = ',')]
    candidates: Option<Vec<usize>>,
    /// Number of layers to select, overriding the depth rule.
    #[arg(long)]
    count: Option<usize>,
    /// f1_half_em or em_plus_f1.
    #[arg(long)]
    rank_key: Option<RankKey>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory holding `manifest.json` and `records.jsonl`.
    run: PathBuf,
    /// Where to write the CSVs; the run directory when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sweep table for `layers.csv`; `layer_table.json` in the run
    /// directory is used when present.
    #[arg(long)]
    layer_table: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    /// TOML config whose `[model]` is exported.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Archive path to write.
    #[arg(long)]
    out: PathBuf,
    /// Also write the built-in prompt templates into this directory.
    #[arg(long)]
    templates: Option<PathBuf>,
}

#[derive(Args)]
struct ToyArgs {
    #[arg(long, default_value_t = 4)]
    layers: usize,
    #[arg(long, default_value_t = 32)]
    d_model: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 512)]
    vocab: usize,
    #[arg(long, default_value_t = 16_384)]
    max_seq: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// f32 or f64.
    #[arg(long, default_value = "f32")]
    dtype: String,
    #[arg(long)]
    out: PathBuf,
}

fn base_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    cfg.apply_env()?;
    if let Some(p) = &common.dataset {
        cfg.dataset = Some(p.clone());
    }
    if let Some(p) = &common.corpus {
        cfg.corpus = Some(p.clone());
    }
    if let Some(p) = &common.out {
        cfg.out_dir = p.clone();
    }
    if let Some(p) = &common.model {
        cfg.model = ModelSpec::Archive { path: p.clone() };
    }
    if let Some(n) = common.limit {
        cfg.limit = Some(n);
    }
    if let Some(n) = common.threads {
        cfg.threads = Some(n);
    }
    if let Some(p) = &common.templates {
        cfg.templates = Some(p.clone());
    }
    if let Some(p) = &common.policy {
        cfg.policy.kind = match p.as_str() {
            "free" => PolicyKind::Free,
            "choose" => PolicyKind::Choose,
            other => bail!("unknown policy `{other}` (expected free or choose)"),
        };
    }
    if let Some(s) = &common.seeds {
        cfg.seeds = s.clone();
    }
    Ok(cfg)
}

fn run(args: RunArgs) -> Result<()> {
    if let Some(dir) = &args.from_manifest {
        let manifest = load_manifest(dir)?;
        let out = args.common.out.clone().unwrap_or_else(|| dir.join("rerun"));
        let m = rerun_manifest(&manifest, &out)?;
        println!("{}", serde_json::to_string(&m.summary)?);
        return Ok(());
    }
    let mut cfg = base_config(&args.common)?;
    if let Some(t) = args.task {
        cfg.task = t;
    }
    if let Some(m) = args.method {
        cfg.protocol.method = m;
    }
    if let Some(l) = args.layers {
        cfg.protocol.layers = l;
        cfg.strategy = None;
    }
    if let Some(s) = args.strategy {
        cfg.strategy = Some(s);
        cfg.protocol.layers.clear();
    }
    if let Some(p) = args.layer_table {
        cfg.layer_table = Some(p);
    }
    if let Some(n) = args.agents {
        cfg.protocol.agents = n;
    }
    if let Some(n) = args.rounds {
        match cfg.task {
            Task::Ia => cfg.protocol.ia_rounds = n,
            Task::Debate => cfg.protocol.debate_rounds = n,
            Task::Workflow => {
                bail!("--rounds does not apply to the workflow task; use --max-steps")
            }
        }
    }
    if let Some(n) = args.max_steps {
        cfg.protocol.max_steps = n;
    }
    let m = run_experiment(&cfg)?;
    log::info!(
        "{} {} on {}: {} records in {:.1}s",
        cfg.task,
        cfg.method(),
        cfg.dataset_label(),
        m.records.len(),
        m.wall_clock_secs
    );
    println!("{}", serde_json::to_string(&m.summary)?);
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let mut cfg = base_config(&args.common)?;
    if let Some(c) = args.candidates {
        cfg.candidates = Some(c);
    }
    if let Some(n) = args.count {
        cfg.select_count = Some(n);
    }
    if let Some(k) = args.rank_key {
        cfg.rank_key = k;
    }
    let report = run_sweep(&cfg)?;
    println!("{}", serde_json::to_string(&report.selection)?);
    Ok(())
}

fn read_table(path: &Path) -> Result<LayerScoreTable> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn report(args: ReportArgs) -> Result<()> {
    let manifest = load_manifest(&args.run)?;
    let records = load_records(&args.run)?;
    let default_table = args.run.join("layer_table.json");
    let table = match &args.layer_table {
        Some(p) => Some(read_table(p)?),
        None if default_table.exists() => Some(read_table(&default_table)?),
        None => None,
    };
    let out = args.out.unwrap_or_else(|| args.run.clone());
    let files = write_report(&manifest, &records, table.as_ref(), &out)?;
    for f in [files.summary, files.layers, files.overhead] {
        println!("{}", f.display());
    }
    Ok(())
}

fn write_model(model: &ArchiveModel, out: &Path) -> Result<()> {
    let bytes = model.to_archive_bytes();
    std::fs::write(out, bytes).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

fn export(args: ExportArgs) -> Result<()> {
    let cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let model = match &cfg.model {
        ModelSpec::Toy(spec) => ArchiveModel::seeded(spec.config(), spec.seed)?,
        ModelSpec::Archive { path } => load_archive(path)?,
    };
    write_model(&model, &args.out)?;
    if let Some(dir) = &args.templates {
        TemplateSet::write_builtin(dir)
            .with_context(|| format!("writing templates to {}", dir.display()))?;
    }
    Ok(())
}

fn make_toy(args: ToyArgs) -> Result<()> {
    let dtype = match args.dtype.as_str() {
        "f32" => DType::F32,
        "f64" => DType::F64,
        other => bail!("unsupported compute dtype `{other}` (expected f32 or f64)"),
    };
    let spec = ToySpec {
        n_layers: args.layers,
        d_model: args.d_model,
        n_heads: args.heads,
        vocab_size: args.vocab,
        max_seq: args.max_seq,
        dtype,
        seed: args.seed,
    };
    write_model(&ArchiveModel::seeded(spec.config(), spec.seed)?, &args.out)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).init();
    match cli.command {
        Command::Run(a) => run(a),
        Command::SweepLayers(a) => sweep(a),
        Command::Report(a) => report(a),
        Command::ExportModel(a) => export(a),
        Command::MakeToyModel(a) => make_toy(a),
    }
}
