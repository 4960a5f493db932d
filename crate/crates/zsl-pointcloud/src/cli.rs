//! Command-line pipeline: `ingest`, `train`, `eval-seen`, `eval-zsl`,
//! `sweep-t`, `report`.
//!
//! Every flag has a config-file equivalent (`--config run.json`, a flat
//! key-value document using the flag names without dashes); explicit flags
//! override the file. The effective configuration is echoed into every
//! artifact the run writes. All randomness flows from `--seed`.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::cache::CachedDataset;
use crate::dataset::split::{Protocol, Role, SplitManifest};
use crate::dataset::IngestError;
use crate::encoder::{EncoderConfig, EncoderError, EncoderVariant, Pooling};
use crate::eval::{emit_report, EvaluationReport, ReportFormat};
use crate::semantic::{SemanticEmbeddingTable, SemanticSpace, WordVectorStore};
use crate::train::{seen_top1, train_model, Checkpoint, SemanticMode, TrainConfig, TrainError};
use crate::zsl::{classify_unseen_batch, predictions_csv, InferenceHead, ZslError};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

const USAGE: &str = "\
usage: zslpc <subcommand> [flags]

subcommands:
  ingest     scan a dataset root, build the split manifest and point cache
  train      train an encoder on the seen split of a cache
  eval-seen  top-1 accuracy of a checkpoint on the test-seen split
  eval-zsl   zero-shot classification of the test-unseen split
  sweep-t    accuracy as a function of T over the test-unseen split
  report     combine report documents in --out into benchmark tables

flags (every flag can also appear in --config <file.json> without dashes):
  --config <file>         flat key-value JSON with defaults for any flag
  --dataset <name>        modelnet | mcgill | shrec2015
  --data-root <dir>       dataset root (default: $ZSL_PC_DATA)
  --cache <file>          point-cloud cache path (.pcz); the manifest lives
                          alongside as <cache>.manifest.json
  --vectors-w2v <file>    word2vec-style text vectors
  --vectors-glove <file>  glove-style text vectors
  --checkpoint <file>     model checkpoint path
  --encoder <name>        pointnet | edgeconv
  --pooling <name>        max | netvlad
  --semantics <name>      basic | w2v | glove | conc
  --T <n | list>          inference depth; comma list for sweep-t
  --seed <n>              global seed (default 42)
  --epochs <n>            training epochs (default 200)
  --lr <float>            initial learning rate (default 0.001)
  --points <n>            points sampled per mesh at ingest (default 1024)
  --out <dir>             output directory for artifacts
";

/// Effective configuration of one invocation.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub subcommand: String,
    pub dataset: String,
    pub data_root: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub vectors_w2v: Option<PathBuf>,
    pub vectors_glove: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub encoder: String,
    pub pooling: String,
    pub semantics: String,
    pub t: Option<String>,
    pub seed: u64,
    pub epochs: usize,
    pub lr: f64,
    pub points: usize,
}

impl RunConfig {
    fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    fn echo_compact(&self) -> String {
        serde_json::to_string(&self.echo()).expect("config serializes")
    }
}

enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => m,
        }
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<crate::dataset::cache::CacheError> for CliError {
    fn from(e: crate::dataset::cache::CacheError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<crate::semantic::VectorError> for CliError {
    fn from(e: crate::semantic::VectorError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match &e {
            TrainError::Diverged { .. }
            | TrainError::NonFiniteUpdate { .. }
            | TrainError::Encoder(EncoderError::NonFinite { .. }) => {
                CliError::Numeric(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ZslError> for CliError {
    fn from(e: ZslError) -> Self {
        match &e {
            ZslError::ZeroNormalizer | ZslError::ZeroEmbedding => CliError::Numeric(e.to_string()),
            ZslError::Train(inner) => CliError::from_train_ref(inner),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl CliError {
    fn from_train_ref(e: &TrainError) -> Self {
        match e {
            TrainError::Diverged { .. }
            | TrainError::NonFiniteUpdate { .. }
            | TrainError::Encoder(EncoderError::NonFinite { .. }) => {
                CliError::Numeric(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<crate::eval::EvalError> for CliError {
    fn from(e: crate::eval::EvalError) -> Self {
        match e {
            crate::eval::EvalError::Zsl(z) => CliError::from(z),
            crate::eval::EvalError::Train(t) => CliError::from(t),
            other => CliError::Data(other.to_string()),
        }
    }
}

fn io_data(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

/// Entry point used by the `zslpc` binary; returns the process exit code.
pub fn run(args: &[String]) -> i32 {
    match dispatch(args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("zslpc: {}", e.message());
            if e.exit_code() == EXIT_USAGE {
                eprintln!("{USAGE}");
            }
            e.exit_code()
        }
    }
}

fn dispatch(args: &[String]) -> Result<(), CliError> {
    let config = parse_args(args)?;
    match config.subcommand.as_str() {
        "ingest" => cmd_ingest(&config),
        "train" => cmd_train(&config),
        "eval-seen" => cmd_eval_seen(&config),
        "eval-zsl" => cmd_eval_zsl(&config),
        "sweep-t" => cmd_sweep_t(&config),
        "report" => cmd_report(&config),
        other => Err(CliError::Usage(format!("unknown subcommand {other:?}"))),
    }
}

const FLAG_KEYS: [&str; 15] = [
    "config",
    "dataset",
    "data-root",
    "cache",
    "vectors-w2v",
    "vectors-glove",
    "checkpoint",
    "encoder",
    "pooling",
    "semantics",
    "T",
    "seed",
    "epochs",
    "lr",
    "points",
];
const EXTRA_KEYS: [&str; 1] = ["out"];

fn parse_args(args: &[String]) -> Result<RunConfig, CliError> {
    let usage = |msg: String| CliError::Usage(msg);
    let subcommand = args
        .first()
        .ok_or_else(|| usage("missing subcommand".into()))?
        .clone();
    if subcommand == "--help" || subcommand == "-h" || subcommand == "help" {
        return Err(usage("help requested".into()));
    }

    // Collect raw key-value pairs from the command line.
    let mut given: BTreeMap<String, String> = BTreeMap::new();
    let mut i = 1;
    while i < args.len() {
        let flag = &args[i];
        let key = flag
            .strip_prefix("--")
            .ok_or_else(|| usage(format!("expected a --flag, found {flag:?}")))?;
        if !FLAG_KEYS.contains(&key) && !EXTRA_KEYS.contains(&key) {
            return Err(usage(format!("unknown flag --{key}")));
        }
        let value = args
            .get(i + 1)
            .ok_or_else(|| usage(format!("flag --{key} requires a value")))?;
        given.insert(key.to_string(), value.clone());
        i += 2;
    }

    // Config file provides defaults; explicit flags win.
    let mut merged: BTreeMap<String, String> = BTreeMap::new();
    if let Some(path) = given.get("config") {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config {path:?}: {e}")))?;
        let doc: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| usage(format!("bad config {path:?}: {e}")))?;
        let obj = doc
            .as_object()
            .ok_or_else(|| usage(format!("config {path:?} must be a flat JSON object")))?;
        for (key, value) in obj {
            if !FLAG_KEYS.contains(&key.as_str()) && !EXTRA_KEYS.contains(&key.as_str()) {
                return Err(usage(format!("unknown config key {key:?}")));
            }
            let rendered = match value {
                serde_json::Value::String(s) => s.clone(),
                serde_json::Value::Number(n) => n.to_string(),
                serde_json::Value::Bool(b) => b.to_string(),
                other => {
                    return Err(usage(format!("config key {key:?} has non-scalar value {other}")))
                }
            };
            merged.insert(key.clone(), rendered);
        }
    }
    for (key, value) in given {
        merged.insert(key, value);
    }

    let parse_u64 = |key: &str, v: &str| {
        v.parse::<u64>().map_err(|_| usage(format!("--{key} expects an integer, got {v:?}")))
    };
    let parse_usize = |key: &str, v: &str| {
        v.parse::<usize>().map_err(|_| usage(format!("--{key} expects an integer, got {v:?}")))
    };

    let dataset = merged.get("dataset").cloned().unwrap_or_else(|| "modelnet".into());
    let encoder = merged.get("encoder").cloned().unwrap_or_else(|| "pointnet".into());
    let pooling = merged.get("pooling").cloned().unwrap_or_else(|| "max".into());
    let semantics = merged.get("semantics").cloned().unwrap_or_else(|| "w2v".into());
    if !["pointnet", "edgeconv"].contains(&encoder.as_str()) {
        return Err(usage(format!("--encoder must be pointnet or edgeconv, got {encoder:?}")));
    }
    if !["max", "netvlad"].contains(&pooling.as_str()) {
        return Err(usage(format!("--pooling must be max or netvlad, got {pooling:?}")));
    }
    if SemanticMode::parse(&semantics).is_none() {
        return Err(usage(format!(
            "--semantics must be basic, w2v, glove or conc, got {semantics:?}"
        )));
    }

    let data_root = merged
        .get("data-root")
        .map(PathBuf::from)
        .or_else(|| std::env::var_os("ZSL_PC_DATA").map(PathBuf::from));

    Ok(RunConfig {
        subcommand,
        dataset,
        data_root,
        cache: merged.get("cache").map(PathBuf::from),
        vectors_w2v: merged.get("vectors-w2v").map(PathBuf::from),
        vectors_glove: merged.get("vectors-glove").map(PathBuf::from),
        checkpoint: merged.get("checkpoint").map(PathBuf::from),
        out: merged.get("out").map(PathBuf::from),
        encoder,
        pooling,
        semantics,
        t: merged.get("T").cloned(),
        seed: merged.get("seed").map(|v| parse_u64("seed", v)).transpose()?.unwrap_or(42),
        epochs: merged.get("epochs").map(|v| parse_usize("epochs", v)).transpose()?.unwrap_or(200),
        lr: merged
            .get("lr")
            .map(|v| {
                v.parse::<f64>().map_err(|_| usage(format!("--lr expects a float, got {v:?}")))
            })
            .transpose()?
            .unwrap_or(1e-3),
        points: merged
            .get("points")
            .map(|v| parse_usize("points", v))
            .transpose()?
            .unwrap_or(1024),
    })
}

fn require<'a, T>(opt: &'a Option<T>, what: &str) -> Result<&'a T, CliError> {
    opt.as_ref().ok_or_else(|| CliError::Usage(format!("--{what} is required")))
}

fn manifest_path(cache: &Path) -> PathBuf {
    cache.with_extension("manifest.json")
}

fn load_cache_and_manifest(config: &RunConfig) -> Result<(CachedDataset, SplitManifest), CliError> {
    let cache_path = require(&config.cache, "cache")?;
    let cache = CachedDataset::read(cache_path)?;
    let mpath = manifest_path(cache_path);
    let text = std::fs::read_to_string(&mpath).map_err(|e| io_data(&mpath, e))?;
    let manifest =
        SplitManifest::from_json(&text).map_err(|e| CliError::Data(format!("{}: {e}", mpath.display())))?;
    manifest.validate().map_err(|e| CliError::Data(e.to_string()))?;
    Ok((cache, manifest))
}

fn encoder_config(config: &RunConfig) -> EncoderConfig {
    let variant = match config.encoder.as_str() {
        "edgeconv" => EncoderVariant::EdgeConv,
        _ => EncoderVariant::PointNet,
    };
    let pooling = match config.pooling.as_str() {
        "netvlad" => Pooling::NetVlad,
        _ => Pooling::Max,
    };
    EncoderConfig::with_variant(variant, pooling)
}

/// Builds seen and unseen tables for a semantic space from the vector files.
fn build_tables(
    space: SemanticSpace,
    config: &RunConfig,
    manifest: &SplitManifest,
) -> Result<(SemanticEmbeddingTable, SemanticEmbeddingTable), CliError> {
    let single = |space: SemanticSpace| -> Result<(SemanticEmbeddingTable, SemanticEmbeddingTable), CliError> {
        let path = match space {
            SemanticSpace::W2v => require(&config.vectors_w2v, "vectors-w2v")?,
            SemanticSpace::Glove => require(&config.vectors_glove, "vectors-glove")?,
            SemanticSpace::Conc => unreachable!(),
        };
        let store = WordVectorStore::load(path, space)?;
        let seen = SemanticEmbeddingTable::build(&store, &manifest.seen_classes)?;
        let unseen = SemanticEmbeddingTable::build(&store, &manifest.unseen_classes)?;
        Ok((seen, unseen))
    };
    match space {
        SemanticSpace::Conc => {
            let (seen_w, unseen_w) = single(SemanticSpace::W2v)?;
            let (seen_g, unseen_g) = single(SemanticSpace::Glove)?;
            Ok((
                SemanticEmbeddingTable::fuse(&seen_w, &seen_g)?,
                SemanticEmbeddingTable::fuse(&unseen_w, &unseen_g)?,
            ))
        }
        other => single(other),
    }
}

fn artifact_stem(config: &RunConfig, manifest: &SplitManifest) -> String {
    format!("{}_{}_{}", manifest.dataset, config.encoder, config.pooling)
}

fn ensure_out(config: &RunConfig) -> Result<PathBuf, CliError> {
    let out = require(&config.out, "out")?.clone();
    std::fs::create_dir_all(&out).map_err(|e| io_data(&out, e))?;
    Ok(out)
}

fn cmd_ingest(config: &RunConfig) -> Result<(), CliError> {
    let root = require(&config.data_root, "data-root")?.clone();
    let cache_path = require(&config.cache, "cache")?.clone();
    let protocol =
        Protocol::parse(&config.dataset).map_err(|e| CliError::Usage(e.to_string()))?;
    let (mut manifest, cache) =
        crate::dataset::ingest(&root, protocol, config.points, config.seed)?;
    manifest.config = Some(config.echo());
    if let Some(parent) = cache_path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| io_data(parent, e))?;
        }
    }
    cache.write(&cache_path)?;
    let mpath = manifest_path(&cache_path);
    std::fs::write(&mpath, manifest.to_json()).map_err(|e| io_data(&mpath, e))?;
    println!(
        "ingested {} samples ({} train-seen, {} test-seen, {} test-unseen) into {}",
        manifest.records.len(),
        manifest.count_role(Role::TrainSeen),
        manifest.count_role(Role::TestSeen),
        manifest.count_role(Role::TestUnseen),
        cache_path.display()
    );
    Ok(())
}

fn cmd_train(config: &RunConfig) -> Result<(), CliError> {
    let (cache, manifest) = load_cache_and_manifest(config)?;
    let out = ensure_out(config)?;
    let mode = SemanticMode::parse(&config.semantics).expect("validated");
    let encoder = encoder_config(config);
    let train_config = TrainConfig {
        learning_rate: config.lr,
        epochs: config.epochs,
        ..TrainConfig::new(mode, config.seed)
    };
    let tables = match mode.table_space() {
        None => None,
        Some(space) => Some(build_tables(space, config, &manifest)?),
    };
    let seen_table = tables.as_ref().map(|(seen, _)| seen);

    let (mut checkpoint, stats) =
        train_model(&cache, &manifest, &encoder, &train_config, seen_table)?;
    checkpoint.meta.config_echo = Some(config.echo());

    let stem = format!("{}_{}", artifact_stem(config, &manifest), mode.id());
    let ckpt_path = out.join(format!("{stem}.ckpt"));
    checkpoint.save(&ckpt_path)?;
    let mut log = format!("# config: {}\n{}\n", config.echo_compact(), crate::train::EpochStats::CSV_HEADER);
    for s in &stats {
        log.push_str(&s.csv_row());
        log.push('\n');
    }
    let log_path = out.join(format!("{stem}.loss.csv"));
    std::fs::write(&log_path, log).map_err(|e| io_data(&log_path, e))?;
    let last = stats.last().expect("at least one epoch");
    println!(
        "trained {stem}: final loss {:.4}, train accuracy {:.1}% -> {}",
        last.mean_loss,
        last.train_accuracy,
        ckpt_path.display()
    );
    Ok(())
}

/// Loads the checkpoint plus whatever tables its head needs at inference.
fn load_checkpoint_and_tables(
    config: &RunConfig,
    manifest: &SplitManifest,
) -> Result<(Checkpoint, Option<(SemanticEmbeddingTable, SemanticEmbeddingTable)>, SemanticMode), CliError>
{
    let ckpt_path = require(&config.checkpoint, "checkpoint")?;
    let checkpoint = Checkpoint::load(ckpt_path)?;
    let trained_mode = checkpoint.meta.train.semantic_mode;
    // The basic head carries no table; inference embeddings come from the
    // space requested on the command line (default w2v).
    let table_mode = match trained_mode {
        SemanticMode::Basic => {
            SemanticMode::parse(&config.semantics).filter(|m| *m != SemanticMode::Basic).unwrap_or(SemanticMode::W2v)
        }
        other => other,
    };
    let tables = match table_mode.table_space() {
        None => None,
        Some(space) => Some(build_tables(space, config, manifest)?),
    };
    Ok((checkpoint, tables, table_mode))
}

fn cmd_eval_seen(config: &RunConfig) -> Result<(), CliError> {
    let (cache, manifest) = load_cache_and_manifest(config)?;
    let out = ensure_out(config)?;
    let ckpt_path = require(&config.checkpoint, "checkpoint")?;
    let checkpoint = Checkpoint::load(ckpt_path)?;
    // Basic checkpoints carry no table and need no vector files here.
    let tables = match checkpoint.meta.train.semantic_mode.table_space() {
        None => None,
        Some(space) => Some(build_tables(space, config, &manifest)?),
    };
    let seen_table = tables.as_ref().map(|(seen, _)| seen);
    let accuracy = seen_top1(&checkpoint, &cache, &manifest, Role::TestSeen, seen_table)?;
    let mode = checkpoint.meta.train.semantic_mode.id();
    let stem = format!("{}_{}", artifact_stem(config, &manifest), mode);
    let doc = serde_json::json!({
        "config": config.echo(),
        "protocol": manifest.dataset,
        "method": checkpoint.meta.encoder.method_id(),
        "semantic_mode": mode,
        "seen_top1": accuracy,
        "samples": manifest.count_role(Role::TestSeen),
    });
    let path = out.join(format!("{stem}.seen.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&doc).unwrap())
        .map_err(|e| io_data(&path, e))?;
    println!("seen top-1 accuracy: {accuracy:.1}% ({stem})");
    Ok(())
}

/// Report document written by eval-zsl and consumed by the report command.
#[derive(Debug, Serialize, Deserialize)]
struct ReportDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config: Option<serde_json::Value>,
    reports: Vec<EvaluationReport>,
}

fn parse_single_t(config: &RunConfig, s: usize) -> Result<usize, CliError> {
    match &config.t {
        None => Ok(s),
        Some(raw) => raw
            .parse::<usize>()
            .map_err(|_| CliError::Usage(format!("--T expects an integer, got {raw:?}"))),
    }
}

fn cmd_eval_zsl(config: &RunConfig) -> Result<(), CliError> {
    let (cache, manifest) = load_cache_and_manifest(config)?;
    let out = ensure_out(config)?;
    let (checkpoint, tables, table_mode) = load_checkpoint_and_tables(config, &manifest)?;
    let (seen_table, unseen_table) =
        tables.ok_or_else(|| CliError::Usage("zero-shot evaluation requires word vectors".into()))?;
    let t = parse_single_t(config, manifest.seen_classes.len())?;
    let head = match checkpoint.meta.train.semantic_mode {
        SemanticMode::Basic => InferenceHead::Basic,
        _ => InferenceHead::Semantic,
    };
    let predictions = classify_unseen_batch(
        &cache,
        &manifest,
        &checkpoint,
        &seen_table,
        &unseen_table,
        t,
        head,
    )?;
    // Reports are labeled by the mode that produced the probabilities; the
    // basic head keeps its own column regardless of the embedding space used
    // for the combination step.
    let mode_label = match head {
        InferenceHead::Basic => "basic".to_string(),
        InferenceHead::Semantic => table_mode.id().to_string(),
    };
    let report = EvaluationReport::from_predictions(
        &predictions,
        &manifest,
        checkpoint.meta.encoder.method_id(),
        mode_label.clone(),
    )?;

    let stem = format!("{}_{}", artifact_stem(config, &manifest), mode_label);
    let csv_path = out.join(format!("{stem}.predictions.csv"));
    let csv = predictions_csv(&predictions, &manifest.unseen_classes, Some(&config.echo_compact()));
    std::fs::write(&csv_path, csv).map_err(|e| io_data(&csv_path, e))?;
    let doc = ReportDocument { config: Some(config.echo()), reports: vec![report.clone()] };
    let report_path = out.join(format!("{stem}.report.json"));
    std::fs::write(&report_path, serde_json::to_string_pretty(&doc).unwrap())
        .map_err(|e| io_data(&report_path, e))?;
    println!(
        "zero-shot top-1 accuracy: {:.1}% over {} samples (T = {t}, random {:.1}%)",
        report.overall_top1, report.samples, report.random_baseline
    );
    Ok(())
}

fn cmd_sweep_t(config: &RunConfig) -> Result<(), CliError> {
    let (cache, manifest) = load_cache_and_manifest(config)?;
    let out = ensure_out(config)?;
    let (checkpoint, tables, table_mode) = load_checkpoint_and_tables(config, &manifest)?;
    let (seen_table, unseen_table) =
        tables.ok_or_else(|| CliError::Usage("sweep-t requires word vectors".into()))?;
    let t_values: Vec<usize> = match &config.t {
        None => vec![5, 10, 15, 20, 25, 30],
        Some(raw) => raw
            .split(',')
            .map(|tok| {
                tok.trim().parse::<usize>().map_err(|_| {
                    CliError::Usage(format!("--T expects integers separated by commas, got {tok:?}"))
                })
            })
            .collect::<Result<_, _>>()?,
    };
    let series = crate::eval::t_sweep(
        &cache,
        &manifest,
        &checkpoint,
        &seen_table,
        &unseen_table,
        &t_values,
    )?;
    let stem = format!("{}_{}", artifact_stem(config, &manifest), table_mode.id());
    let mut csv = format!("# config: {}\nT,accuracy\n", config.echo_compact());
    for (t, accuracy) in &series {
        csv.push_str(&format!("{t},{accuracy:.4}\n"));
    }
    let path = out.join(format!("{stem}.sweep.csv"));
    std::fs::write(&path, csv).map_err(|e| io_data(&path, e))?;
    for (t, accuracy) in &series {
        println!("T = {t:>3}: {accuracy:.1}%");
    }
    Ok(())
}

fn cmd_report(config: &RunConfig) -> Result<(), CliError> {
    let out = ensure_out(config)?;
    let mut reports = Vec::new();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(&out)
        .map_err(|e| io_data(&out, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(".report.json")))
        .collect();
    entries.sort();
    if entries.is_empty() {
        return Err(CliError::Data(format!(
            "no .report.json documents under {}",
            out.display()
        )));
    }
    for path in &entries {
        let text = std::fs::read_to_string(path).map_err(|e| io_data(path, e))?;
        let doc: ReportDocument = serde_json::from_str(&text)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        reports.extend(doc.reports);
    }
    let csv = emit_report(&reports, ReportFormat::Csv)?;
    let json = emit_report(&reports, ReportFormat::Json)?;
    // One combined document per (protocol, method) pair, named by the
    // convention <protocol>_<encoder>_<pooling>.<ext>.
    let mut pairs: Vec<(String, String)> = reports
        .iter()
        .map(|r| (r.protocol.clone(), r.method.clone()))
        .collect();
    pairs.sort();
    pairs.dedup();
    for (protocol, method) in &pairs {
        let subset: Vec<EvaluationReport> = reports
            .iter()
            .filter(|r| &r.protocol == protocol && &r.method == method)
            .cloned()
            .collect();
        let stem = format!("{protocol}_{}", method.replace('+', "_"));
        let sub_csv = emit_report(&subset, ReportFormat::Csv)?;
        let sub_json = emit_report(&subset, ReportFormat::Json)?;
        let csv_path = out.join(format!("{stem}.csv"));
        std::fs::write(&csv_path, sub_csv).map_err(|e| io_data(&csv_path, e))?;
        let json_path = out.join(format!("{stem}.json"));
        std::fs::write(&json_path, sub_json).map_err(|e| io_data(&json_path, e))?;
    }
    print!("{csv}");
    let combined = out.join("report.csv");
    std::fs::write(&combined, &csv).map_err(|e| io_data(&combined, e))?;
    let combined_json = out.join("report.json");
    std::fs::write(&combined_json, &json).map_err(|e| io_data(&combined_json, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn unknown_flag_is_usage_error() {
        let code = run(&args(&["train", "--pooling", "avg"]));
        assert_eq!(code, EXIT_USAGE);
        let code = run(&args(&["train", "--frobnicate", "yes"]));
        assert_eq!(code, EXIT_USAGE);
        let code = run(&args(&["transmogrify"]));
        assert_eq!(code, EXIT_USAGE);
    }

    #[test]
    fn flag_overrides_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("run.json");
        std::fs::write(&cfg_path, r#"{"seed": 7, "epochs": 3, "pooling": "netvlad"}"#).unwrap();
        let parsed = parse_args(&args(&[
            "train",
            "--config",
            cfg_path.to_str().unwrap(),
            "--seed",
            "9",
        ]))
        .map_err(|e| e.message().to_string())
        .unwrap();
        assert_eq!(parsed.seed, 9);
        assert_eq!(parsed.epochs, 3);
        assert_eq!(parsed.pooling, "netvlad");
    }

    #[test]
    fn data_root_defaults_from_environment() {
        // Set for this test only; parse_args reads the variable directly.
        std::env::set_var("ZSL_PC_DATA", "/tmp/zsl-data");
        let parsed = parse_args(&args(&["ingest"])).map_err(|e| e.message().to_string()).unwrap();
        assert_eq!(parsed.data_root, Some(PathBuf::from("/tmp/zsl-data")));
        std::env::remove_var("ZSL_PC_DATA");
    }

    #[test]
    fn missing_cache_is_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let code = run(&args(&[
            "eval-zsl",
            "--cache",
            dir.path().join("nope.pcz").to_str().unwrap(),
            "--checkpoint",
            dir.path().join("nope.ckpt").to_str().unwrap(),
            "--out",
            dir.path().to_str().unwrap(),
        ]));
        assert_eq!(code, EXIT_DATA);
    }
}
