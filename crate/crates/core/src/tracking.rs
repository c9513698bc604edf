//! Plain-file experiment store.
//!
//! ```text
//! <root>/experiments/<name>/meta.json
//! <root>/experiments/<name>/runs/<run_id>/
//!     meta.json      status, timestamps, io description, data hashes, artifacts
//!     params.json    flat name → scalar map
//!     metrics.json   flat name → real map
//!     model.xmlwf    fitted pipeline blob
//!     data/          canonical TSV snapshots (train.tsv, test.tsv)
//!     shap/          attribution tables and summaries
//!     figures/       charts and the run report
//! ```
//!
//! Every JSON file is replaced by write-to-temp + rename, so a reader never
//! sees a partial file. Recorded values are append-only: a metric, param or
//! artifact, once written, can be re-written only with identical content.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use rand::RngCore;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{self, Dataset, DatasetError};
use crate::pipeline::{deserialize_model, serialize_model, FittedPipeline, PipelineError};
use crate::search::SearchResult;

pub const STORE_VERSION: u32 = 1;
pub const MODEL_FILE: &str = "model.xmlwf";

#[derive(Debug, Error)]
pub enum TrackingError {
    #[error("`{0}` is not a valid experiment name (use [a-z0-9-]+)")]
    BadSlug(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("invalid run state: {0}")]
    State(String),
    #[error("hash mismatch: recorded {recorded}, found {found}")]
    HashMismatch { recorded: String, found: String },
    #[error("`{0}` is already recorded with a different value")]
    Immutable(String),
    #[error("metric `{0}` is not finite")]
    NonFiniteMetric(String),
    #[error("unsupported store version {0}")]
    StoreVersion(u32),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("store I/O at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = TrackingError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> TrackingError + '_ {
    move |source| TrackingError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Replaces `path` with `bytes` via a temp file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| TrackingError::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("store types serialize");
    out.push(b'\n');
    out
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, &to_json(value))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|source| {
        if source.kind() == io::ErrorKind::NotFound {
            TrackingError::NotFound(path.display().to_string())
        } else {
            TrackingError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    })?;
    serde_json::from_slice(&bytes).map_err(|source| TrackingError::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn is_slug(name: &str) -> bool {
    !name.is_empty()
        && name
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-')
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentMeta {
    pub store_version: u32,
    pub name: String,
    pub description: String,
    pub created_at: DateTime<Utc>,
    #[serde(skip)]
    pub root: PathBuf,
}

impl ExperimentMeta {
    pub fn dir(&self) -> PathBuf {
        experiment_dir(&self.root, &self.name)
    }

    pub fn runs_dir(&self) -> PathBuf {
        self.dir().join("runs")
    }
}

fn experiment_dir(root: &Path, name: &str) -> PathBuf {
    root.join("experiments").join(name)
}

/// Creates `<root>/experiments/<name>/`. Repeating the call with the same
/// description returns the existing experiment.
pub fn create_experiment(root: &Path, name: &str, description: &str) -> Result<ExperimentMeta> {
    if !is_slug(name) {
        return Err(TrackingError::BadSlug(name.to_string()));
    }
    let dir = experiment_dir(root, name);
    let meta_path = dir.join("meta.json");
    if meta_path.exists() {
        let existing = open_experiment(root, name)?;
        if existing.description != description {
            return Err(TrackingError::Conflict(format!(
                "experiment `{name}` exists with description {:?}",
                existing.description
            )));
        }
        return Ok(existing);
    }
    let runs = dir.join("runs");
    fs::create_dir_all(&runs).map_err(io_err(&runs))?;
    let meta = ExperimentMeta {
        store_version: STORE_VERSION,
        name: name.to_string(),
        description: description.to_string(),
        created_at: Utc::now(),
        root: root.to_path_buf(),
    };
    write_json(&meta_path, &meta)?;
    Ok(meta)
}

pub fn open_experiment(root: &Path, name: &str) -> Result<ExperimentMeta> {
    let path = experiment_dir(root, name).join("meta.json");
    let mut meta: ExperimentMeta = read_json(&path)?;
    if meta.store_version != STORE_VERSION {
        return Err(TrackingError::StoreVersion(meta.store_version));
    }
    meta.root = root.to_path_buf();
    Ok(meta)
}

/// Scalar parameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
}

impl ParamValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Int(v) => Some(*v as f64),
            ParamValue::Float(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            ParamValue::Str(s) => Some(s),
            _ => None,
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Bool(v) => write!(f, "{v}"),
            ParamValue::Int(v) => write!(f, "{v}"),
            ParamValue::Float(v) => f.write_str(&crate::fmt_f64(*v)),
            ParamValue::Str(v) => f.write_str(v),
        }
    }
}

impl From<f64> for ParamValue {
    fn from(v: f64) -> Self {
        ParamValue::Float(v)
    }
}

impl From<i64> for ParamValue {
    fn from(v: i64) -> Self {
        ParamValue::Int(v)
    }
}

impl From<bool> for ParamValue {
    fn from(v: bool) -> Self {
        ParamValue::Bool(v)
    }
}

impl From<&str> for ParamValue {
    fn from(v: &str) -> Self {
        ParamValue::Str(v.to_string())
    }
}

impl From<String> for ParamValue {
    fn from(v: String) -> Self {
        ParamValue::Str(v)
    }
}

pub type Params = BTreeMap<String, ParamValue>;
pub type Metrics = BTreeMap<String, f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Finished,
    Failed,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Running => "running",
            RunStatus::Finished => "finished",
            RunStatus::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub n: usize,
    pub d: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IoDescription {
    pub feature_names: Vec<String>,
    pub target_name: String,
    /// Split name → shape.
    pub splits: BTreeMap<String, Shape>,
}

/// One tracked execution. `params` and `metrics` live in their own files;
/// the rest is `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub store_version: u32,
    pub run_id: String,
    pub experiment: String,
    pub status: RunStatus,
    pub started_at: DateTime<Utc>,
    pub ended_at: Option<DateTime<Utc>>,
    pub seed: u64,
    pub owner_pid: u32,
    pub io_description: Option<IoDescription>,
    pub data_hashes: BTreeMap<String, String>,
    /// Logical name → run-relative path.
    pub artifacts: BTreeMap<String, String>,
    pub error: Option<String>,
    #[serde(skip)]
    pub params: Params,
    #[serde(skip)]
    pub metrics: Metrics,
    #[serde(skip)]
    pub dir: PathBuf,
}

impl RunRecord {
    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn write_meta(&self) -> Result<()> {
        write_json(&self.path("meta.json"), self)
    }

    fn write_params(&self) -> Result<()> {
        write_json(&self.path("params.json"), &self.params)
    }

    fn write_metrics(&self) -> Result<()> {
        write_json(&self.path("metrics.json"), &self.metrics)
    }

    fn require_running(&self) -> Result<()> {
        if self.status != RunStatus::Running {
            return Err(TrackingError::State(format!(
                "run {} is {}, expected running",
                self.run_id,
                self.status.as_str()
            )));
        }
        Ok(())
    }

    /// A running run whose owning process is gone.
    pub fn is_stale(&self) -> bool {
        self.status == RunStatus::Running && !process_alive(self.owner_pid)
    }
}

#[cfg(target_os = "linux")]
fn process_alive(pid: u32) -> bool {
    pid == std::process::id() || Path::new(&format!("/proc/{pid}")).exists()
}

#[cfg(not(target_os = "linux"))]
fn process_alive(pid: u32) -> bool {
    pid == std::process::id()
}

fn new_run_id(rng: &mut dyn RngCore) -> String {
    let mut bytes = [0u8; 16];
    rng.fill_bytes(&mut bytes);
    hex::encode(bytes)
}

/// Creates the run skeleton and records `params` with status `running`.
///
/// Run ids are 128 random bits. `id_seed` makes the id sequence
/// reproducible (tests, golden comparisons); an id already present in the
/// experiment is skipped.
pub fn start_run(
    exp: &ExperimentMeta,
    params: Params,
    seed: u64,
    id_seed: Option<u64>,
) -> Result<RunRecord> {
    let runs = exp.runs_dir();
    if !runs.is_dir() {
        return Err(TrackingError::NotFound(format!(
            "experiment `{}`",
            exp.name
        )));
    }
    let mut rng: Box<dyn RngCore> = match id_seed {
        Some(s) => Box::new(dataset::seeded_rng(s)),
        None => Box::new(rand::rng()),
    };
    let (run_id, dir) = loop {
        let id = new_run_id(rng.as_mut());
        let dir = runs.join(&id);
        match fs::create_dir(&dir) {
            Ok(()) => break (id, dir),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => continue,
            Err(source) => return Err(TrackingError::Io { path: dir, source }),
        }
    };
    for sub in ["data", "shap", "figures"] {
        let p = dir.join(sub);
        fs::create_dir(&p).map_err(io_err(&p))?;
    }
    let run = RunRecord {
        store_version: STORE_VERSION,
        run_id,
        experiment: exp.name.clone(),
        status: RunStatus::Running,
        started_at: Utc::now(),
        ended_at: None,
        seed,
        owner_pid: std::process::id(),
        io_description: None,
        data_hashes: BTreeMap::new(),
        artifacts: BTreeMap::new(),
        error: None,
        params,
        metrics: Metrics::new(),
        dir,
    };
    run.write_params()?;
    run.write_metrics()?;
    run.write_meta()?;
    Ok(run)
}

pub fn load_run(exp: &ExperimentMeta, run_id: &str) -> Result<RunRecord> {
    if !run_id.bytes().all(|b| b.is_ascii_hexdigit()) || run_id.is_empty() {
        return Err(TrackingError::NotFound(format!("run `{run_id}`")));
    }
    let dir = exp.runs_dir().join(run_id);
    if !dir.join("meta.json").is_file() {
        return Err(TrackingError::NotFound(format!("run `{run_id}`")));
    }
    let mut run: RunRecord = read_json(&dir.join("meta.json"))?;
    if run.store_version != STORE_VERSION {
        return Err(TrackingError::StoreVersion(run.store_version));
    }
    run.params = read_json(&dir.join("params.json"))?;
    run.metrics = read_json(&dir.join("metrics.json"))?;
    run.dir = dir;
    Ok(run)
}

fn merge<V: PartialEq + Clone>(
    into: &mut BTreeMap<String, V>,
    new: impl IntoIterator<Item = (String, V)>,
    same: impl Fn(&V, &V) -> bool,
) -> Result<()> {
    let new: Vec<(String, V)> = new.into_iter().collect();
    for (k, v) in &new {
        if let Some(old) = into.get(k) {
            if !same(old, v) {
                return Err(TrackingError::Immutable(k.clone()));
            }
        }
    }
    into.extend(new);
    Ok(())
}

/// Adds params to `params.json`. Existing keys must keep their value.
pub fn append_params(run: &mut RunRecord, params: Params) -> Result<()> {
    merge(&mut run.params, params, |a, b| a == b)?;
    run.write_params()
}

/// Adds metrics to `metrics.json`. Existing keys must keep their exact bits.
pub fn append_metrics(run: &mut RunRecord, metrics: Metrics) -> Result<()> {
    if let Some((k, _)) = metrics.iter().find(|(_, v)| !v.is_finite()) {
        return Err(TrackingError::NonFiniteMetric(k.clone()));
    }
    merge(&mut run.metrics, metrics, |a, b| a.to_bits() == b.to_bits())?;
    run.write_metrics()
}

/// Writes `bytes` to `rel` inside the run and registers it under `name`.
/// Re-writing identical bytes is a no-op; different bytes are refused.
pub fn write_artifact(run: &mut RunRecord, name: &str, rel: &str, bytes: &[u8]) -> Result<()> {
    if let Some(existing) = run.artifacts.get(name) {
        if existing != rel {
            return Err(TrackingError::Immutable(format!("artifact {name}")));
        }
    }
    let path = run.path(rel);
    match fs::read(&path) {
        Ok(old) if old == bytes => {}
        Ok(_) => return Err(TrackingError::Immutable(rel.to_string())),
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(io_err(parent))?;
            }
            write_atomic(&path, bytes)?;
        }
        Err(source) => return Err(TrackingError::Io { path, source }),
    }
    if run.artifacts.get(name).map(String::as_str) != Some(rel) {
        run.artifacts.insert(name.to_string(), rel.to_string());
        run.write_meta()?;
    }
    Ok(())
}

/// Full CV table as persisted to `cv_table.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvTable {
    pub strategy: String,
    pub k: usize,
    pub metrics: Vec<String>,
    pub selection_metric: String,
    pub candidates: Vec<BTreeMap<String, f64>>,
    /// Metric name → `[candidate][fold]`.
    pub fold_scores: BTreeMap<String, Vec<Vec<f64>>>,
    pub mean_score: Vec<f64>,
    pub std_score: Vec<f64>,
    pub best_index: usize,
}

impl CvTable {
    pub fn from_search(search: &SearchResult) -> Self {
        CvTable {
            strategy: search.strategy.to_string(),
            k: search.k,
            metrics: search
                .metrics
                .iter()
                .map(|m| m.as_str().to_string())
                .collect(),
            selection_metric: search.selection_metric.as_str().to_string(),
            candidates: search.candidates.clone(),
            fold_scores: search
                .metrics
                .iter()
                .zip(&search.fold_scores)
                .map(|(m, s)| (m.as_str().to_string(), s.clone()))
                .collect(),
            mean_score: search.mean_score.clone(),
            std_score: search.std_score.clone(),
            best_index: search.best_index,
        }
    }
}

/// Resolved pipeline configuration as flat params.
pub fn model_params(model: &FittedPipeline) -> Params {
    let est = model.spec.estimator();
    let mut p = Params::new();
    p.insert("estimator".into(), est.kind().as_str().into());
    let transformers: Vec<&str> = model
        .spec
        .transformers()
        .iter()
        .map(|t| t.as_str())
        .collect();
    p.insert("transformers".into(), transformers.join(",").into());
    for spec in est.kind().schema() {
        let v = est.get(spec.name);
        let value = if spec.rule.is_integral() {
            ParamValue::Int(v as i64)
        } else {
            ParamValue::Float(v)
        };
        p.insert(spec.name.to_string(), value);
    }
    p
}

/// Records the five aspects of a trained run: model blob, resolved
/// params, io description, data snapshots and CV (+ test) metrics.
pub fn log_run_aspects(
    run: &mut RunRecord,
    model: &FittedPipeline,
    search: &SearchResult,
    train: &Dataset,
    test: Option<&Dataset>,
) -> Result<()> {
    run.require_running()?;

    write_artifact(run, "model", MODEL_FILE, &serialize_model(model))?;

    let mut params = model_params(model);
    params.insert("cv.k".into(), ParamValue::Int(search.k as i64));
    let names: Vec<&str> = search.metrics.iter().map(|m| m.as_str()).collect();
    params.insert("cv.metrics".into(), names.join(",").into());
    params.insert("search.strategy".into(), search.strategy.into());
    params.insert(
        "search.selection_metric".into(),
        search.selection_metric.as_str().into(),
    );
    params.insert(
        "search.n_candidates".into(),
        ParamValue::Int(search.candidates.len() as i64),
    );
    append_params(run, params)?;

    let mut splits = BTreeMap::new();
    let mut logged = vec![("train", train)];
    logged.extend(test.map(|t| ("test", t)));
    for (split, data) in &logged {
        if data.feature_names() != train.feature_names()
            || data.target_name() != train.target_name()
        {
            return Err(TrackingError::Conflict(format!(
                "{split} columns differ from train"
            )));
        }
        let bytes = data.canonical_bytes();
        let hash = sha256_hex(&bytes);
        if hash != data.content_hash() {
            return Err(TrackingError::HashMismatch {
                recorded: data.content_hash().to_string(),
                found: hash,
            });
        }
        write_artifact(
            run,
            &format!("data.{split}"),
            &format!("data/{split}.tsv"),
            &bytes,
        )?;
        merge(&mut run.data_hashes, [(split.to_string(), hash)], |a, b| {
            a == b
        })?;
        splits.insert(
            split.to_string(),
            Shape {
                n: data.n(),
                d: data.d(),
            },
        );
    }
    run.io_description = Some(IoDescription {
        feature_names: train.feature_names().to_vec(),
        target_name: train.target_name().to_string(),
        splits,
    });
    run.write_meta()?;

    let table = CvTable::from_search(search);
    write_artifact(run, "cv_table", "cv_table.json", &to_json(&table))?;

    let mut metrics = Metrics::new();
    for (m, scores) in search.metrics.iter().zip(&search.fold_scores) {
        let best = &scores[search.best_index];
        for (f, s) in best.iter().enumerate() {
            metrics.insert(format!("cv.{m}.fold{f}"), *s);
        }
        metrics.insert(format!("cv.{m}.mean"), crate::search::mean(best));
        metrics.insert(format!("cv.{m}.std"), crate::search::std_dev(best));
    }
    if let Some(t) = test {
        metrics.extend(test_metrics(model, t, &search.metrics)?);
    }
    append_metrics(run, metrics)
}

/// `test.<metric>` entries for `data`.
pub fn test_metrics(
    model: &FittedPipeline,
    data: &Dataset,
    metrics: &[crate::search::Metric],
) -> Result<Metrics> {
    let values = crate::search::evaluate(model, data.rows(), data.labels(), metrics)
        .map_err(|e| TrackingError::State(format!("test evaluation failed: {e}")))?;
    Ok(metrics
        .iter()
        .zip(values)
        .map(|(m, v)| (format!("test.{m}"), v))
        .collect())
}

/// Moves a running run to `finished` or `failed`.
pub fn finalize_run(run: &mut RunRecord, status: RunStatus, error: Option<String>) -> Result<()> {
    run.require_running()?;
    if status == RunStatus::Running {
        return Err(TrackingError::State("cannot finalize to running".into()));
    }
    let now = Utc::now();
    run.ended_at = Some(now.max(run.started_at));
    run.status = status;
    run.error = error;
    run.write_meta()
}

/// Loads a finished run's blob and checks it against the recorded train
/// hash.
pub fn load_run_model(root: &Path, experiment: &str, run_id: &str) -> Result<FittedPipeline> {
    let exp = open_experiment(root, experiment)?;
    let run = load_run(&exp, run_id)?;
    load_model_of(&run)
}

pub fn load_model_of(run: &RunRecord) -> Result<FittedPipeline> {
    if run.status != RunStatus::Finished {
        return Err(TrackingError::State(format!(
            "run {} is {}",
            run.run_id,
            run.status.as_str()
        )));
    }
    let rel = run
        .artifacts
        .get("model")
        .ok_or_else(|| TrackingError::NotFound(format!("model of run {}", run.run_id)))?;
    let path = run.path(rel);
    let bytes = fs::read(&path).map_err(|source| match source.kind() {
        io::ErrorKind::NotFound => TrackingError::NotFound(path.display().to_string()),
        _ => TrackingError::Io {
            path: path.clone(),
            source,
        },
    })?;
    let model = deserialize_model(&bytes)?;
    let recorded = run.data_hashes.get("train").cloned().unwrap_or_default();
    if model.train_data_hash != recorded {
        return Err(TrackingError::HashMismatch {
            recorded,
            found: model.train_data_hash,
        });
    }
    Ok(model)
}

/// Loads `data/<split>.tsv` and checks it against the recorded hash.
pub fn load_snapshot(run: &RunRecord, split: &str) -> Result<Dataset> {
    let recorded = run.data_hashes.get(split).ok_or_else(|| {
        TrackingError::NotFound(format!("{split} snapshot of run {}", run.run_id))
    })?;
    let path = run.path(&format!("data/{split}.tsv"));
    let bytes = fs::read(&path).map_err(|source| match source.kind() {
        io::ErrorKind::NotFound => TrackingError::NotFound(path.display().to_string()),
        _ => TrackingError::Io {
            path: path.clone(),
            source,
        },
    })?;
    // The file is the canonical form, so its bytes hash to the content hash;
    // checking before parsing reports corruption as such.
    let found = sha256_hex(&bytes);
    if &found != recorded {
        return Err(TrackingError::HashMismatch {
            recorded: recorded.clone(),
            found,
        });
    }
    let text = String::from_utf8(bytes)
        .map_err(|_| TrackingError::State(format!("{} is not UTF-8", path.display())))?;
    let data = dataset::parse_snapshot(&text)?;
    debug_assert_eq!(data.content_hash(), recorded);
    Ok(data)
}

/// All runs, sorted descending by `sort_key` (`started_at` or a metric
/// name). Runs lacking the metric come last; ties go by run id.
pub fn list_runs(root: &Path, experiment: &str, sort_key: &str) -> Result<Vec<RunRecord>> {
    let exp = open_experiment(root, experiment)?;
    let dir = exp.runs_dir();
    let mut runs = Vec::new();
    for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
        let entry = entry.map_err(io_err(&dir))?;
        let Some(id) = entry.file_name().to_str().map(str::to_string) else {
            continue;
        };
        if entry.path().join("meta.json").is_file() {
            runs.push(load_run(&exp, &id)?);
        }
    }
    runs.sort_by(|a, b| a.run_id.cmp(&b.run_id));
    if sort_key == "started_at" {
        runs.sort_by_key(|r| std::cmp::Reverse(r.started_at));
    } else {
        runs.sort_by(
            |a, b| match (a.metrics.get(sort_key), b.metrics.get(sort_key)) {
                (Some(x), Some(y)) => y.total_cmp(x),
                (Some(_), None) => std::cmp::Ordering::Less,
                (None, Some(_)) => std::cmp::Ordering::Greater,
                (None, None) => std::cmp::Ordering::Equal,
            },
        );
    }
    Ok(runs)
}

/// Problems found by [`audit_run`]; empty means the run is complete.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Audit {
    pub run_id: String,
    pub stale: bool,
    pub problems: Vec<String>,
}

impl Audit {
    pub fn passed(&self) -> bool {
        !self.stale && self.problems.is_empty()
    }
}

/// Verifies a finished run records all five aspects consistently: loadable
/// model whose resolved params match params.json, io description matching
/// the snapshots, snapshot hashes, and the full per-fold CV metric grid.
/// Running runs are only checked for staleness; failed runs pass.
pub fn audit_run(run: &RunRecord) -> Audit {
    let mut audit = Audit {
        run_id: run.run_id.clone(),
        stale: run.is_stale(),
        problems: Vec::new(),
    };
    if run.status != RunStatus::Finished {
        return audit;
    }
    let problems = &mut audit.problems;

    match load_model_of(run) {
        Ok(model) => {
            for (k, v) in model_params(&model) {
                match run.params.get(&k) {
                    Some(found) if *found == v => {}
                    Some(found) => {
                        problems.push(format!("param {k}: recorded {found}, model has {v}"))
                    }
                    None => problems.push(format!("param {k} missing")),
                }
            }
        }
        Err(e) => problems.push(format!("model: {e}")),
    }

    match &run.io_description {
        None => problems.push("io_description missing".into()),
        Some(io) => {
            if !run.data_hashes.contains_key("train") {
                problems.push("train snapshot missing".into());
            }
            for (split, shape) in &io.splits {
                match load_snapshot(run, split) {
                    Ok(data) => {
                        if data.n() != shape.n
                            || data.d() != shape.d
                            || data.feature_names() != io.feature_names.as_slice()
                            || data.target_name() != io.target_name
                        {
                            problems
                                .push(format!("{split} snapshot disagrees with io_description"));
                        }
                    }
                    Err(e) => problems.push(format!("{split} snapshot: {e}")),
                }
            }
            for split in run.data_hashes.keys() {
                if !io.splits.contains_key(split) {
                    problems.push(format!("{split} hash without io_description entry"));
                }
            }
        }
    }

    let k = run.params.get("cv.k").and_then(ParamValue::as_f64);
    let names = run.params.get("cv.metrics").and_then(ParamValue::as_str);
    match (k, names) {
        (Some(k), Some(names)) if k >= 2.0 => {
            for m in names.split(',') {
                for f in 0..k as usize {
                    let key = format!("cv.{m}.fold{f}");
                    if !run.metrics.contains_key(&key) {
                        problems.push(format!("metric {key} missing"));
                    }
                }
            }
        }
        _ => problems.push("cv.k / cv.metrics params missing".into()),
    }
    if run.metrics.is_empty() {
        problems.push("no metrics".into());
    }
    audit
}

pub fn audit_experiment(root: &Path, experiment: &str) -> Result<Vec<Audit>> {
    let mut runs = list_runs(root, experiment, "started_at")?;
    runs.sort_by(|a, b| a.run_id.cmp(&b.run_id));
    Ok(runs.iter().map(audit_run).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synthetic;
    use crate::pipeline::{EstimatorKind, EstimatorSpec, PipelineSpec, TransformerKind};
    use crate::search::{run_search, Metric, ParamGrid, SearchConfig, SearchSpace};

    fn exp(root: &Path) -> ExperimentMeta {
        create_experiment(root, "demo", "test experiment").unwrap()
    }

    fn trained(k: usize, metrics: Vec<Metric>, l2: Vec<f64>) -> (Dataset, Dataset, SearchResult) {
        let data = synthetic(120, 3, 2, 0.25, 5).unwrap();
        let (train, test) = dataset::split_holdout(&data, 0.25, 1).unwrap();
        let template = PipelineSpec::new(
            vec![TransformerKind::Standardize],
            EstimatorSpec::with_defaults(EstimatorKind::LogisticRegression, 3),
        )
        .unwrap();
        let space = SearchSpace::Grid(ParamGrid::new(vec![("l2".into(), l2)]));
        let config = SearchConfig {
            k,
            selection_metric: Metric::RocAuc,
            metrics,
            seed: 3,
        };
        let result = run_search(&space, &template, &train, &config).unwrap();
        (train, test, result)
    }

    fn finished(root: &Path, test: bool) -> RunRecord {
        let e = exp(root);
        let (train, t, search) = trained(3, vec![Metric::Accuracy], vec![0.1]);
        let mut run = start_run(&e, Params::new(), 3, None).unwrap();
        let model = search.best_model.clone();
        log_run_aspects(&mut run, &model, &search, &train, test.then_some(&t)).unwrap();
        finalize_run(&mut run, RunStatus::Finished, None).unwrap();
        run
    }

    #[test]
    fn metrics_round_trip_bit_exactly() {
        let tmp = tempfile::tempdir().unwrap();
        let e = exp(tmp.path());
        let mut run = start_run(&e, Params::new(), 0, None).unwrap();
        let values = [
            0.1 + 0.2,
            1.0 / 3.0,
            1e-300,
            5e-324,
            0.9968253968253968,
            -0.0,
        ];
        let metrics: Metrics = values
            .iter()
            .enumerate()
            .map(|(i, v)| (format!("m{i}"), *v))
            .collect();
        append_metrics(&mut run, metrics.clone()).unwrap();
        let back = load_run(&e, &run.run_id).unwrap();
        for (k, v) in &metrics {
            assert_eq!(back.metrics[k].to_bits(), v.to_bits(), "{k}");
        }
        // re-appending the reloaded values is an exact no-op
        let mut back = back;
        append_metrics(&mut back, metrics).unwrap();
    }

    #[test]
    fn experiment_creation() {
        let tmp = tempfile::tempdir().unwrap();
        let a = exp(tmp.path());
        assert_eq!(a, exp(tmp.path()));
        assert!(tmp.path().join("experiments/demo/runs").is_dir());
        assert!(matches!(
            create_experiment(tmp.path(), "demo", "other"),
            Err(TrackingError::Conflict(_))
        ));
        assert!(matches!(
            create_experiment(tmp.path(), "My Exp", ""),
            Err(TrackingError::BadSlug(_))
        ));
    }

    #[test]
    fn start_layout_and_params() {
        let tmp = tempfile::tempdir().unwrap();
        let e = exp(tmp.path());
        let params: Params = [
            ("seed".to_string(), ParamValue::Int(4)),
            ("l2".to_string(), ParamValue::Float(0.1)),
            ("flag".to_string(), ParamValue::Bool(true)),
            ("name".to_string(), ParamValue::Str("x".into())),
        ]
        .into_iter()
        .collect();
        let a = start_run(&e, params.clone(), 4, None).unwrap();
        let b = start_run(&e, Params::new(), 4, None).unwrap();
        assert_ne!(a.run_id, b.run_id);
        assert_eq!(a.run_id.len(), 32);
        for sub in ["data", "shap", "figures"] {
            assert!(a.dir.join(sub).is_dir());
        }
        let back: Params = read_json(&a.path("params.json")).unwrap();
        assert_eq!(back, params);
        assert_eq!(load_run(&e, &a.run_id).unwrap(), a);
    }

    #[test]
    fn seeded_ids_skip_existing() {
        let tmp = tempfile::tempdir().unwrap();
        let e = exp(tmp.path());
        let a = start_run(&e, Params::new(), 0, Some(9)).unwrap();
        let b = start_run(&e, Params::new(), 0, Some(9)).unwrap();
        assert_ne!(a.run_id, b.run_id);
        let other = tempfile::tempdir().unwrap();
        let c = start_run(&exp(other.path()), Params::new(), 0, Some(9)).unwrap();
        assert_eq!(a.run_id, c.run_id);
    }

    #[test]
    fn logging_shapes() {
        let tmp = tempfile::tempdir().unwrap();
        let e = exp(tmp.path());
        let (train, _, search) = trained(
            5,
            vec![Metric::Accuracy, Metric::RocAuc],
            vec![1e-4, 1e-2, 1.0],
        );
        let mut run = start_run(&e, Params::new(), 3, None).unwrap();
        log_run_aspects(&mut run, &search.best_model, &search, &train, None).unwrap();
        let folds = run.metrics.keys().filter(|k| k.contains(".fold")).count();
        assert_eq!(folds, 10);
        assert!(!run.metrics.keys().any(|k| k.starts_with("test.")));
        let table: CvTable = read_json(&run.path("cv_table.json")).unwrap();
        assert_eq!(table.fold_scores["roc_auc"].len(), 3);
        assert!(table.fold_scores["roc_auc"].iter().all(|r| r.len() == 5));
        let bytes = fs::read(run.path("data/train.tsv")).unwrap();
        assert_eq!(sha256_hex(&bytes), run.data_hashes["train"]);
    }

    #[test]
    fn finalize_transitions() {
        let tmp = tempfile::tempdir().unwrap();
        let mut run = finished(tmp.path(), true);
        assert!(run.ended_at.unwrap() >= run.started_at);
        assert!(matches!(
            finalize_run(&mut run, RunStatus::Failed, None),
            Err(TrackingError::State(_))
        ));
        let e = open_experiment(tmp.path(), "demo").unwrap();
        let r = load_run(&e, &run.run_id).unwrap();
        assert_eq!(r.status, RunStatus::Finished);
    }

    #[test]
    fn model_round_trip_and_tamper() {
        let tmp = tempfile::tempdir().unwrap();
        let run = finished(tmp.path(), true);
        let model = load_run_model(tmp.path(), "demo", &run.run_id).unwrap();
        let test = load_snapshot(&run, "test").unwrap();
        let stored = deserialize_model(&fs::read(run.path(MODEL_FILE)).unwrap()).unwrap();
        assert_eq!(
            model.predict_scores(test.rows()).unwrap(),
            stored.predict_scores(test.rows()).unwrap()
        );
        assert!(matches!(
            load_run_model(tmp.path(), "demo", "00ff"),
            Err(TrackingError::NotFound(_))
        ));

        let meta = run.path("meta.json");
        let text = fs::read_to_string(&meta).unwrap();
        let hash = &run.data_hashes["train"];
        fs::write(&meta, text.replace(hash.as_str(), &"0".repeat(64))).unwrap();
        assert!(matches!(
            load_run_model(tmp.path(), "demo", &run.run_id),
            Err(TrackingError::HashMismatch { .. })
        ));
    }

    #[test]
    fn audit_detects_damage() {
        let tmp = tempfile::tempdir().unwrap();
        let run = finished(tmp.path(), true);
        let audit = audit_run(&run);
        assert!(audit.passed(), "{:?}", audit.problems);

        fs::write(
            run.path("data/test.tsv"),
            "x1\tx2\tx3\ty\n0\t0\t0\t1\n1\t1\t1\t0",
        )
        .unwrap();
        assert!(!audit_run(&run).passed());

        let mut other = run.clone();
        other.metrics.remove("cv.accuracy.fold1");
        assert!(audit_run(&other)
            .problems
            .iter()
            .any(|p| p.contains("fold1")));

        let mut other = run.clone();
        other.params.insert("l2".into(), ParamValue::Float(7.0));
        assert!(!audit_run(&other).passed());
    }

    #[test]
    fn stale_runs_are_flagged() {
        let tmp = tempfile::tempdir().unwrap();
        let e = exp(tmp.path());
        let mut run = start_run(&e, Params::new(), 0, None).unwrap();
        assert!(!run.is_stale());
        run.owner_pid = u32::MAX;
        run.write_meta().unwrap();
        let loaded = load_run(&e, &run.run_id).unwrap();
        assert!(loaded.is_stale());
        assert!(!audit_run(&loaded).passed());
    }

    #[test]
    fn append_only() {
        let tmp = tempfile::tempdir().unwrap();
        let mut run = finished(tmp.path(), false);
        let key = "cv.accuracy.fold0".to_string();
        let v = run.metrics[&key];
        append_metrics(&mut run, [(key.clone(), v)].into_iter().collect()).unwrap();
        assert!(matches!(
            append_metrics(&mut run, [(key, v + 1.0)].into_iter().collect()),
            Err(TrackingError::Immutable(_))
        ));
        assert!(matches!(
            write_artifact(&mut run, "model", MODEL_FILE, b"junk"),
            Err(TrackingError::Immutable(_))
        ));
        assert!(matches!(
            append_metrics(&mut run, [("x".into(), f64::NAN)].into_iter().collect()),
            Err(TrackingError::NonFiniteMetric(_))
        ));
    }

    #[test]
    fn listing_order() {
        let tmp = tempfile::tempdir().unwrap();
        let e = exp(tmp.path());
        assert!(list_runs(tmp.path(), "demo", "test.roc_auc")
            .unwrap()
            .is_empty());
        let vals = [0.5, 0.9, 0.9, 0.7];
        for v in vals {
            let mut r = start_run(&e, Params::new(), 0, None).unwrap();
            append_metrics(&mut r, [("test.roc_auc".into(), v)].into_iter().collect()).unwrap();
        }
        start_run(&e, Params::new(), 0, None).unwrap();
        let runs = list_runs(tmp.path(), "demo", "test.roc_auc").unwrap();
        assert_eq!(runs.len(), 5);
        let got: Vec<Option<f64>> = runs
            .iter()
            .map(|r| r.metrics.get("test.roc_auc").copied())
            .collect();
        assert_eq!(got, [Some(0.9), Some(0.9), Some(0.7), Some(0.5), None]);
        assert!(runs[0].run_id < runs[1].run_id);
        assert!(matches!(
            list_runs(tmp.path(), "nope", "started_at"),
            Err(TrackingError::NotFound(_))
        ));
    }

    #[test]
    fn atomic_write_replaces() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("f.json");
        write_atomic(&p, b"{}").unwrap();
        write_atomic(&p, b"[1]").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"[1]");
        assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 1);
    }
}
