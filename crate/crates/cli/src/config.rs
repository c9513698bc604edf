//! Layered configuration: `constants.toml` (fixed per experiment) plus one
//! file per stage under `stages/`, with `--set key=value` overrides applied
//! to the stage layer only.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use xmlwf_core::explain::{DEFAULT_BACKGROUND, DEFAULT_EXACT_LIMIT, DEFAULT_MAX_COALITIONS};
use xmlwf_core::report::DEFAULT_TOP_K;
use xmlwf_core::search::{Metric, Sampler};

use crate::CliError;

pub const CONSTANTS_FILE: &str = "constants.toml";
pub const ROOT_ENV: &str = "XMLWF_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Constants {
    pub store_root: String,
    pub experiment: String,
    #[serde(default)]
    pub description: String,
    pub data_path: String,
    pub target_name: String,
    pub seed: u64,
    pub test_fraction: f64,
}

pub const CONSTANT_KEYS: [&str; 7] = [
    "store_root",
    "experiment",
    "description",
    "data_path",
    "target_name",
    "seed",
    "test_fraction",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub transformers: Vec<String>,
    pub estimator: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    Grid,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomConfig {
    pub n_samples: usize,
    #[serde(default)]
    pub params: BTreeMap<String, Sampler>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchToml {
    #[serde(default)]
    pub strategy: Strategy,
    #[serde(default)]
    pub grid: BTreeMap<String, Vec<f64>>,
    pub random: Option<RandomConfig>,
}

fn default_k() -> usize {
    5
}

fn all_metrics() -> Vec<Metric> {
    Metric::ALL.to_vec()
}

fn default_selection() -> Metric {
    Metric::RocAuc
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainStage {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "all_metrics")]
    pub metrics: Vec<Metric>,
    #[serde(default = "default_selection")]
    pub selection_metric: Metric,
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub search: SearchToml,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestStage {
    #[serde(default = "all_metrics")]
    pub metrics: Vec<Metric>,
}

fn default_background() -> usize {
    DEFAULT_BACKGROUND
}

fn default_top_k() -> usize {
    DEFAULT_TOP_K
}

fn default_exact_limit() -> usize {
    DEFAULT_EXACT_LIMIT
}

fn default_max_coalitions() -> usize {
    DEFAULT_MAX_COALITIONS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplainStage {
    #[serde(default = "default_background")]
    pub background_m: usize,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default = "default_exact_limit")]
    pub exact_limit: usize,
    #[serde(default = "default_max_coalitions")]
    pub max_coalitions: usize,
}

/// One `--set key=value`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Override {
    pub key: String,
    pub raw: String,
}

impl Override {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let (key, raw) = text
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("--set expects key=value, got `{text}`")))?;
        let key = key.trim();
        if key.is_empty() || key.split('.').any(str::is_empty) {
            return Err(CliError::config(format!("--set: bad key `{key}`")));
        }
        Ok(Override {
            key: key.to_string(),
            raw: raw.trim().to_string(),
        })
    }

    /// TOML literal if it parses as one, else a bare string.
    fn value(&self) -> toml::Value {
        toml::from_str::<toml::Table>(&format!("v = {}", self.raw))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(self.raw.clone()))
    }
}

/// Stage-file layer with overrides applied.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Layered<S> {
    pub stage_name: String,
    pub constants: Constants,
    pub stage: S,
    pub overrides: Vec<Override>,
    #[serde(skip)]
    pub config_dir: PathBuf,
}

impl<S: Serialize> Layered<S> {
    pub fn store_root(&self) -> PathBuf {
        self.config_dir.join(&self.constants.store_root)
    }

    pub fn data_path(&self) -> PathBuf {
        self.config_dir.join(&self.constants.data_path)
    }

    /// The effective configuration as logged with a run.
    pub fn effective_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("config serializes");
        out.push(b'\n');
        out
    }
}

fn read_table(path: &Path) -> Result<toml::Table, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn deserialize<T: DeserializeOwned>(table: toml::Table, what: &str) -> Result<T, CliError> {
    toml::Value::Table(table)
        .try_into()
        .map_err(|e| CliError::config(format!("{what}: {e}")))
}

pub fn load_constants(config_dir: &Path, seed: Option<u64>) -> Result<Constants, CliError> {
    let table = read_table(&config_dir.join(CONSTANTS_FILE))?;
    let mut constants: Constants = deserialize(table, CONSTANTS_FILE)?;
    if let Some(seed) = seed {
        constants.seed = seed;
    }
    if let Ok(root) = std::env::var(ROOT_ENV) {
        if !root.is_empty() {
            constants.store_root = root;
        }
    }
    if !(0.0..1.0).contains(&constants.test_fraction) {
        return Err(CliError::config("test_fraction must be in [0, 1)"));
    }
    Ok(constants)
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), CliError> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("non-empty key");
    let mut cursor = table;
    for part in parts {
        let entry = cursor
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cursor = entry
            .as_table_mut()
            .ok_or_else(|| CliError::config(format!("--set {key}: `{part}` is not a table")))?;
    }
    cursor.insert(last.to_string(), value);
    Ok(())
}

/// Loads `constants.toml` and `stages/<stage>.toml`, applies overrides and
/// validates both layers. Constants keys may not appear in the stage layer.
pub fn load_stage<S: DeserializeOwned>(
    config_dir: &Path,
    stage_name: &str,
    seed: Option<u64>,
    overrides: &[String],
) -> Result<Layered<S>, CliError> {
    let constants = load_constants(config_dir, seed)?;
    let path = config_dir.join("stages").join(format!("{stage_name}.toml"));
    let mut table = read_table(&path)?;
    let overrides: Vec<Override> = overrides
        .iter()
        .map(|o| Override::parse(o))
        .collect::<Result<_, _>>()?;
    for o in &overrides {
        set_path(&mut table, &o.key, o.value())?;
    }
    if let Some(key) = table.keys().find(|k| CONSTANT_KEYS.contains(&k.as_str())) {
        return Err(CliError::config(format!(
            "`{key}` is an experiment constant; edit {CONSTANTS_FILE} instead of the {stage_name} stage"
        )));
    }
    let stage = deserialize(table, &format!("stages/{stage_name}.toml"))?;
    Ok(Layered {
        stage_name: stage_name.to_string(),
        constants,
        stage,
        overrides,
        config_dir: config_dir.to_path_buf(),
    })
}

pub fn constants_toml(c: &Constants) -> String {
    format!(
        r#"# Experiment constants, fixed for the lifetime of the experiment.
# Stage files and --set cannot change them; --seed and XMLWF_ROOT can.

# Store root, relative to this directory.
store_root = {root}
experiment = {exp}
description = {desc}
# CSV with a header row; empty cells are missing values.
data_path = {data}
# Binary 0/1 label column.
target_name = {target}
seed = {seed}
# Stratified holdout for the test stage; 0 trains on everything.
test_fraction = {frac}
"#,
        root = toml::Value::from(c.store_root.as_str()),
        exp = toml::Value::from(c.experiment.as_str()),
        desc = toml::Value::from(c.description.as_str()),
        data = toml::Value::from(c.data_path.as_str()),
        target = toml::Value::from(c.target_name.as_str()),
        seed = c.seed,
        frac = c.test_fraction,
    )
}

pub const TRAIN_TOML: &str = r#"# Train stage: holdout split, cross-validated search, refit of the best
# candidate, and logging of the run.

k = 5
metrics = ["accuracy", "balanced_accuracy", "f1", "roc_auc"]
selection_metric = "roc_auc"

[pipeline]
# Applied in order; mean_impute must precede standardize.
transformers = ["mean_impute", "standardize"]
# logistic_regression | linear_svm | random_forest | gradient_boosting
estimator = "logistic_regression"

# Fixed hyperparameters. Unlisted ones keep their defaults.
[pipeline.params]
max_iter = 500

[search]
# grid | random
strategy = "grid"

[search.grid]
l2 = [1e-4, 1e-2, 1.0]

# [search.random]
# n_samples = 20
# [search.random.params]
# l2 = { kind = "log_uniform", lo = 1e-5, hi = 1.0 }
# learning_rate = { kind = "uniform", lo = 0.05, hi = 0.5 }
"#;

pub const TEST_TOML: &str = r#"# Test stage: score the logged model on the held-out snapshot.

metrics = ["accuracy", "balanced_accuracy", "f1", "roc_auc"]
"#;

pub const EXPLAIN_TOML: &str = r#"# Explain stage: Shapley attributions on train and test snapshots.

# Background rows sampled from train.
background_m = 100
# Bars per chart.
top_k = 20
# Exact enumeration up to this many features, kernel estimation above.
exact_limit = 12
# Kernel coalition budget.
max_coalitions = 2048
"#;

#[cfg(test)]
mod tests {
    use super::*;

    fn scaffold(dir: &Path) {
        let c = Constants {
            store_root: ".".into(),
            experiment: "demo".into(),
            description: "d".into(),
            data_path: "data/demo.csv".into(),
            target_name: "y".into(),
            seed: 42,
            test_fraction: 0.25,
        };
        fs::create_dir_all(dir.join("stages")).unwrap();
        fs::write(dir.join(CONSTANTS_FILE), constants_toml(&c)).unwrap();
        fs::write(dir.join("stages/train.toml"), TRAIN_TOML).unwrap();
        fs::write(dir.join("stages/test.toml"), TEST_TOML).unwrap();
        fs::write(dir.join("stages/explain.toml"), EXPLAIN_TOML).unwrap();
    }

    #[test]
    fn templates_parse() {
        let tmp = tempfile::tempdir().unwrap();
        scaffold(tmp.path());
        let train: Layered<TrainStage> = load_stage(tmp.path(), "train", None, &[]).unwrap();
        assert_eq!(train.stage.search.grid["l2"], [1e-4, 1e-2, 1.0]);
        assert_eq!(train.constants.seed, 42);
        load_stage::<TestStage>(tmp.path(), "test", None, &[]).unwrap();
        let e: Layered<ExplainStage> = load_stage(tmp.path(), "explain", Some(9), &[]).unwrap();
        assert_eq!(e.stage.top_k, 20);
        assert_eq!(e.constants.seed, 9);
    }

    #[test]
    fn overrides_apply_to_stage() {
        let tmp = tempfile::tempdir().unwrap();
        scaffold(tmp.path());
        let sets = vec![
            "search.grid.l2=[0.1]".to_string(),
            "pipeline.estimator=random_forest".to_string(),
            "search.random.n_samples=3".to_string(),
        ];
        let t: Layered<TrainStage> = load_stage(tmp.path(), "train", None, &sets).unwrap();
        assert_eq!(t.stage.search.grid["l2"], [0.1]);
        assert_eq!(t.stage.pipeline.estimator, "random_forest");
        assert_eq!(t.stage.search.random.unwrap().n_samples, 3);
    }

    #[test]
    fn config_errors() {
        let tmp = tempfile::tempdir().unwrap();
        scaffold(tmp.path());
        let err = |sets: &[&str]| {
            let sets: Vec<String> = sets.iter().map(|s| s.to_string()).collect();
            load_stage::<TrainStage>(tmp.path(), "train", None, &sets).unwrap_err()
        };
        for bad in [
            &["seed=3"][..],
            &["kk=3"],
            &["pipeline.estimatr=x"],
            &["noequals"],
            &["k.x=1"],
        ] {
            assert_eq!(err(bad).code, crate::EXIT_CONFIG, "{bad:?}");
        }
        fs::write(tmp.path().join("stages/test.toml"), "metrics = [\"nope\"]").unwrap();
        assert!(load_stage::<TestStage>(tmp.path(), "test", None, &[]).is_err());
        fs::write(tmp.path().join("stages/test.toml"), "metrics = [").unwrap();
        assert!(load_stage::<TestStage>(tmp.path(), "test", None, &[]).is_err());
    }
}
