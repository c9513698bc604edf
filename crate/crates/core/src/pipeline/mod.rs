//! Preprocessing + estimator chains.
//!
//! A [`PipelineSpec`] declares the chain; [`fit_pipeline`] learns it into a
//! [`FittedPipeline`], which predicts and round-trips through the versioned
//! `XMLWF` blob format (see [`blob`]).

pub mod blob;
pub mod linear;
pub mod transform;
pub mod tree;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::dataset::{Dataset, Matrix};
use crate::fmt_f64;
use crate::par;

pub use blob::{deserialize_model, serialize_model, FORMAT_VERSION, MAGIC};
pub use transform::FittedTransformer;
pub use tree::{Node, Tree};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("invalid pipeline: {0}")]
    InvalidSpec(String),
    #[error("`{name}` is not a hyperparameter of {kind}")]
    UnknownParam { kind: EstimatorKind, name: String },
    #[error("hyperparameter `{name}` = {value} violates `{rule}`")]
    ParamOutOfRange {
        name: String,
        value: f64,
        rule: &'static str,
    },
    #[error("data contains missing values but the pipeline has no mean_impute step")]
    NaNWithoutImputer,
    #[error("training labels contain a single class")]
    SingleClassTrain,
    #[error("{0} diverged to a non-finite loss; lower the learning rate")]
    NonFiniteLoss(EstimatorKind),
    #[error("expected {expected} feature columns, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("not an XMLWF model blob")]
    BadMagic,
    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u32),
    #[error("model blob is truncated")]
    TruncatedBlob,
    #[error("model blob checksum does not match its payload")]
    ChecksumMismatch,
    #[error("corrupt model blob: {0}")]
    CorruptBlob(String),
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TransformerKind {
    MeanImpute,
    Standardize,
}

impl TransformerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TransformerKind::MeanImpute => "mean_impute",
            TransformerKind::Standardize => "standardize",
        }
    }
}

impl fmt::Display for TransformerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TransformerKind {
    type Err = PipelineError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean_impute" => Ok(TransformerKind::MeanImpute),
            "standardize" => Ok(TransformerKind::Standardize),
            _ => Err(PipelineError::InvalidSpec(format!(
                "unknown transformer `{s}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EstimatorKind {
    LogisticRegression,
    LinearSvm,
    RandomForest,
    GradientBoosting,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParamRule {
    /// Real strictly above the bound.
    Above(f64),
    /// Real at or above the bound.
    AtLeast(f64),
    /// Integer at or above the bound.
    Integer(u32),
    Bool,
}

impl ParamRule {
    fn describe(self) -> &'static str {
        match self {
            ParamRule::Above(_) => "> 0",
            ParamRule::AtLeast(_) => ">= 0",
            ParamRule::Integer(0) => "integer >= 0",
            ParamRule::Integer(_) => "integer >= 1",
            ParamRule::Bool => "0 or 1",
        }
    }

    fn admits(self, v: f64) -> bool {
        if !v.is_finite() {
            return false;
        }
        match self {
            ParamRule::Above(lo) => v > lo,
            ParamRule::AtLeast(lo) => v >= lo,
            ParamRule::Integer(lo) => {
                v.fract() == 0.0 && v >= f64::from(lo) && v <= f64::from(u32::MAX)
            }
            ParamRule::Bool => v == 0.0 || v == 1.0,
        }
    }

    pub fn is_integral(self) -> bool {
        matches!(self, ParamRule::Integer(_) | ParamRule::Bool)
    }
}

/// One entry of an estimator's hyperparameter schema.
#[derive(Debug, Clone, Copy)]
pub struct ParamSpec {
    pub name: &'static str,
    pub default: f64,
    pub rule: ParamRule,
}

const fn p(name: &'static str, default: f64, rule: ParamRule) -> ParamSpec {
    ParamSpec {
        name,
        default,
        rule,
    }
}

const LOGISTIC: &[ParamSpec] = &[
    p("l2", 1e-4, ParamRule::AtLeast(0.0)),
    p("learning_rate", 0.1, ParamRule::Above(0.0)),
    p("max_iter", 500.0, ParamRule::Integer(0)),
    p("tol", 1e-6, ParamRule::AtLeast(0.0)),
];
const SVM: &[ParamSpec] = &[
    p("epochs", 100.0, ParamRule::Integer(1)),
    p("lambda", 1e-2, ParamRule::Above(0.0)),
];
const FOREST: &[ParamSpec] = &[
    p("bootstrap", 1.0, ParamRule::Bool),
    p("max_depth", 8.0, ParamRule::Integer(1)),
    p("min_samples_leaf", 1.0, ParamRule::Integer(1)),
    p("n_trees", 100.0, ParamRule::Integer(1)),
];
const BOOSTING: &[ParamSpec] = &[
    p("learning_rate", 0.1, ParamRule::Above(0.0)),
    p("max_depth", 3.0, ParamRule::Integer(1)),
    p("n_rounds", 100.0, ParamRule::Integer(0)),
];

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 4] = [
        EstimatorKind::LogisticRegression,
        EstimatorKind::LinearSvm,
        EstimatorKind::RandomForest,
        EstimatorKind::GradientBoosting,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::LogisticRegression => "logistic_regression",
            EstimatorKind::LinearSvm => "linear_svm",
            EstimatorKind::RandomForest => "random_forest",
            EstimatorKind::GradientBoosting => "gradient_boosting",
        }
    }

    /// Hyperparameter schema, sorted by name.
    pub fn schema(self) -> &'static [ParamSpec] {
        match self {
            EstimatorKind::LogisticRegression => LOGISTIC,
            EstimatorKind::LinearSvm => SVM,
            EstimatorKind::RandomForest => FOREST,
            EstimatorKind::GradientBoosting => BOOSTING,
        }
    }

    pub fn param(self, name: &str) -> Option<&'static ParamSpec> {
        self.schema().iter().find(|s| s.name == name)
    }

    /// Decision threshold on [`FittedPipeline::predict_scores`] output.
    pub fn threshold(self) -> f64 {
        match self {
            EstimatorKind::LinearSvm => 0.0,
            _ => 0.5,
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorKind {
    type Err = PipelineError;
    fn from_str(s: &str) -> Result<Self> {
        EstimatorKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| PipelineError::InvalidSpec(format!("unknown estimator `{s}`")))
    }
}

/// Estimator kind with a fully resolved hyperparameter map.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSpec {
    kind: EstimatorKind,
    hyperparams: BTreeMap<String, f64>,
    seed: u64,
}

impl EstimatorSpec {
    /// Fills defaults for every schema entry not in `overrides` and validates
    /// the result.
    pub fn new(kind: EstimatorKind, overrides: &BTreeMap<String, f64>, seed: u64) -> Result<Self> {
        for name in overrides.keys() {
            if kind.param(name).is_none() {
                return Err(PipelineError::UnknownParam {
                    kind,
                    name: name.clone(),
                });
            }
        }
        let mut hyperparams = BTreeMap::new();
        for spec in kind.schema() {
            let value = overrides.get(spec.name).copied().unwrap_or(spec.default);
            if !spec.rule.admits(value) {
                return Err(PipelineError::ParamOutOfRange {
                    name: spec.name.to_string(),
                    value,
                    rule: spec.rule.describe(),
                });
            }
            hyperparams.insert(spec.name.to_string(), value);
        }
        Ok(EstimatorSpec {
            kind,
            hyperparams,
            seed,
        })
    }

    pub fn with_defaults(kind: EstimatorKind, seed: u64) -> Self {
        Self::new(kind, &BTreeMap::new(), seed).expect("defaults satisfy the schema")
    }

    pub fn kind(&self) -> EstimatorKind {
        self.kind
    }

    pub fn hyperparams(&self) -> &BTreeMap<String, f64> {
        &self.hyperparams
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn get(&self, name: &str) -> f64 {
        self.hyperparams[name]
    }

    fn get_usize(&self, name: &str) -> usize {
        self.hyperparams[name] as usize
    }

    /// Same estimator with some hyperparameters and the seed replaced.
    pub fn with_params(&self, params: &BTreeMap<String, f64>, seed: u64) -> Result<Self> {
        let mut merged = self.hyperparams.clone();
        merged.extend(params.iter().map(|(k, v)| (k.clone(), *v)));
        Self::new(self.kind, &merged, seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSpec {
    transformers: Vec<TransformerKind>,
    estimator: EstimatorSpec,
}

impl PipelineSpec {
    pub fn new(transformers: Vec<TransformerKind>, estimator: EstimatorSpec) -> Result<Self> {
        for (i, t) in transformers.iter().enumerate() {
            if transformers[..i].contains(t) {
                return Err(PipelineError::InvalidSpec(format!("`{t}` appears twice")));
            }
        }
        let pos = |k| transformers.iter().position(|t| *t == k);
        if let (Some(imp), Some(std)) = (
            pos(TransformerKind::MeanImpute),
            pos(TransformerKind::Standardize),
        ) {
            if imp > std {
                return Err(PipelineError::InvalidSpec(
                    "mean_impute must precede standardize".into(),
                ));
            }
        }
        Ok(PipelineSpec {
            transformers,
            estimator,
        })
    }

    pub fn transformers(&self) -> &[TransformerKind] {
        &self.transformers
    }

    pub fn estimator(&self) -> &EstimatorSpec {
        &self.estimator
    }

    pub fn has_imputer(&self) -> bool {
        self.transformers.contains(&TransformerKind::MeanImpute)
    }

    pub fn with_estimator(&self, estimator: EstimatorSpec) -> Self {
        PipelineSpec {
            transformers: self.transformers.clone(),
            estimator,
        }
    }

    /// Line-oriented canonical text: transformers, estimator, seed, then one
    /// `name=value` line per hyperparameter in name order.
    pub fn canonical_text(&self) -> String {
        let names: Vec<&str> = self.transformers.iter().map(|t| t.as_str()).collect();
        let mut out = format!(
            "transformers={}\nestimator={}\nseed={}\n",
            names.join(","),
            self.estimator.kind,
            self.estimator.seed
        );
        for (k, v) in &self.estimator.hyperparams {
            out.push_str(&format!("{k}={}\n", fmt_f64(*v)));
        }
        out
    }

    pub fn from_canonical_text(text: &str) -> Result<Self> {
        let bad = |m: &str| PipelineError::CorruptBlob(format!("spec text: {m}"));
        let mut lines = text.lines();
        let mut field = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad("too short"))?;
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix('='))
                .map(str::to_string)
                .ok_or_else(|| bad(line))
        };
        let transformers = field("transformers")?;
        let estimator: EstimatorKind = field("estimator")?.parse()?;
        let seed: u64 = field("seed")?.parse().map_err(|_| bad("seed"))?;
        let mut params = BTreeMap::new();
        for line in lines {
            let (k, v) = line.split_once('=').ok_or_else(|| bad(line))?;
            params.insert(k.to_string(), v.parse::<f64>().map_err(|_| bad(line))?);
        }
        let transformers = transformers
            .split(',')
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect::<Result<Vec<_>>>()?;
        PipelineSpec::new(transformers, EstimatorSpec::new(estimator, &params, seed)?)
    }
}

/// Learned estimator state.
#[derive(Debug, Clone, PartialEq)]
pub enum FittedModel {
    /// Logistic regression or linear SVM: `w·x + b`.
    Linear { weights: Vec<f64>, bias: f64 },
    /// Mean of member-tree leaf class-1 frequencies.
    Forest { trees: Vec<Tree> },
    /// `sigmoid(init + Σ tree(x))`; leaf values already include shrinkage.
    Boosted { init: f64, trees: Vec<Tree> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedPipeline {
    pub spec: PipelineSpec,
    pub n_features: usize,
    pub transformers: Vec<FittedTransformer>,
    pub model: FittedModel,
    pub train_data_hash: String,
    pub format_version: u32,
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Fits transformers in order on progressively transformed data, then the
/// estimator on the final matrix.
pub fn fit_pipeline(spec: &PipelineSpec, train: &Dataset) -> Result<FittedPipeline> {
    let (c0, c1) = train.class_counts();
    if c0 == 0 || c1 == 0 {
        return Err(PipelineError::SingleClassTrain);
    }
    if !spec.has_imputer() && train.rows().has_nan() {
        return Err(PipelineError::NaNWithoutImputer);
    }
    let mut x = train.rows().clone();
    let mut transformers = Vec::with_capacity(spec.transformers.len());
    for kind in &spec.transformers {
        let fitted = FittedTransformer::fit(*kind, &x)?;
        fitted.apply_matrix(&mut x);
        transformers.push(fitted);
    }
    let y = train.labels();
    let est = &spec.estimator;
    let model = match est.kind {
        EstimatorKind::LogisticRegression => {
            let (weights, bias) = linear::fit_logistic(
                &x,
                y,
                &linear::LogisticParams {
                    l2: est.get("l2"),
                    learning_rate: est.get("learning_rate"),
                    max_iter: est.get_usize("max_iter"),
                    tol: est.get("tol"),
                },
            )?;
            FittedModel::Linear { weights, bias }
        }
        EstimatorKind::LinearSvm => {
            let (weights, bias) =
                linear::fit_pegasos(&x, y, est.get("lambda"), est.get_usize("epochs"), est.seed)?;
            FittedModel::Linear { weights, bias }
        }
        EstimatorKind::RandomForest => FittedModel::Forest {
            trees: fit_forest(&x, y, est),
        },
        EstimatorKind::GradientBoosting => {
            let (init, trees) = fit_boosting(&x, y, est)?;
            FittedModel::Boosted { init, trees }
        }
    };
    Ok(FittedPipeline {
        spec: spec.clone(),
        n_features: train.d(),
        transformers,
        model,
        train_data_hash: train.content_hash().to_string(),
        format_version: FORMAT_VERSION,
    })
}

/// Bagged CART trees. Tree `t` draws from its own stream seeded `seed ^ t`,
/// so members can be grown in parallel without changing the result.
fn fit_forest(x: &Matrix, y: &[u8], est: &EstimatorSpec) -> Vec<Tree> {
    let n = x.nrows();
    let d = x.ncols();
    let params = tree::TreeParams {
        max_depth: est.get_usize("max_depth"),
        min_samples_leaf: est.get_usize("min_samples_leaf"),
        max_features: Some((d as f64).sqrt().ceil() as usize),
    };
    let bootstrap = est.get("bootstrap") == 1.0;
    par::map_indexed(est.get_usize("n_trees"), |t| {
        let mut rng = crate::dataset::seeded_rng(est.seed ^ t as u64);
        let samples: Vec<usize> = if bootstrap {
            use rand::Rng;
            (0..n).map(|_| rng.random_range(0..n)).collect()
        } else {
            (0..n).collect()
        };
        tree::fit_classification_tree(x, y, samples, &params, &mut rng)
    })
}

/// Logistic-loss boosting with one Newton step per leaf.
fn fit_boosting(x: &Matrix, y: &[u8], est: &EstimatorSpec) -> Result<(f64, Vec<Tree>)> {
    let n = x.nrows();
    let pos = y.iter().filter(|&&v| v == 1).count() as f64 / n as f64;
    let init = (pos / (1.0 - pos)).ln();
    let lr = est.get("learning_rate");
    let params = tree::TreeParams {
        max_depth: est.get_usize("max_depth"),
        min_samples_leaf: 1,
        max_features: None,
    };
    let mut raw = vec![init; n];
    let mut trees = Vec::new();
    for _ in 0..est.get_usize("n_rounds") {
        let prob: Vec<f64> = raw.iter().map(|&f| sigmoid(f)).collect();
        let grad: Vec<f64> = prob.iter().zip(y).map(|(p, &t)| f64::from(t) - p).collect();
        let hess: Vec<f64> = prob.iter().map(|p| p * (1.0 - p)).collect();
        let mut tree = tree::fit_regression_tree(x, &grad, &hess, (0..n).collect(), &params);
        tree.scale_leaves(lr);
        for (i, f) in raw.iter_mut().enumerate() {
            *f += tree.predict(x.row(i));
        }
        if raw.iter().any(|f| !f.is_finite()) {
            return Err(PipelineError::NonFiniteLoss(
                EstimatorKind::GradientBoosting,
            ));
        }
        trees.push(tree);
    }
    Ok((init, trees))
}

impl FittedPipeline {
    pub fn kind(&self) -> EstimatorKind {
        self.spec.estimator.kind
    }

    pub fn threshold(&self) -> f64 {
        self.kind().threshold()
    }

    fn check_columns(&self, ncols: usize) -> Result<()> {
        if ncols != self.n_features {
            return Err(PipelineError::DimensionMismatch {
                expected: self.n_features,
                got: ncols,
            });
        }
        Ok(())
    }

    /// Applies the fitted transformers in place. Errors if a NaN survives.
    pub fn transform_row(&self, row: &mut [f64]) -> Result<()> {
        self.check_columns(row.len())?;
        for t in &self.transformers {
            t.apply_row(row);
        }
        if row.iter().any(|v| v.is_nan()) {
            return Err(PipelineError::NaNWithoutImputer);
        }
        Ok(())
    }

    pub fn transform(&self, rows: &Matrix) -> Result<Matrix> {
        self.check_columns(rows.ncols())?;
        let mut out = rows.clone();
        for i in 0..out.nrows() {
            self.transform_row(out.row_mut(i))?;
        }
        Ok(out)
    }

    /// Estimator score of an already transformed row.
    pub fn score_transformed(&self, row: &[f64]) -> f64 {
        match &self.model {
            FittedModel::Linear { weights, bias } => {
                let margin = linear::dot(weights, row) + bias;
                match self.kind() {
                    EstimatorKind::LinearSvm => margin,
                    _ => sigmoid(margin),
                }
            }
            FittedModel::Forest { trees } => {
                trees.iter().map(|t| t.predict(row)).sum::<f64>() / trees.len() as f64
            }
            FittedModel::Boosted { init, trees } => {
                sigmoid(init + trees.iter().map(|t| t.predict(row)).sum::<f64>())
            }
        }
    }

    pub fn score_row(&self, row: &[f64]) -> Result<f64> {
        let mut buf = row.to_vec();
        self.transform_row(&mut buf)?;
        Ok(self.score_transformed(&buf))
    }

    /// P(y = 1) for probabilistic kinds; the raw margin for `linear_svm`.
    pub fn predict_scores(&self, rows: &Matrix) -> Result<Vec<f64>> {
        self.check_columns(rows.ncols())?;
        rows.rows().map(|r| self.score_row(r)).collect()
    }

    /// Label 1 iff the score reaches the kind's threshold (ties go to 1).
    pub fn predict_labels(&self, rows: &Matrix) -> Result<Vec<u8>> {
        let t = self.threshold();
        Ok(self
            .predict_scores(rows)?
            .into_iter()
            .map(|s| u8::from(s >= t))
            .collect())
    }
}
