//! Classification metrics, stratified cross-validation and grid / random
//! hyperparameter search with refit of the best candidate.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{stratified_kfold, Dataset, DatasetError, FoldAssignment, Matrix};
use crate::par;
use crate::pipeline::{fit_pipeline, FittedPipeline, PipelineError, PipelineSpec};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("roc_auc needs both classes in y_true")]
    OneClassAUC,
    #[error("length mismatch: {0} labels vs {1} predictions")]
    LengthMismatch(usize, usize),
    #[error("invalid metric input: {0}")]
    InvalidInput(String),
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
    #[error("parameter grid is empty")]
    EmptyGrid,
    #[error("search space produced no candidates")]
    EmptySpace,
    #[error("invalid search space: {0}")]
    InvalidSpace(String),
    #[error("candidate {candidate}: {source}")]
    Candidate {
        candidate: usize,
        #[source]
        source: PipelineError,
    },
    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: PipelineError,
    },
    #[error("candidate {candidate}, fold {fold}: {source}")]
    CandidateFold {
        candidate: usize,
        fold: usize,
        #[source]
        source: Box<SearchError>,
    },
    #[error("refit of best candidate: {0}")]
    Refit(#[source] PipelineError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

pub type Result<T, E = SearchError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    BalancedAccuracy,
    F1,
    RocAuc,
}

impl Metric {
    pub const ALL: [Metric; 4] = [
        Metric::Accuracy,
        Metric::BalancedAccuracy,
        Metric::F1,
        Metric::RocAuc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::BalancedAccuracy => "balanced_accuracy",
            Metric::F1 => "f1",
            Metric::RocAuc => "roc_auc",
        }
    }

    /// True when the metric consumes scores rather than hard labels.
    pub fn uses_scores(self) -> bool {
        self == Metric::RocAuc
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = SearchError;
    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| SearchError::UnknownMetric(s.to_string()))
    }
}

struct Confusion {
    tp: f64,
    tn: f64,
    fp: f64,
    fn_: f64,
}

fn confusion(y_true: &[u8], y_pred: &[f64]) -> Result<Confusion> {
    let mut c = Confusion {
        tp: 0.0,
        tn: 0.0,
        fp: 0.0,
        fn_: 0.0,
    };
    for (&t, &p) in y_true.iter().zip(y_pred) {
        let p = match p {
            1.0 => true,
            0.0 => false,
            v => {
                return Err(SearchError::InvalidInput(format!(
                    "label {v} is not 0 or 1"
                )))
            }
        };
        match (t == 1, p) {
            (true, true) => c.tp += 1.0,
            (false, false) => c.tn += 1.0,
            (false, true) => c.fp += 1.0,
            (true, false) => c.fn_ += 1.0,
        }
    }
    Ok(c)
}

/// Mann–Whitney AUC with midranks for tied scores.
fn roc_auc(y_true: &[u8], scores: &[f64]) -> Result<f64> {
    if scores.iter().any(|s| s.is_nan()) {
        return Err(SearchError::InvalidInput("NaN score".into()));
    }
    let n_pos = y_true.iter().filter(|&&y| y == 1).count();
    let n_neg = y_true.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(SearchError::OneClassAUC);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of positive ranks, doubled so midranks stay integral.
    let mut rank_sum_x2 = 0u64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share the midrank (i + j + 2) / 2
        let mid_x2 = (i + j + 2) as u64;
        let pos = order[i..=j].iter().filter(|&&k| y_true[k] == 1).count() as u64;
        rank_sum_x2 += pos * mid_x2;
        i = j + 1;
    }
    let n_pos = n_pos as u64;
    let u_x2 = rank_sum_x2 - n_pos * (n_pos + 1);
    Ok(u_x2 as f64 / (2 * n_pos * n_neg as u64) as f64)
}

/// Scores one metric. Label metrics expect `values` in {0, 1}; `roc_auc`
/// expects real-valued scores.
///
/// `balanced_accuracy` averages the recalls of the classes present in
/// `y_true`.
pub fn compute_metric(metric: Metric, y_true: &[u8], values: &[f64]) -> Result<f64> {
    if y_true.len() != values.len() {
        return Err(SearchError::LengthMismatch(y_true.len(), values.len()));
    }
    if y_true.is_empty() {
        return Err(SearchError::InvalidInput("no samples".into()));
    }
    if y_true.iter().any(|&y| y > 1) {
        return Err(SearchError::InvalidInput("y_true must be 0/1".into()));
    }
    if metric == Metric::RocAuc {
        return roc_auc(y_true, values);
    }
    let c = confusion(y_true, values)?;
    let n = y_true.len() as f64;
    Ok(match metric {
        Metric::Accuracy => (c.tp + c.tn) / n,
        Metric::BalancedAccuracy => {
            let recalls: Vec<f64> = [(c.tp, c.tp + c.fn_), (c.tn, c.tn + c.fp)]
                .into_iter()
                .filter(|(_, total)| *total > 0.0)
                .map(|(hit, total)| hit / total)
                .collect();
            recalls.iter().sum::<f64>() / recalls.len() as f64
        }
        Metric::F1 => {
            let denom = 2.0 * c.tp + c.fp + c.fn_;
            if denom == 0.0 {
                0.0
            } else {
                2.0 * c.tp / denom
            }
        }
        Metric::RocAuc => unreachable!(),
    })
}

/// Scores `model` on `(rows, labels)` for each metric, in order.
pub fn evaluate(
    model: &FittedPipeline,
    rows: &Matrix,
    labels: &[u8],
    metrics: &[Metric],
) -> Result<Vec<f64>> {
    let scores = model.predict_scores(rows)?;
    let t = model.threshold();
    let hard: Vec<f64> = scores
        .iter()
        .map(|&s| if s >= t { 1.0 } else { 0.0 })
        .collect();
    metrics
        .iter()
        .map(|&m| compute_metric(m, labels, if m.uses_scores() { &scores } else { &hard }))
        .collect()
}

/// Hyperparameter assignment, keyed and ordered by name.
pub type Candidate = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamGrid {
    pub entries: Vec<(String, Vec<f64>)>,
}

impl ParamGrid {
    pub fn new(entries: Vec<(String, Vec<f64>)>) -> Self {
        ParamGrid { entries }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Sampler {
    Choice { values: Vec<f64> },
    Uniform { lo: f64, hi: f64 },
    LogUniform { lo: f64, hi: f64 },
}

impl Sampler {
    fn validate(&self, name: &str) -> Result<()> {
        let bad = |m: &str| Err(SearchError::InvalidSpace(format!("`{name}`: {m}")));
        match *self {
            Sampler::Choice { ref values } if values.is_empty() => bad("empty choice"),
            Sampler::Uniform { lo, hi } | Sampler::LogUniform { lo, hi }
                if lo.partial_cmp(&hi) != Some(Ordering::Less) =>
            {
                bad("needs lo < hi")
            }
            Sampler::LogUniform { lo, .. } if lo <= 0.0 => bad("log_uniform needs lo > 0"),
            _ => Ok(()),
        }
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            Sampler::Choice { values } => values[rng.random_range(0..values.len())],
            Sampler::Uniform { lo, hi } => rng.random_range(*lo..*hi),
            Sampler::LogUniform { lo, hi } => rng.random_range(lo.ln()..hi.ln()).exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamDistribution {
    pub entries: Vec<(String, Sampler)>,
    pub n_samples: usize,
}

fn check_unique<'a>(names: impl Iterator<Item = &'a String>) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for n in names {
        if !seen.insert(n) {
            return Err(SearchError::InvalidSpace(format!("`{n}` declared twice")));
        }
    }
    Ok(())
}

/// Cartesian product in odometer order: the last-declared name varies
/// fastest.
pub fn expand_grid(grid: &ParamGrid) -> Result<Vec<Candidate>> {
    if grid.entries.is_empty() || grid.entries.iter().any(|(_, v)| v.is_empty()) {
        return Err(SearchError::EmptyGrid);
    }
    check_unique(grid.entries.iter().map(|(n, _)| n))?;
    let total: usize = grid.entries.iter().map(|(_, v)| v.len()).product();
    let mut out = Vec::with_capacity(total);
    let mut digits = vec![0usize; grid.entries.len()];
    for _ in 0..total {
        out.push(
            grid.entries
                .iter()
                .zip(&digits)
                .map(|((name, values), &d)| (name.clone(), values[d]))
                .collect(),
        );
        for pos in (0..digits.len()).rev() {
            digits[pos] += 1;
            if digits[pos] < grid.entries[pos].1.len() {
                break;
            }
            digits[pos] = 0;
        }
    }
    Ok(out)
}

/// `n_samples` independent draws from one seeded stream; within a draw the
/// names are consumed in declared order.
pub fn sample_params(dist: &ParamDistribution, seed: u64) -> Result<Vec<Candidate>> {
    if dist.n_samples == 0 {
        return Err(SearchError::InvalidSpace("n_samples must be >= 1".into()));
    }
    check_unique(dist.entries.iter().map(|(n, _)| n))?;
    for (name, s) in &dist.entries {
        s.validate(name)?;
    }
    let mut rng = crate::dataset::seeded_rng(seed);
    Ok((0..dist.n_samples)
        .map(|_| {
            dist.entries
                .iter()
                .map(|(name, s)| (name.clone(), s.draw(&mut rng)))
                .collect()
        })
        .collect())
}

/// Scores of one candidate: `scores[m][f]` is metric `metrics[m]` on fold `f`.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldScores {
    pub metrics: Vec<Metric>,
    pub scores: Vec<Vec<f64>>,
}

fn fit_and_score_fold(
    spec: &PipelineSpec,
    train: &Dataset,
    folds: &FoldAssignment,
    fold: usize,
    metrics: &[Metric],
) -> Result<Vec<f64>> {
    let (fit_idx, held_idx) = folds.split(fold);
    let fit_part = train.subset(&fit_idx)?;
    let est = spec.estimator();
    let fold_spec =
        spec.with_estimator(est.with_params(&Candidate::new(), est.seed() ^ fold as u64)?);
    let model =
        fit_pipeline(&fold_spec, &fit_part).map_err(|source| SearchError::Fold { fold, source })?;
    let held_rows = train.rows().select_rows(&held_idx);
    let held_labels: Vec<u8> = held_idx.iter().map(|&i| train.labels()[i]).collect();
    evaluate(&model, &held_rows, &held_labels, metrics)
}

fn candidate_spec(
    template: &PipelineSpec,
    candidate: &Candidate,
) -> Result<PipelineSpec, PipelineError> {
    let est = template.estimator();
    Ok(template.with_estimator(est.with_params(candidate, est.seed())?))
}

/// Fits a fresh pipeline (transformers included) on every fold's training
/// portion and scores the held-out fold. Fold `f` fits with seed
/// `base_seed ^ f`.
pub fn cross_validate(
    template: &PipelineSpec,
    candidate: &Candidate,
    train: &Dataset,
    folds: &FoldAssignment,
    metrics: &[Metric],
) -> Result<FoldScores> {
    if folds.fold_of.len() != train.n() {
        return Err(SearchError::InvalidInput(
            "fold assignment does not match data".into(),
        ));
    }
    let spec = candidate_spec(template, candidate)?;
    let per_fold = par::try_map_indexed(folds.k, |f| {
        fit_and_score_fold(&spec, train, folds, f, metrics)
    })?;
    Ok(FoldScores {
        metrics: metrics.to_vec(),
        scores: (0..metrics.len())
            .map(|m| per_fold.iter().map(|row| row[m]).collect())
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum SearchSpace {
    Grid(ParamGrid),
    Random(ParamDistribution),
}

impl SearchSpace {
    pub fn strategy(&self) -> &'static str {
        match self {
            SearchSpace::Grid(_) => "grid",
            SearchSpace::Random(_) => "random",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    pub k: usize,
    pub selection_metric: Metric,
    /// Metrics recorded per fold; the selection metric is added if missing.
    pub metrics: Vec<Metric>,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            k: 5,
            selection_metric: Metric::RocAuc,
            metrics: Metric::ALL.to_vec(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub strategy: &'static str,
    pub k: usize,
    pub candidates: Vec<Candidate>,
    pub metrics: Vec<Metric>,
    /// `fold_scores[m][c][f]`: metric `metrics[m]`, candidate `c`, fold `f`.
    pub fold_scores: Vec<Vec<Vec<f64>>>,
    pub selection_metric: Metric,
    pub mean_score: Vec<f64>,
    pub std_score: Vec<f64>,
    pub best_index: usize,
    pub best_model: FittedPipeline,
}

impl SearchResult {
    pub fn scores_for(&self, metric: Metric) -> Option<&Vec<Vec<f64>>> {
        self.metrics
            .iter()
            .position(|&m| m == metric)
            .map(|i| &self.fold_scores[i])
    }

    pub fn best_candidate(&self) -> &Candidate {
        &self.candidates[self.best_index]
    }
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population standard deviation.
pub fn std_dev(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Index of the largest value; ties go to the smallest index.
pub fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Rounds integer-typed hyperparameters (random draws are real-valued) and
/// rejects names the estimator does not know.
fn normalize(template: &PipelineSpec, candidate: &Candidate) -> Result<Candidate, PipelineError> {
    let kind = template.estimator().kind();
    candidate
        .iter()
        .map(|(name, &v)| {
            let spec = kind
                .param(name)
                .ok_or_else(|| PipelineError::UnknownParam {
                    kind,
                    name: name.clone(),
                })?;
            Ok((
                name.clone(),
                if spec.rule.is_integral() {
                    v.round()
                } else {
                    v
                },
            ))
        })
        .collect()
}

/// Cross-validates every candidate on one shared stratified fold assignment,
/// picks the best mean selection-metric score (ties to the lowest index) and
/// refits it on all of `train`.
///
/// All candidate × fold fits are independent and may run in parallel; the
/// result does not depend on the worker count.
pub fn run_search(
    space: &SearchSpace,
    template: &PipelineSpec,
    train: &Dataset,
    config: &SearchConfig,
) -> Result<SearchResult> {
    let raw = match space {
        SearchSpace::Grid(g) => expand_grid(g)?,
        SearchSpace::Random(d) => sample_params(d, config.seed)?,
    };
    if raw.is_empty() {
        return Err(SearchError::EmptySpace);
    }
    let candidates = raw
        .iter()
        .enumerate()
        .map(|(c, cand)| {
            let cand = normalize(template, cand).map_err(|source| SearchError::Candidate {
                candidate: c,
                source,
            })?;
            candidate_spec(template, &cand).map_err(|source| SearchError::Candidate {
                candidate: c,
                source,
            })?;
            Ok(cand)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut metrics = config.metrics.clone();
    if !metrics.contains(&config.selection_metric) {
        metrics.push(config.selection_metric);
    }
    let folds = stratified_kfold(train.labels(), config.k, config.seed)?;
    let k = folds.k;
    let specs: Vec<PipelineSpec> = candidates
        .iter()
        .map(|c| candidate_spec(template, c).expect("validated above"))
        .collect();

    let jobs = par::try_map_indexed(candidates.len() * k, |job| {
        let (c, f) = (job / k, job % k);
        fit_and_score_fold(&specs[c], train, &folds, f, &metrics).map_err(|e| {
            SearchError::CandidateFold {
                candidate: c,
                fold: f,
                source: Box::new(e),
            }
        })
    })?;

    let fold_scores: Vec<Vec<Vec<f64>>> = (0..metrics.len())
        .map(|m| {
            (0..candidates.len())
                .map(|c| (0..k).map(|f| jobs[c * k + f][m]).collect())
                .collect()
        })
        .collect();
    let sel = metrics
        .iter()
        .position(|&m| m == config.selection_metric)
        .expect("selection metric present");
    let mean_score: Vec<f64> = fold_scores[sel].iter().map(|row| mean(row)).collect();
    let std_score: Vec<f64> = fold_scores[sel].iter().map(|row| std_dev(row)).collect();
    let best_index = argmax_first(&mean_score);
    let best_model = fit_pipeline(&specs[best_index], train).map_err(SearchError::Refit)?;

    Ok(SearchResult {
        strategy: space.strategy(),
        k,
        candidates,
        metrics,
        fold_scores,
        selection_metric: config.selection_metric,
        mean_score,
        std_score,
        best_index,
        best_model,
    })
}
