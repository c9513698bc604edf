//! Shapley-value attribution of a model score to its input features.
//!
//! Both estimators use the interventional value function
//!
//! ```text
//! v(S) = 1/m · Σ_b f(x_S, b_rest)
//! ```
//!
//! over a background sample `b`. [`shapley_exact`] enumerates all `2^d`
//! coalitions; [`kernel_shap`] fits the Shapley-kernel weighted regression on
//! a coalition budget with efficiency imposed exactly.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{seeded_rng, Dataset, Matrix};
use crate::par;
use crate::pipeline::{FittedPipeline, PipelineError};

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("exact enumeration supports at most {limit} features, got {d}")]
    TooManyFeatures { d: usize, limit: usize },
    #[error("kernel regression is singular; raise the coalition budget")]
    SingularSystem,
    #[error("kernel estimation needs at least {min} coalitions for {d} features, got {got}")]
    BudgetTooSmall { d: usize, min: usize, got: usize },
    #[error("kernel estimation needs at least 2 features")]
    TooFewFeatures,
    #[error("background is empty")]
    EmptyBackground,
    #[error("expected {expected} columns, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

pub type Result<T, E = ExplainError> = std::result::Result<T, E>;

pub const DEFAULT_EXACT_LIMIT: usize = 12;
pub const DEFAULT_MAX_COALITIONS: usize = 2048;
pub const DEFAULT_BACKGROUND: usize = 100;

/// A real-valued model output. Implementations must be callable from many
/// threads at once.
pub trait ScoreFn: Sync {
    fn score(&self, row: &[f64]) -> f64;
}

impl<F: Fn(&[f64]) -> f64 + Sync> ScoreFn for F {
    fn score(&self, row: &[f64]) -> f64 {
        self(row)
    }
}

/// Reference rows that stand in for absent features.
#[derive(Debug, Clone, PartialEq)]
pub struct Background {
    pub rows: Matrix,
    pub source_hash: String,
    pub seed: u64,
}

impl Background {
    pub fn m(&self) -> usize {
        self.rows.nrows()
    }
}

/// Samples `min(m, n)` training rows uniformly without replacement. Missing
/// cells are filled by the model's fitted imputer when it has one.
pub fn sample_background(
    train: &Dataset,
    m: usize,
    seed: u64,
    imputer: Option<&FittedPipeline>,
) -> Background {
    let mut rng = seeded_rng(seed);
    let take = m.min(train.n());
    let idx = rand::seq::index::sample(&mut rng, train.n(), take).into_vec();
    let mut rows = train.rows().select_rows(&idx);
    if let Some(model) = imputer {
        for t in model
            .transformers
            .iter()
            .filter(|t| matches!(t, crate::pipeline::FittedTransformer::MeanImpute { .. }))
        {
            t.apply_matrix(&mut rows);
        }
    }
    Background {
        rows,
        source_hash: train.content_hash().to_string(),
        seed,
    }
}

/// Attribution of one row: `phi[j]` per feature plus the base value `v(∅)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Attribution {
    pub phi: Vec<f64>,
    pub base: f64,
}

/// Evaluates `v(z)` for coalition membership `z` (true = feature from `x`).
struct ValueFn<'a, F: ScoreFn + ?Sized> {
    f: &'a F,
    x: &'a [f64],
    bg: &'a Matrix,
}

impl<F: ScoreFn + ?Sized> ValueFn<'_, F> {
    fn value(&self, member: impl Fn(usize) -> bool, buf: &mut [f64]) -> f64 {
        let mut total = 0.0;
        for b in self.bg.rows() {
            for (j, slot) in buf.iter_mut().enumerate() {
                *slot = if member(j) { self.x[j] } else { b[j] };
            }
            total += self.f.score(buf);
        }
        total / self.bg.nrows() as f64
    }
}

fn check_inputs(x: &[f64], bg: &Background) -> Result<()> {
    if bg.m() == 0 {
        return Err(ExplainError::EmptyBackground);
    }
    if bg.rows.ncols() != x.len() {
        return Err(ExplainError::DimensionMismatch {
            expected: x.len(),
            got: bg.rows.ncols(),
        });
    }
    Ok(())
}

fn factorials(d: usize) -> Vec<f64> {
    let mut f = vec![1.0; d + 1];
    for i in 1..=d {
        f[i] = f[i - 1] * i as f64;
    }
    f
}

/// Exact Shapley values by full subset enumeration. Each `v(S)` is computed
/// once and memoized by bitmask.
pub fn shapley_exact_with_limit<F: ScoreFn + ?Sized>(
    f: &F,
    x: &[f64],
    bg: &Background,
    limit: usize,
) -> Result<Attribution> {
    check_inputs(x, bg)?;
    let d = x.len();
    if d > limit || d >= usize::BITS as usize {
        return Err(ExplainError::TooManyFeatures { d, limit });
    }
    let vf = ValueFn { f, x, bg: &bg.rows };
    let mut buf = vec![0.0; d];
    let values: Vec<f64> = (0..1usize << d)
        .map(|mask| vf.value(|j| mask >> j & 1 == 1, &mut buf))
        .collect();
    let fact = factorials(d);
    // weight(s) = s! (d - s - 1)! / d!
    let weight: Vec<f64> = (0..d)
        .map(|s| fact[s] * fact[d - s - 1] / fact[d])
        .collect();
    let mut phi = vec![0.0; d];
    for (mask, &v_s) in values.iter().enumerate() {
        let size = mask.count_ones() as usize;
        for (j, p) in phi.iter_mut().enumerate() {
            if mask >> j & 1 == 0 {
                *p += weight[size] * (values[mask | 1 << j] - v_s);
            }
        }
    }
    Ok(Attribution {
        phi,
        base: values[0],
    })
}

pub fn shapley_exact<F: ScoreFn + ?Sized>(
    f: &F,
    x: &[f64],
    bg: &Background,
) -> Result<Attribution> {
    shapley_exact_with_limit(f, x, bg, DEFAULT_EXACT_LIMIT)
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Weighted coalition design: `(membership, weight)` pairs.
pub(crate) fn kernel_coalitions<R: Rng>(
    d: usize,
    budget: usize,
    rng: &mut R,
) -> Vec<(Vec<bool>, f64)> {
    // sizes 1..=d/2; each s below d/2 is paired with d - s
    let n_sizes = d / 2;
    let n_paired = (d - 1) / 2;
    let mut size_weight: Vec<f64> = (1..=n_sizes)
        .map(|s| (d - 1) as f64 / (s * (d - s)) as f64)
        .collect();
    for w in size_weight.iter_mut().take(n_paired) {
        *w *= 2.0;
    }
    let total: f64 = size_weight.iter().sum();
    size_weight.iter_mut().for_each(|w| *w /= total);

    let mut out: Vec<(Vec<bool>, f64)> = Vec::new();
    let mut remaining = budget;
    let mut left_weight = size_weight.clone();
    let mut full_sizes = 0;
    for s in 1..=n_sizes {
        let paired = s <= n_paired;
        let count = binomial(d, s) * if paired { 2.0 } else { 1.0 };
        let share = left_weight[s - 1] / left_weight[s - 1..].iter().sum::<f64>();
        if (remaining as f64) * share / count < 1.0 - 1e-8 {
            break;
        }
        full_sizes += 1;
        let w = size_weight[s - 1] / count;
        for_each_subset(d, s, |mask| {
            out.push((mask.to_vec(), w));
            if paired {
                out.push((mask.iter().map(|b| !b).collect(), w));
            }
        });
        remaining -= count as usize;
        left_weight[s - 1] = 0.0;
    }

    if full_sizes < n_sizes && remaining > 0 {
        let rest: Vec<f64> = size_weight[full_sizes..].to_vec();
        let rest_total: f64 = rest.iter().sum();
        let mut index: HashMap<Vec<bool>, usize> = HashMap::new();
        let mut counts: Vec<(Vec<bool>, f64)> = Vec::new();
        let mut attempts = 0;
        let max_attempts = remaining.saturating_mul(100);
        while remaining > 0 && attempts < max_attempts {
            attempts += 1;
            let mut u = rng.random::<f64>() * rest_total;
            let mut pick = rest.len() - 1;
            for (i, w) in rest.iter().enumerate() {
                if u < *w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            let s = full_sizes + pick + 1;
            let chosen = rand::seq::index::sample(rng, d, s);
            let mut mask = vec![false; d];
            chosen.iter().for_each(|j| mask[j] = true);
            let mut add = |m: Vec<bool>| match index.get(&m) {
                Some(&at) => {
                    counts[at].1 += 1.0;
                    false
                }
                None => {
                    index.insert(m.clone(), counts.len());
                    counts.push((m, 1.0));
                    true
                }
            };
            let complement: Vec<bool> = mask.iter().map(|b| !b).collect();
            if add(mask) {
                remaining -= 1;
            }
            if s <= n_paired && remaining > 0 && add(complement) {
                remaining -= 1;
            }
        }
        let drawn: f64 = counts.iter().map(|c| c.1).sum();
        for (m, c) in counts {
            out.push((m, rest_total * c / drawn));
        }
    }
    out
}

fn for_each_subset(d: usize, s: usize, mut visit: impl FnMut(&[bool])) {
    let mut idx: Vec<usize> = (0..s).collect();
    let mut mask = vec![false; d];
    loop {
        mask.iter_mut().for_each(|b| *b = false);
        idx.iter().for_each(|&j| mask[j] = true);
        visit(&mask);
        let Some(i) = (0..s).rev().find(|&i| idx[i] < i + d - s) else {
            return;
        };
        idx[i] += 1;
        for k in i + 1..s {
            idx[k] = idx[k - 1] + 1;
        }
    }
}

/// Solves the symmetric system `a · x = b` by Gaussian elimination with
/// partial pivoting. `None` when a pivot vanishes relative to the matrix
/// scale.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = a
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return if n == 0 { Some(vec![]) } else { None };
    }
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() <= scale * 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        let (upper, lower) = a.split_at_mut(col + 1);
        let pivot_row = &upper[col];
        for (offset, r) in lower.iter_mut().enumerate() {
            let factor = r[col] / pivot_row[col];
            if factor != 0.0 {
                for (v, p) in r[col..].iter_mut().zip(&pivot_row[col..]) {
                    *v -= factor * p;
                }
                b[col + 1 + offset] -= factor * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Smallest usable budget for `d` features.
pub fn min_kernel_budget(d: usize) -> usize {
    let all = if d >= 63 {
        usize::MAX
    } else {
        (1usize << d) - 2
    };
    (d + 2).min(all)
}

/// Kernel SHAP estimate.
///
/// Coalition sizes are enumerated outward from the extremes (1 and d-1
/// first, then 2 and d-2, ...) while the budget covers a whole size pair;
/// the remaining budget is filled by sampling sizes proportional to their
/// leftover kernel mass, each draw paired with its complement. Enumerated
/// coalitions carry the Shapley kernel weight; sampled ones share the
/// leftover mass in proportion to how often they were drawn. The weighted
/// least-squares fit eliminates the last feature so `Σφ = f(x) - base`
/// holds exactly.
pub fn kernel_shap<F: ScoreFn + ?Sized>(
    f: &F,
    x: &[f64],
    bg: &Background,
    n_coalitions: usize,
    seed: u64,
) -> Result<Attribution> {
    check_inputs(x, bg)?;
    let d = x.len();
    if d < 2 {
        return Err(ExplainError::TooFewFeatures);
    }
    let min = min_kernel_budget(d);
    if n_coalitions < min {
        return Err(ExplainError::BudgetTooSmall {
            d,
            min,
            got: n_coalitions,
        });
    }
    let budget = if d < 63 {
        n_coalitions.min((1usize << d) - 2)
    } else {
        n_coalitions
    };
    let mut rng = seeded_rng(seed);
    let design = kernel_coalitions(d, budget, &mut rng);

    let vf = ValueFn { f, x, bg: &bg.rows };
    let mut buf = vec![0.0; d];
    let base = vf.value(|_| false, &mut buf);
    let fx = f.score(x);
    let total = fx - base;

    // y' = v(z) - base - z_last · total = Σ_{j<last} φ_j (z_j - z_last)
    let last = d - 1;
    let mut ata = vec![vec![0.0; last]; last];
    let mut atb = vec![0.0; last];
    let mut row = vec![0.0; last];
    for (z, w) in &design {
        let v = vf.value(|j| z[j], &mut buf);
        let zl = f64::from(u8::from(z[last]));
        let target = v - base - zl * total;
        for (j, r) in row.iter_mut().enumerate() {
            *r = f64::from(u8::from(z[j])) - zl;
        }
        for i in 0..last {
            if row[i] == 0.0 {
                continue;
            }
            atb[i] += w * row[i] * target;
            for k in 0..last {
                ata[i][k] += w * row[i] * row[k];
            }
        }
    }
    let head = solve(ata, atb).ok_or(ExplainError::SingularSystem)?;
    let mut phi = head;
    let rest: f64 = phi.iter().sum();
    phi.push(total - rest);
    if phi.iter().any(|p| !p.is_finite()) {
        return Err(ExplainError::SingularSystem);
    }
    Ok(Attribution { phi, base })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exact,
    Kernel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplainerChoice {
    pub method: Method,
    /// Coalitions evaluated (`2^d` for exact).
    pub n_coalitions: usize,
}

/// Exact enumeration up to `exact_limit` features (inclusive), else kernel
/// with `min(2^d - 2, max_coalitions)` coalitions.
pub fn select_explainer(d: usize, exact_limit: usize, max_coalitions: usize) -> ExplainerChoice {
    if d <= exact_limit || d < 2 {
        ExplainerChoice {
            method: Method::Exact,
            n_coalitions: 1usize.checked_shl(d as u32).unwrap_or(usize::MAX),
        }
    } else {
        let all = if d >= 63 {
            usize::MAX
        } else {
            (1usize << d) - 2
        };
        ExplainerChoice {
            method: Method::Kernel,
            n_coalitions: all.min(max_coalitions).max(min_kernel_budget(d)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExplainOptions {
    pub exact_limit: usize,
    pub max_coalitions: usize,
    pub seed: u64,
}

impl Default for ExplainOptions {
    fn default() -> Self {
        ExplainOptions {
            exact_limit: DEFAULT_EXACT_LIMIT,
            max_coalitions: DEFAULT_MAX_COALITIONS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapExplanation {
    pub feature_names: Vec<String>,
    /// `n × d` attributions in units of the model score.
    pub values: Matrix,
    pub base_value: f64,
    pub method: Method,
    pub n_coalitions: usize,
    pub model_score: Vec<f64>,
    pub explained_split: Split,
}

impl ShapExplanation {
    pub fn local_accuracy_tolerance(&self) -> f64 {
        match self.method {
            Method::Exact => 1e-9,
            Method::Kernel => 5e-3,
        }
    }

    /// `max_i |Σ_j φ_ij + base - f(x_i)|`.
    pub fn max_efficiency_gap(&self) -> f64 {
        self.values
            .rows()
            .zip(&self.model_score)
            .map(|(phi, fx)| (phi.iter().sum::<f64>() + self.base_value - fx).abs())
            .fold(0.0, f64::max)
    }
}

/// The full pipeline's score as a function of a raw-feature row.
///
/// All transformers act column-wise, so a composite of raw rows maps to the
/// same composite of transformed rows; the transform is applied once to the
/// explained row and the background and only the estimator runs per
/// coalition.
struct TransformedScore<'a>(&'a FittedPipeline);

impl ScoreFn for TransformedScore<'_> {
    fn score(&self, row: &[f64]) -> f64 {
        self.0.score_transformed(row)
    }
}

/// Explains every row of `rows` against `bg`. Rows are independent; row `i`
/// uses seed `options.seed ^ i`.
pub fn explain_rows(
    model: &FittedPipeline,
    feature_names: &[String],
    rows: &Matrix,
    bg: &Background,
    split: Split,
    options: &ExplainOptions,
) -> Result<ShapExplanation> {
    let d = model.n_features;
    if rows.ncols() != d {
        return Err(ExplainError::DimensionMismatch {
            expected: d,
            got: rows.ncols(),
        });
    }
    if bg.rows.ncols() != d {
        return Err(ExplainError::DimensionMismatch {
            expected: d,
            got: bg.rows.ncols(),
        });
    }
    if bg.m() == 0 {
        return Err(ExplainError::EmptyBackground);
    }
    let choice = select_explainer(d, options.exact_limit, options.max_coalitions);
    let bg_t = Background {
        rows: model.transform(&bg.rows)?,
        source_hash: bg.source_hash.clone(),
        seed: bg.seed,
    };
    let x_t = model.transform(rows)?;
    let f = TransformedScore(model);
    let base_value = {
        let total: f64 = bg_t.rows.rows().map(|r| f.score(r)).sum();
        total / bg_t.m() as f64
    };
    let limit = options.exact_limit.max(1);
    let per_row = par::try_map_indexed(rows.nrows(), |i| {
        let x = x_t.row(i);
        let a = match choice.method {
            Method::Exact => shapley_exact_with_limit(&f, x, &bg_t, limit.max(d))?,
            Method::Kernel => {
                kernel_shap(&f, x, &bg_t, choice.n_coalitions, options.seed ^ i as u64)?
            }
        };
        Ok::<_, ExplainError>((a.phi, f.score(x)))
    })?;
    let mut values = Vec::with_capacity(rows.nrows() * d);
    let mut model_score = Vec::with_capacity(rows.nrows());
    for (phi, fx) in per_row {
        values.extend(phi);
        model_score.push(fx);
    }
    Ok(ShapExplanation {
        feature_names: feature_names.to_vec(),
        values: Matrix::new(rows.nrows(), d, values).expect("d columns per row"),
        base_value,
        method: choice.method,
        n_coalitions: choice.n_coalitions,
        model_score,
        explained_split: split,
    })
}

pub fn explain_split(
    model: &FittedPipeline,
    data: &Dataset,
    bg: &Background,
    split: Split,
    options: &ExplainOptions,
) -> Result<ShapExplanation> {
    explain_rows(model, data.feature_names(), data.rows(), bg, split, options)
}
