//! Attribution checked against an independent permutation-average
//! implementation and the Shapley axioms.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use xmlwf_core::dataset::synthetic;
use xmlwf_core::explain::{
    kernel_shap, min_kernel_budget, shapley_exact, Background, ExplainError, ScoreFn,
};
use xmlwf_core::pipeline::{fit_pipeline, EstimatorSpec, FittedModel};
use xmlwf_core::{EstimatorKind, FittedPipeline, Matrix, PipelineSpec, TransformerKind};

/// `v(S)`: mean score over background rows with the features in `coalition`
/// taken from `x`.
fn value(f: &dyn Fn(&[f64]) -> f64, x: &[f64], bg: &Matrix, coalition: &[bool]) -> f64 {
    let mut total = 0.0;
    for b in bg.rows() {
        let z: Vec<f64> = (0..x.len())
            .map(|j| if coalition[j] { x[j] } else { b[j] })
            .collect();
        total += f(&z);
    }
    total / bg.nrows() as f64
}

fn permutations(items: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
    if k == items.len() {
        out.push(items.clone());
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permutations(items, k + 1, out);
        items.swap(k, i);
    }
}

/// Average marginal contribution over all `d!` orderings.
fn permutation_shapley(f: &dyn Fn(&[f64]) -> f64, x: &[f64], bg: &Matrix) -> Vec<f64> {
    let d = x.len();
    let mut orders = Vec::new();
    permutations(&mut (0..d).collect(), 0, &mut orders);
    let mut phi = vec![0.0; d];
    for order in &orders {
        let mut coalition = vec![false; d];
        let mut prev = value(f, x, bg, &coalition);
        for &j in order {
            coalition[j] = true;
            let next = value(f, x, bg, &coalition);
            phi[j] += next - prev;
            prev = next;
        }
    }
    phi.iter().map(|p| p / orders.len() as f64).collect()
}

fn background(rows: Matrix) -> Background {
    Background {
        rows,
        source_hash: String::new(),
        seed: 0,
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Matrix {
    Matrix::new(
        n,
        d,
        (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect(),
    )
    .unwrap()
}

fn random_model(rng: &mut ChaCha8Rng, d: usize) -> FittedPipeline {
    let kinds = [
        EstimatorKind::LogisticRegression,
        EstimatorKind::LinearSvm,
        EstimatorKind::RandomForest,
        EstimatorKind::GradientBoosting,
    ];
    let kind = kinds[rng.random_range(0..kinds.len())];
    let mut overrides = std::collections::BTreeMap::new();
    match kind {
        EstimatorKind::RandomForest => {
            overrides.insert("n_trees".to_string(), 8.0);
        }
        EstimatorKind::GradientBoosting => {
            overrides.insert("n_rounds".to_string(), 10.0);
        }
        _ => {}
    }
    let seed = rng.random();
    let spec = PipelineSpec::new(
        vec![TransformerKind::Standardize],
        EstimatorSpec::new(kind, &overrides, seed).unwrap(),
    )
    .unwrap();
    let data = synthetic(60, d, d.min(2), 0.5, seed).unwrap();
    fit_pipeline(&spec, &data).unwrap()
}

#[test]
fn exact_matches_permutation_average_on_fitted_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..40 {
        let d = 1 + case % 5;
        let model = random_model(&mut rng, d);
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let m = 1 + rng.random_range(0..6);
        let bg = random_matrix(&mut rng, m, d);
        let f = |row: &[f64]| model.score_row(row).unwrap();
        let oracle = permutation_shapley(&f, &x, &bg);
        let got = shapley_exact(&f, &x, &background(bg)).unwrap();
        for (a, b) in got.phi.iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-9, "case {case}: {a} vs {b}");
        }
    }
}

#[test]
fn full_kernel_budget_matches_exact_on_fitted_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for d in 2..=8 {
        let model = random_model(&mut rng, d);
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let bg = background(random_matrix(&mut rng, 5, d));
        let f = |row: &[f64]| model.score_row(row).unwrap();
        let exact = shapley_exact(&f, &x, &bg).unwrap();
        let kernel = kernel_shap(&f, &x, &bg, (1 << d) - 2, 3).unwrap();
        for (a, b) in kernel.phi.iter().zip(&exact.phi) {
            assert!((a - b).abs() <= 1e-6, "d={d}: {a} vs {b}");
        }
    }
}

#[test]
fn zero_weight_feature_gets_exactly_zero() {
    let spec = PipelineSpec::new(
        vec![],
        EstimatorSpec::with_defaults(EstimatorKind::LogisticRegression, 0),
    )
    .unwrap();
    let data = synthetic(40, 4, 2, 0.5, 3).unwrap();
    let mut model = fit_pipeline(&spec, &data).unwrap();
    if let FittedModel::Linear { weights, .. } = &mut model.model {
        weights[2] = 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let bg = background(random_matrix(&mut rng, 8, 4));
    let f = |row: &[f64]| model.score_row(row).unwrap();
    let phi = shapley_exact(&f, &[0.3, -1.0, 2.0, 0.7], &bg).unwrap().phi;
    assert_eq!(phi[2], 0.0);
}

#[test]
fn unused_tree_feature_gets_exactly_zero() {
    // A constant column is never split on.
    let data = synthetic(80, 3, 2, 0.3, 9).unwrap();
    let mut rows = data.rows().clone();
    for i in 0..rows.nrows() {
        rows.row_mut(i)[1] = 1.0;
    }
    let data = xmlwf_core::Dataset::new(
        data.feature_names().to_vec(),
        "y",
        rows,
        data.labels().to_vec(),
    )
    .unwrap();
    let spec = PipelineSpec::new(
        vec![],
        EstimatorSpec::with_defaults(EstimatorKind::GradientBoosting, 1),
    )
    .unwrap();
    let model = fit_pipeline(&spec, &data).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let bg = background(random_matrix(&mut rng, 10, 3));
    let f = |row: &[f64]| model.score_row(row).unwrap();
    let phi = shapley_exact(&f, &[0.5, -3.0, 1.5], &bg).unwrap().phi;
    assert_eq!(phi[1], 0.0);
}

#[test]
fn kernel_budget_floor_is_enforced() {
    let bg = background(Matrix::zeros(1, 4));
    let f = |row: &[f64]| row.iter().sum::<f64>();
    assert!(kernel_shap(&f, &[1.0; 4], &bg, min_kernel_budget(4) - 1, 0).is_err());
    assert!(kernel_shap(&f, &[1.0; 4], &bg, min_kernel_budget(4), 0).is_ok());
}

struct Poly {
    w: Vec<f64>,
    pair: (usize, usize, f64),
}

impl ScoreFn for Poly {
    fn score(&self, row: &[f64]) -> f64 {
        let lin: f64 = self.w.iter().zip(row).map(|(w, x)| w * x).sum();
        lin + self.pair.2 * row[self.pair.0] * row[self.pair.1] + (row[0] * 0.7).sin()
    }
}

/// Weights, x, a 4-row background (flattened) and an interaction term.
type PolyCase = (Vec<f64>, Vec<f64>, Vec<f64>, (usize, usize, f64));

fn poly_strategy() -> impl Strategy<Value = PolyCase> {
    (2usize..=6).prop_flat_map(|d| {
        (
            prop::collection::vec(-3.0..3.0f64, d),
            prop::collection::vec(-3.0..3.0f64, d),
            prop::collection::vec(-3.0..3.0f64, d * 4),
            (0..d, 0..d, -2.0..2.0f64),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn efficiency_holds_for_exact(
        (w, x, bg, pair) in poly_strategy()
    ) {
        let d = x.len();
        let f = Poly { w, pair };
        let bg = background(Matrix::new(4, d, bg).unwrap());
        let a = shapley_exact(&f, &x, &bg).unwrap();
        let gap = a.phi.iter().sum::<f64>() + a.base - f.score(&x);
        prop_assert!(gap.abs() <= 1e-9);
    }

    #[test]
    fn efficiency_holds_for_sampled_kernel(
        (w, x, bg, pair) in poly_strategy(), seed in any::<u64>()
    ) {
        // 4d covers sizes 1 and d-1 in full, so the system has full rank.
        let d = x.len();
        let f = Poly { w, pair };
        let bg = background(Matrix::new(4, d, bg).unwrap());
        let budget = (4 * d).min((1 << d) - 2);
        let a = kernel_shap(&f, &x, &bg, budget, seed).unwrap();
        let gap = a.phi.iter().sum::<f64>() + a.base - f.score(&x);
        prop_assert!(gap.abs() <= 1e-9);
    }

    #[test]
    fn floor_budget_is_efficient_or_reports_singular(
        (w, x, bg, pair) in poly_strategy(), seed in any::<u64>()
    ) {
        let d = x.len();
        let f = Poly { w, pair };
        let bg = background(Matrix::new(4, d, bg).unwrap());
        match kernel_shap(&f, &x, &bg, min_kernel_budget(d), seed) {
            Ok(a) => {
                let gap = a.phi.iter().sum::<f64>() + a.base - f.score(&x);
                prop_assert!(gap.abs() <= 1e-9);
            }
            Err(e) => prop_assert!(matches!(e, ExplainError::SingularSystem), "{e}"),
        }
    }

    #[test]
    fn linear_in_the_model(
        (w1, x, bg, p1) in poly_strategy(), shift in -3.0..3.0f64
    ) {
        let d = x.len();
        let w2: Vec<f64> = w1.iter().map(|v| v * 0.5 - shift).collect();
        let f1 = Poly { w: w1, pair: p1 };
        let f2 = Poly { w: w2, pair: (p1.1, p1.0, -p1.2 + shift) };
        let sum = |r: &[f64]| f1.score(r) + f2.score(r);
        let bg = background(Matrix::new(4, d, bg).unwrap());
        let a = shapley_exact(&f1, &x, &bg).unwrap().phi;
        let b = shapley_exact(&f2, &x, &bg).unwrap().phi;
        let s = shapley_exact(&sum, &x, &bg).unwrap().phi;
        for j in 0..d {
            prop_assert!((s[j] - a[j] - b[j]).abs() <= 1e-9);
        }
    }

    #[test]
    fn exchangeable_features_share_credit(
        d in 3usize..=6, w in -3.0..3.0f64, bg in prop::collection::vec(-3.0..3.0f64, 24)
    ) {
        // f is symmetric in features 0 and 1; x and the background agree on them.
        let f = |r: &[f64]| w * (r[0] + r[1]) + (r[0] * r[1]).tanh() + r[2..].iter().sum::<f64>();
        let mut x: Vec<f64> = (0..d).map(|j| j as f64 * 0.3 - 1.0).collect();
        x[1] = x[0];
        let mut rows = Matrix::new(4, d, bg[..4 * d].to_vec()).unwrap();
        for i in 0..4 {
            let r = rows.row_mut(i);
            r[1] = r[0];
        }
        let phi = shapley_exact(&f, &x, &background(rows)).unwrap().phi;
        prop_assert!((phi[0] - phi[1]).abs() <= 1e-12);
    }

    #[test]
    fn dummy_closure_feature_is_zero(
        (w, x, bg, _pair) in poly_strategy(), pick in any::<prop::sample::Index>()
    ) {
        let d = x.len();
        let dummy = pick.index(d);
        let f = |r: &[f64]| {
            r.iter().enumerate().filter(|&(j, _)| j != dummy).map(|(j, v)| w[j] * v * v.cos()).sum::<f64>()
        };
        let phi = shapley_exact(&f, &x, &background(Matrix::new(4, d, bg).unwrap())).unwrap().phi;
        prop_assert_eq!(phi[dummy], 0.0);
    }
}
