//! Library-level train → log → explain → report flow, plus worker-count
//! independence of the parallel stages.

use std::collections::BTreeMap;

use xmlwf_core::dataset::{split_holdout, synthetic};
use xmlwf_core::explain::{explain_split, sample_background, ExplainOptions, Method, Split};
use xmlwf_core::pipeline::{serialize_model, EstimatorSpec};
use xmlwf_core::report::{correctly_predicted_mask, emit_run_report, median_abs_importance};
use xmlwf_core::search::{run_search, Metric, ParamGrid, SearchConfig, SearchSpace};
use xmlwf_core::tracking::{
    audit_run, create_experiment, finalize_run, load_run, load_run_model, log_run_aspects,
    start_run, test_metrics, CvTable, Params, RunStatus,
};
use xmlwf_core::{Dataset, EstimatorKind, PipelineSpec, TransformerKind};

fn spec(kind: EstimatorKind) -> PipelineSpec {
    let overrides = match kind {
        EstimatorKind::RandomForest => BTreeMap::from([("n_trees".to_string(), 20.0)]),
        EstimatorKind::GradientBoosting => BTreeMap::from([("n_rounds".to_string(), 20.0)]),
        _ => BTreeMap::new(),
    };
    PipelineSpec::new(
        vec![TransformerKind::MeanImpute, TransformerKind::Standardize],
        EstimatorSpec::new(kind, &overrides, 5).unwrap(),
    )
    .unwrap()
}

fn grid() -> SearchSpace {
    SearchSpace::Grid(ParamGrid::new(vec![("l2".into(), vec![1e-4, 1e-2, 1.0])]))
}

fn demo() -> (Dataset, Dataset) {
    let data = synthetic(400, 10, 3, 0.25, 42).unwrap();
    split_holdout(&data, 0.25, 0).unwrap()
}

#[test]
fn tracked_run_round_trips_through_the_store() {
    let dir = tempfile::tempdir().unwrap();
    let exp = create_experiment(dir.path(), "flow", "library flow").unwrap();
    let (train, test) = demo();
    let search = run_search(
        &grid(),
        &spec(EstimatorKind::LogisticRegression),
        &train,
        &SearchConfig::default(),
    )
    .unwrap();
    let mut run = start_run(&exp, Params::new(), 0, Some(1)).unwrap();
    log_run_aspects(&mut run, &search.best_model, &search, &train, Some(&test)).unwrap();
    finalize_run(&mut run, RunStatus::Finished, None).unwrap();

    let reloaded = load_run(&exp, &run.run_id).unwrap();
    assert_eq!(reloaded.metrics, run.metrics);
    assert!(audit_run(&reloaded).passed());
    let model = load_run_model(dir.path(), "flow", &run.run_id).unwrap();
    assert_eq!(serialize_model(&model), serialize_model(&search.best_model));
    let accuracy = test_metrics(&model, &test, &[Metric::Accuracy]).unwrap()["test.accuracy"];
    assert_eq!(accuracy.to_bits(), run.metrics["test.accuracy"].to_bits());
    assert!(accuracy >= 0.9, "accuracy {accuracy}");

    let bg = sample_background(&train, 100, 0, Some(&model));
    let expl = explain_split(&model, &test, &bg, Split::Test, &ExplainOptions::default()).unwrap();
    assert_eq!(expl.method, Method::Exact);
    assert!(expl.max_efficiency_gap() <= 1e-9);
    let mask = correctly_predicted_mask(&model, &test, Split::Test).unwrap();
    let summary =
        median_abs_importance(&expl, &mask.mask, &run.run_id, test.content_hash()).unwrap();
    let mut top: Vec<&str> = summary.top_features(3);
    top.sort_unstable();
    assert_eq!(top, ["x1", "x2", "x3"]);

    let cv = CvTable::from_search(&search);
    let page =
        String::from_utf8(emit_run_report(&reloaded, Some(&cv), &[summary], 20).unwrap()).unwrap();
    assert!(page.contains(&run.run_id));
    assert!(page.contains(test.content_hash()));
}

#[cfg(feature = "parallel")]
mod worker_count {
    use super::*;
    use rayon::ThreadPoolBuilder;
    use xmlwf_core::pipeline::fit_pipeline;

    fn on_threads<T: Send>(n: usize, f: impl FnOnce() -> T + Send) -> T {
        ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .unwrap()
            .install(f)
    }

    #[test]
    fn search_is_identical_on_one_and_many_workers() {
        let (train, _) = demo();
        for kind in [
            EstimatorKind::LogisticRegression,
            EstimatorKind::RandomForest,
        ] {
            let space = match kind {
                EstimatorKind::RandomForest => {
                    SearchSpace::Grid(ParamGrid::new(vec![("max_depth".into(), vec![2.0, 4.0])]))
                }
                _ => grid(),
            };
            let template = spec(kind);
            let run = || run_search(&space, &template, &train, &SearchConfig::default()).unwrap();
            let one = on_threads(1, run);
            let many = on_threads(6, run);
            assert_eq!(
                serialize_model(&one.best_model),
                serialize_model(&many.best_model)
            );
            let bits = |r: &xmlwf_core::SearchResult| -> Vec<u64> {
                r.fold_scores
                    .iter()
                    .flatten()
                    .flatten()
                    .map(|v| v.to_bits())
                    .collect()
            };
            assert_eq!(bits(&one), bits(&many));
        }
    }

    #[test]
    fn forest_fit_is_identical_on_one_and_many_workers() {
        let (train, _) = demo();
        let spec = spec(EstimatorKind::RandomForest);
        let one = on_threads(1, || fit_pipeline(&spec, &train).unwrap());
        let many = on_threads(5, || fit_pipeline(&spec, &train).unwrap());
        assert_eq!(serialize_model(&one), serialize_model(&many));
    }

    #[test]
    fn kernel_attribution_is_identical_on_one_and_many_workers() {
        let data = synthetic(120, 14, 3, 0.25, 8).unwrap();
        let model = fit_pipeline(&spec(EstimatorKind::GradientBoosting), &data).unwrap();
        let bg = sample_background(&data, 30, 2, Some(&model));
        let options = ExplainOptions {
            exact_limit: 10,
            max_coalitions: 300,
            seed: 17,
        };
        let run = || explain_split(&model, &data, &bg, Split::Train, &options).unwrap();
        let one = on_threads(1, run);
        let many = on_threads(7, run);
        assert_eq!(one.method, Method::Kernel);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(one.values.as_slice()), bits(many.values.as_slice()));
    }
}
