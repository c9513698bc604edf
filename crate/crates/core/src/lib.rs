//! Core library for tracked, explainable binary-classification experiments.
//!
//! The crate is organised around the stages of an experiment:
//!
//! * [`dataset`] loads, hashes, snapshots and splits tabular data.
//! * [`pipeline`] fits preprocessing + estimator chains and serializes them.
//! * [`search`] scores candidates with stratified cross-validation.
//! * [`tracking`] persists every run to a plain-file experiment store.
//! * [`explain`] computes Shapley attributions (exact or kernel).
//! * [`report`] aggregates attributions and renders self-contained charts.
//!
//! With the default `parallel` feature the inner loops (candidate × fold
//! evaluation, forest members, per-row attribution) run on rayon. Results are
//! identical for any worker count and with the feature disabled.

pub mod dataset;
pub mod explain;
pub mod par;
pub mod pipeline;
pub mod report;
pub mod search;
pub mod tracking;

pub use dataset::{Dataset, FoldAssignment, Matrix};
pub use explain::{Background, ShapExplanation};
pub use pipeline::{EstimatorKind, FittedPipeline, PipelineSpec, TransformerKind};
pub use report::FeatureImportanceSummary;
pub use search::{Metric, SearchResult};
pub use tracking::RunRecord;

/// Renders a float in its shortest round-trip decimal form.
///
/// This is the single formatting rule for every hashed or persisted value,
/// so parsing the output with `str::parse::<f64>` yields the same bits.
pub fn fmt_f64(value: f64) -> String {
    if value.is_nan() {
        String::new()
    } else {
        format!("{value}")
    }
}

#[cfg(test)]
mod tests {
    use super::fmt_f64;

    #[test]
    fn shortest_form_round_trips() {
        for v in [
            0.1,
            -0.0,
            1.0,
            1e-300,
            123456789.125,
            f64::MIN_POSITIVE,
            2.0 / 3.0,
        ] {
            let s = fmt_f64(v);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), v.to_bits(), "{s}");
        }
        assert_eq!(fmt_f64(f64::NAN), "");
        assert_eq!(fmt_f64(1.0), "1");
    }
}
