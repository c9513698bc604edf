use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use xmlwf_core::dataset;
use xmlwf_core::explain::{self, ExplainOptions, Split};
use xmlwf_core::pipeline::{EstimatorKind, EstimatorSpec, PipelineSpec, TransformerKind};
use xmlwf_core::report::{self, FeatureImportanceSummary};
use xmlwf_core::search::{
    run_search, Metric, ParamDistribution, ParamGrid, SearchConfig, SearchResult, SearchSpace,
};
use xmlwf_core::tracking::{
    self, CvTable, ExperimentMeta, ParamValue, Params, RunRecord, RunStatus,
};

use crate::config::{
    self, Constants, ExplainStage, Layered, Strategy, TestStage, TrainStage, CONSTANTS_FILE,
};
use crate::{CliError, EXIT_IO, EXIT_NOT_EMPTY, EXIT_NOT_FOUND};

/// Flags shared by every command.
#[derive(Debug, Clone, Default)]
pub struct Globals {
    pub config_dir: PathBuf,
    pub seed: Option<u64>,
    pub json: bool,
    pub overrides: Vec<String>,
    pub run_id_seed: Option<u64>,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::new(EXIT_IO, format!("{}: {e}", path.display()))
}

fn print_json<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("output serializes");
    writeln!(out, "{text}").map_err(|e| CliError::new(EXIT_IO, e.to_string()))
}

fn say(out: &mut dyn Write, text: std::fmt::Arguments<'_>) -> Result<(), CliError> {
    out.write_fmt(text)
        .and_then(|_| out.write_all(b"\n"))
        .map_err(|e| CliError::new(EXIT_IO, e.to_string()))
}

/// Store-root-relative directory of a run.
fn run_rel(run: &RunRecord) -> String {
    format!("experiments/{}/runs/{}", run.experiment, run.run_id)
}

pub fn cmd_init(
    directory: &Path,
    name: &str,
    demo_features: usize,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    if !tracking::is_slug(name) {
        return Err(CliError::config(format!(
            "`{name}` is not a valid experiment name (use [a-z0-9-]+)"
        )));
    }
    if demo_features < 3 {
        return Err(CliError::config("demo data needs at least 3 features"));
    }
    if directory.exists() {
        let mut entries = fs::read_dir(directory).map_err(io(directory))?;
        if entries.next().is_some() {
            return Err(CliError::new(
                EXIT_NOT_EMPTY,
                format!("{} is not empty", directory.display()),
            ));
        }
    }
    let constants = Constants {
        store_root: ".".into(),
        experiment: name.into(),
        description: format!("{name} experiment"),
        data_path: "data/demo.csv".into(),
        target_name: "y".into(),
        seed: 42,
        test_fraction: 0.25,
    };
    let demo = dataset::synthetic(400, demo_features, 3, 0.25, 42)
        .map_err(|e| CliError::runtime(e.to_string()))?;
    let files: [(&str, String); 5] = [
        (CONSTANTS_FILE, config::constants_toml(&constants)),
        ("stages/train.toml", config::TRAIN_TOML.into()),
        ("stages/test.toml", config::TEST_TOML.into()),
        ("stages/explain.toml", config::EXPLAIN_TOML.into()),
        ("data/demo.csv", dataset::to_csv(&demo)),
    ];
    for (rel, text) in &files {
        let path = directory.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io(parent))?;
        }
        fs::write(&path, text).map_err(io(&path))?;
    }
    tracking::create_experiment(directory, name, &constants.description)?;
    let d = directory.display();
    say(out, format_args!("initialized `{name}` in {d}"))?;
    say(out, format_args!("next:"))?;
    say(out, format_args!("  xmlwf --config {d} train"))?;
    say(out, format_args!("  xmlwf --config {d} test <run_id>"))?;
    say(out, format_args!("  xmlwf --config {d} explain <run_id>"))?;
    say(out, format_args!("  xmlwf --config {d} runs"))?;
    Ok(())
}

fn open_store(c: &Layered<impl Serialize>) -> Result<ExperimentMeta, CliError> {
    tracking::open_experiment(&c.store_root(), &c.constants.experiment).map_err(|e| match e {
        tracking::TrackingError::NotFound(_) => CliError::new(
            EXIT_NOT_FOUND,
            format!(
                "no experiment `{}` under the store root",
                c.constants.experiment
            ),
        ),
        other => other.into(),
    })
}

fn parse_kind<T: std::str::FromStr>(text: &str, what: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    text.parse()
        .map_err(|e| CliError::config(format!("{what}: {e}")))
}

/// Everything a train run needs, validated before the run exists.
struct TrainPlan {
    template: PipelineSpec,
    space: SearchSpace,
    search: SearchConfig,
}

fn plan_from_config(stage: &TrainStage, seed: u64) -> Result<TrainPlan, CliError> {
    let transformers = stage
        .pipeline
        .transformers
        .iter()
        .map(|t| parse_kind::<TransformerKind>(t, "pipeline.transformers"))
        .collect::<Result<Vec<_>, _>>()?;
    let kind: EstimatorKind = parse_kind(&stage.pipeline.estimator, "pipeline.estimator")?;
    let est = EstimatorSpec::new(kind, &stage.pipeline.params, seed)
        .map_err(|e| CliError::config(format!("pipeline.params: {e}")))?;
    let template = PipelineSpec::new(transformers, est)
        .map_err(|e| CliError::config(format!("pipeline: {e}")))?;
    let space = match stage.search.strategy {
        Strategy::Grid => {
            if stage.search.grid.is_empty() {
                return Err(CliError::config("search.grid is empty"));
            }
            SearchSpace::Grid(ParamGrid::new(
                stage
                    .search
                    .grid
                    .iter()
                    .map(|(k, v)| (k.clone(), v.clone()))
                    .collect(),
            ))
        }
        Strategy::Random => {
            let r = stage.search.random.as_ref().ok_or_else(|| {
                CliError::config("search.strategy = random needs [search.random]")
            })?;
            SearchSpace::Random(ParamDistribution {
                entries: r
                    .params
                    .iter()
                    .map(|(k, v)| (k.clone(), v.clone()))
                    .collect(),
                n_samples: r.n_samples,
            })
        }
    };
    let plan = TrainPlan {
        template,
        space,
        search: SearchConfig {
            k: stage.k,
            selection_metric: stage.selection_metric,
            metrics: stage.metrics.clone(),
            seed,
        },
    };
    check_candidates(&plan)?;
    Ok(plan)
}

/// Surfaces bad grids and unknown hyperparameters as config errors.
fn check_candidates(plan: &TrainPlan) -> Result<(), CliError> {
    let candidates = match &plan.space {
        SearchSpace::Grid(g) => xmlwf_core::search::expand_grid(g),
        SearchSpace::Random(d) => xmlwf_core::search::sample_params(d, plan.search.seed),
    }
    .map_err(|e| CliError::config(format!("search: {e}")))?;
    let est = plan.template.estimator();
    for c in &candidates {
        let rounded = c
            .iter()
            .map(|(k, v)| {
                let integral = est.kind().param(k).is_some_and(|p| p.rule.is_integral());
                (k.clone(), if integral { v.round() } else { *v })
            })
            .collect();
        est.with_params(&rounded, est.seed())
            .map_err(|e| CliError::config(format!("search: {e}")))?;
    }
    if plan.search.k < 2 {
        return Err(CliError::config("k must be at least 2"));
    }
    Ok(())
}

/// Rebuilds the plan of a logged run: its resolved pipeline as a
/// one-candidate grid, its CV setup and its seed.
fn plan_from_run(run: &RunRecord) -> Result<TrainPlan, CliError> {
    let p = &run.params;
    let text = |key: &str| {
        p.get(key)
            .and_then(ParamValue::as_str)
            .ok_or_else(|| CliError::runtime(format!("run {} has no `{key}` param", run.run_id)))
    };
    let kind: EstimatorKind = parse_kind(text("estimator")?, "estimator")?;
    let transformers = text("transformers")?
        .split(',')
        .filter(|s| !s.is_empty())
        .map(|t| parse_kind::<TransformerKind>(t, "transformers"))
        .collect::<Result<Vec<_>, _>>()?;
    let mut grid = Vec::new();
    for spec in kind.schema() {
        let v = p
            .get(spec.name)
            .and_then(ParamValue::as_f64)
            .ok_or_else(|| {
                CliError::runtime(format!("run {} lacks param `{}`", run.run_id, spec.name))
            })?;
        grid.push((spec.name.to_string(), vec![v]));
    }
    let metrics = text("cv.metrics")?
        .split(',')
        .map(|m| parse_kind::<Metric>(m, "cv.metrics"))
        .collect::<Result<Vec<_>, _>>()?;
    let k = p
        .get("cv.k")
        .and_then(ParamValue::as_f64)
        .ok_or_else(|| CliError::runtime("run has no cv.k"))? as usize;
    let selection_metric = parse_kind(text("search.selection_metric")?, "selection metric")?;
    let template = PipelineSpec::new(transformers, EstimatorSpec::with_defaults(kind, run.seed))
        .map_err(|e| CliError::runtime(e.to_string()))?;
    Ok(TrainPlan {
        template,
        space: SearchSpace::Grid(ParamGrid::new(grid)),
        search: SearchConfig {
            k,
            selection_metric,
            metrics,
            seed: run.seed,
        },
    })
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    run_id: &'a str,
    path: String,
    best_candidate: &'a BTreeMap<String, f64>,
    cv: BTreeMap<String, [f64; 2]>,
    test: BTreeMap<String, f64>,
}

fn report_train(
    g: &Globals,
    run: &RunRecord,
    search: &SearchResult,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let cv: BTreeMap<String, [f64; 2]> = search
        .metrics
        .iter()
        .map(|m| {
            let key = |s: &str| run.metrics[&format!("cv.{m}.{s}")];
            (m.as_str().to_string(), [key("mean"), key("std")])
        })
        .collect();
    let test: BTreeMap<String, f64> = run
        .metrics
        .iter()
        .filter_map(|(k, v)| k.strip_prefix("test.").map(|m| (m.to_string(), *v)))
        .collect();
    if g.json {
        return print_json(
            out,
            &TrainSummary {
                run_id: &run.run_id,
                path: run_rel(run),
                best_candidate: search.best_candidate(),
                cv,
                test,
            },
        );
    }
    say(
        out,
        format_args!("run {} finished ({})", run.run_id, run_rel(run)),
    )?;
    let best: Vec<String> = search
        .best_candidate()
        .iter()
        .map(|(k, v)| format!("{k}={}", xmlwf_core::fmt_f64(*v)))
        .collect();
    say(
        out,
        format_args!(
            "best of {} candidates: {}",
            search.candidates.len(),
            best.join(" ")
        ),
    )?;
    for (m, [mean, std]) in &cv {
        say(out, format_args!("  cv {m:<18} {mean:.4} ± {std:.4}"))?;
    }
    for (m, v) in &test {
        say(out, format_args!("  test {m:<16} {v:.4}"))?;
    }
    Ok(())
}

/// Runs `body` against a started run and finalizes it either way.
fn guarded<T>(
    run: &mut RunRecord,
    body: impl FnOnce(&mut RunRecord) -> Result<T, CliError>,
) -> Result<T, CliError> {
    match body(run) {
        Ok(v) => {
            tracking::finalize_run(run, RunStatus::Finished, None)?;
            Ok(v)
        }
        Err(e) => {
            tracking::finalize_run(run, RunStatus::Failed, Some(e.message.clone()))?;
            Err(CliError::runtime(format!(
                "run {} failed: {}",
                run.run_id, e.message
            )))
        }
    }
}

pub fn cmd_train(
    g: &Globals,
    replay: Option<&str>,
    out: &mut dyn Write,
    _err: &mut dyn Write,
) -> Result<(), CliError> {
    let cfg: Layered<TrainStage> =
        config::load_stage(&g.config_dir, "train", g.seed, &g.overrides)?;
    let root = cfg.store_root();
    let exp =
        tracking::create_experiment(&root, &cfg.constants.experiment, &cfg.constants.description)?;

    let mut params = Params::new();
    let (plan, source) = match replay {
        None => {
            let plan = plan_from_config(&cfg.stage, cfg.constants.seed)?;
            params.insert("seed".into(), ParamValue::Int(cfg.constants.seed as i64));
            params.insert("data_path".into(), cfg.constants.data_path.clone().into());
            params.insert("test_fraction".into(), cfg.constants.test_fraction.into());
            (plan, None)
        }
        Some(id) => {
            let original = tracking::load_run(&exp, id)?;
            if original.status != RunStatus::Finished {
                return Err(CliError::runtime(format!("run {id} is not finished")));
            }
            let plan = plan_from_run(&original)?;
            params.insert("seed".into(), ParamValue::Int(original.seed as i64));
            params.insert("replay_of".into(), id.into());
            (plan, Some(original))
        }
    };
    for o in &cfg.overrides {
        params.insert(format!("override.{}", o.key), o.raw.clone().into());
    }
    let seed = plan.search.seed;

    let mut run = tracking::start_run(&exp, params, seed, g.run_id_seed)?;
    let search = guarded(&mut run, |run| {
        let (train, test) = match &source {
            None => {
                let data = dataset::load_csv(cfg.data_path(), &cfg.constants.target_name)
                    .map_err(|e| CliError::runtime(format!("{}: {e}", cfg.constants.data_path)))?;
                if cfg.constants.test_fraction > 0.0 {
                    let (tr, te) = dataset::split_holdout(&data, cfg.constants.test_fraction, seed)
                        .map_err(|e| CliError::runtime(e.to_string()))?;
                    (tr, Some(te))
                } else {
                    (data, None)
                }
            }
            Some(original) => {
                let train = tracking::load_snapshot(original, "train")?;
                let test = if original.data_hashes.contains_key("test") {
                    Some(tracking::load_snapshot(original, "test")?)
                } else {
                    None
                };
                (train, test)
            }
        };
        let search = run_search(&plan.space, &plan.template, &train, &plan.search)
            .map_err(|e| CliError::runtime(e.to_string()))?;
        tracking::log_run_aspects(run, &search.best_model, &search, &train, test.as_ref())?;
        tracking::write_artifact(
            run,
            "config.train",
            "config/train.json",
            &cfg.effective_json(),
        )?;
        Ok(search)
    })?;
    report_train(g, &run, &search, out)
}

fn finished_run(exp: &ExperimentMeta, run_id: &str) -> Result<RunRecord, CliError> {
    let run = tracking::load_run(exp, run_id)?;
    if run.status != RunStatus::Finished {
        return Err(CliError::runtime(format!(
            "run {run_id} is {}, expected finished",
            run.status.as_str()
        )));
    }
    Ok(run)
}

pub fn cmd_test(g: &Globals, run_id: &str, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg: Layered<TestStage> = config::load_stage(&g.config_dir, "test", g.seed, &g.overrides)?;
    let exp = open_store(&cfg)?;
    let mut run = finished_run(&exp, run_id)?;
    let model = tracking::load_model_of(&run)?;
    let test = tracking::load_snapshot(&run, "test")?;
    let metrics = tracking::test_metrics(&model, &test, &cfg.stage.metrics)?;
    tracking::write_artifact(
        &mut run,
        "config.test",
        "config/test.json",
        &cfg.effective_json(),
    )?;
    tracking::append_metrics(&mut run, metrics.clone())?;
    if g.json {
        return print_json(out, &metrics);
    }
    say(
        out,
        format_args!("run {} ({} held-out rows)", run.run_id, test.n()),
    )?;
    for (k, v) in &metrics {
        say(out, format_args!("  {k:<22} {v:.4}"))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct ExplainMeta<'a> {
    split: &'a str,
    method: explain::Method,
    n_coalitions: usize,
    n_rows: usize,
    base_value: f64,
    max_efficiency_gap: f64,
    tolerance: f64,
    background_m: usize,
    background_source_hash: &'a str,
    seed: u64,
    correct_fraction: f64,
    warning: Option<&'a str>,
}

fn background_tsv(names: &[String], rows: &xmlwf_core::Matrix) -> String {
    let mut out = names.join("\t");
    for r in rows.rows() {
        out.push('\n');
        let cells: Vec<String> = r.iter().map(|v| xmlwf_core::fmt_f64(*v)).collect();
        out.push_str(&cells.join("\t"));
    }
    out
}

pub fn cmd_explain(
    g: &Globals,
    run_id: &str,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), CliError> {
    let cfg: Layered<ExplainStage> =
        config::load_stage(&g.config_dir, "explain", g.seed, &g.overrides)?;
    let st = &cfg.stage;
    if st.background_m == 0 || st.top_k == 0 {
        return Err(CliError::config(
            "background_m and top_k must be at least 1",
        ));
    }
    let exp = open_store(&cfg)?;
    let mut run = finished_run(&exp, run_id)?;
    let model = tracking::load_model_of(&run)?;
    let train = tracking::load_snapshot(&run, "train")?;
    let seed = cfg.constants.seed;
    let background = explain::sample_background(&train, st.background_m, seed, Some(&model));
    let options = ExplainOptions {
        exact_limit: st.exact_limit,
        max_coalitions: st.max_coalitions,
        seed,
    };

    let mut splits = vec![(Split::Train, train.clone())];
    if run.data_hashes.contains_key("test") {
        splits.push((Split::Test, tracking::load_snapshot(&run, "test")?));
    }

    // Compute everything before writing so a failure leaves no partial set.
    struct Done {
        split: Split,
        expl: xmlwf_core::ShapExplanation,
        summary: FeatureImportanceSummary,
        correct: report::CorrectMask,
    }
    let mut done = Vec::new();
    for (split, data) in &splits {
        let expl = explain::explain_split(&model, data, &background, *split, &options)
            .map_err(|e| CliError::runtime(format!("{} split: {e}", split.as_str())))?;
        let gap = expl.max_efficiency_gap();
        if gap > expl.local_accuracy_tolerance() {
            return Err(CliError::runtime(format!(
                "{} split: attributions miss the model score by {gap:e}",
                split.as_str()
            )));
        }
        let correct = report::correctly_predicted_mask(&model, data, *split)?;
        if let Some(w) = &correct.warning {
            let _ = writeln!(err, "warning: {w}");
        }
        let summary =
            report::median_abs_importance(&expl, &correct.mask, &run.run_id, data.content_hash())?;
        done.push(Done {
            split: *split,
            expl,
            summary,
            correct,
        });
    }

    tracking::write_artifact(
        &mut run,
        "config.explain",
        "config/explain.json",
        &cfg.effective_json(),
    )?;
    tracking::write_artifact(
        &mut run,
        "shap.background",
        "shap/background.tsv",
        background_tsv(train.feature_names(), &background.rows).as_bytes(),
    )?;
    for d in &done {
        let s = d.split.as_str();
        let meta = ExplainMeta {
            split: s,
            method: d.expl.method,
            n_coalitions: d.expl.n_coalitions,
            n_rows: d.expl.values.nrows(),
            base_value: d.expl.base_value,
            max_efficiency_gap: d.expl.max_efficiency_gap(),
            tolerance: d.expl.local_accuracy_tolerance(),
            background_m: background.m(),
            background_source_hash: &background.source_hash,
            seed,
            correct_fraction: d.correct.correct_fraction,
            warning: d.correct.warning.as_deref(),
        };
        let mut meta_json = serde_json::to_vec_pretty(&meta).expect("serializes");
        meta_json.push(b'\n');
        let mut summary_json = serde_json::to_vec_pretty(&d.summary).expect("serializes");
        summary_json.push(b'\n');
        let (html, svg) = report::render_charts(&d.summary, st.top_k)?;
        let tsv = report::explanation_tsv(&d.expl);
        tracking::write_artifact(
            &mut run,
            &format!("shap.{s}"),
            &format!("shap/{s}.tsv"),
            tsv.as_bytes(),
        )?;
        tracking::write_artifact(
            &mut run,
            &format!("shap.{s}.meta"),
            &format!("shap/{s}.meta.json"),
            &meta_json,
        )?;
        tracking::write_artifact(
            &mut run,
            &format!("shap.{s}.summary"),
            &format!("shap/{s}.summary.json"),
            &summary_json,
        )?;
        tracking::write_artifact(
            &mut run,
            &format!("figure.shap_{s}.html"),
            &format!("figures/shap_{s}.html"),
            &html,
        )?;
        tracking::write_artifact(
            &mut run,
            &format!("figure.shap_{s}.svg"),
            &format!("figures/shap_{s}.svg"),
            &svg,
        )?;
    }

    let cv: Option<CvTable> = match run.artifacts.get("cv_table") {
        Some(rel) => {
            let path = run.path(rel);
            let bytes = fs::read(&path).map_err(io(&path))?;
            Some(serde_json::from_slice(&bytes).map_err(|e| CliError::runtime(e.to_string()))?)
        }
        None => None,
    };
    let summaries: Vec<FeatureImportanceSummary> = done.iter().map(|d| d.summary.clone()).collect();
    let html = report::emit_run_report(&run, cv.as_ref(), &summaries, st.top_k)?;
    tracking::write_artifact(&mut run, "figure.report", "figures/report.html", &html)?;

    if g.json {
        let top: BTreeMap<&str, Vec<&str>> = done
            .iter()
            .map(|d| (d.split.as_str(), d.summary.top_features(st.top_k)))
            .collect();
        return print_json(out, &top);
    }
    say(
        out,
        format_args!("run {} explained ({})", run.run_id, run_rel(&run)),
    )?;
    for d in &done {
        say(
            out,
            format_args!(
                "  {}: {:?} over {} rows, {} correctly predicted; top: {}",
                d.split.as_str(),
                d.expl.method,
                d.expl.values.nrows(),
                d.summary.n_used,
                d.summary.top_features(5).join(", ")
            ),
        )?;
    }
    say(
        out,
        format_args!("  report: {}/figures/report.html", run_rel(&run)),
    )?;
    Ok(())
}

#[derive(Serialize)]
struct RunListing<'a> {
    #[serde(flatten)]
    record: &'a RunRecord,
    stale: bool,
    params: &'a Params,
    metrics: &'a BTreeMap<String, f64>,
}

fn params_digest(params: &Params) -> String {
    let bytes = serde_json::to_vec(params).expect("serializes");
    tracking::sha256_hex(&bytes)[..12].to_string()
}

pub fn cmd_runs(g: &Globals, sort: &str, out: &mut dyn Write) -> Result<(), CliError> {
    let constants = config::load_constants(&g.config_dir, g.seed)?;
    let root = g.config_dir.join(&constants.store_root);
    let runs = match tracking::list_runs(&root, &constants.experiment, sort) {
        Ok(r) => r,
        Err(tracking::TrackingError::NotFound(_)) => {
            return Err(CliError::new(
                EXIT_NOT_FOUND,
                format!(
                    "no experiment `{}` under the store root",
                    constants.experiment
                ),
            ))
        }
        Err(e) => return Err(e.into()),
    };
    if g.json {
        let listing: Vec<RunListing> = runs
            .iter()
            .map(|r| RunListing {
                record: r,
                stale: r.is_stale(),
                params: &r.params,
                metrics: &r.metrics,
            })
            .collect();
        return print_json(out, &listing);
    }
    let headline = |r: &RunRecord| -> String {
        let mut parts = Vec::new();
        if let Some(sel) = r
            .params
            .get("search.selection_metric")
            .and_then(ParamValue::as_str)
        {
            if let Some(v) = r.metrics.get(&format!("cv.{sel}.mean")) {
                parts.push(format!("cv.{sel}={v:.4}"));
            }
        }
        if sort != "started_at" && !sort.starts_with("cv.") {
            if let Some(v) = r.metrics.get(sort) {
                parts.push(format!("{sort}={v:.4}"));
            }
        }
        for (k, v) in &r.metrics {
            if k.starts_with("test.") && k != sort {
                parts.push(format!("{k}={v:.4}"));
            }
        }
        parts.join(" ")
    };
    say(
        out,
        format_args!(
            "{:<32}  {:<16}  {:<25}  {:<12}  metrics",
            "run_id", "status", "started_at", "params"
        ),
    )?;
    for r in &runs {
        let status = if r.is_stale() {
            "running (stale)".to_string()
        } else {
            r.status.as_str().to_string()
        };
        say(
            out,
            format_args!(
                "{:<32}  {:<16}  {:<25}  {:<12}  {}",
                r.run_id,
                status,
                r.started_at.format("%Y-%m-%dT%H:%M:%SZ"),
                params_digest(&r.params),
                headline(r)
            ),
        )?;
    }
    Ok(())
}
