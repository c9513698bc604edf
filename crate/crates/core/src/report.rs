//! Median-|φ| feature importance over correctly predicted samples, and
//! self-contained chart / report rendering.
//!
//! Charts are plain strings: an SVG document and an HTML page with inline
//! style and script. Every bar carries its exact value as a shortest
//! round-trip `data-value` attribute, so charts can be parsed back.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::explain::{ShapExplanation, Split};
use crate::fmt_f64;
use crate::pipeline::{FittedPipeline, PipelineError};
use crate::tracking::{CvTable, RunRecord, RunStatus};

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error("no correctly predicted samples to summarize")]
    EmptySelection,
    #[error("mask has {mask} entries for {rows} explained rows")]
    LengthMismatch { mask: usize, rows: usize },
    #[error("top_k must be at least 1")]
    BadTopK,
    #[error("run {0} is not finished")]
    NotFinished(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

pub type Result<T, E = ReportError> = std::result::Result<T, E>;

pub const DEFAULT_TOP_K: usize = 20;
/// Train accuracy below this triggers a warning before summarizing.
pub const CORRECT_FRACTION_WARNING: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportanceSummary {
    pub feature_names: Vec<String>,
    pub median_abs_shap: Vec<f64>,
    pub n_used: usize,
    pub n_total: usize,
    pub split: Split,
    pub model_run_id: String,
    pub data_hash: String,
}

impl FeatureImportanceSummary {
    /// Feature indices by median descending, ties by name.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.feature_names.len()).collect();
        idx.sort_by(|&a, &b| {
            self.median_abs_shap[b]
                .total_cmp(&self.median_abs_shap[a])
                .then_with(|| self.feature_names[a].cmp(&self.feature_names[b]))
        });
        idx
    }

    pub fn top_features(&self, k: usize) -> Vec<&str> {
        self.ranking()
            .into_iter()
            .take(k)
            .map(|i| self.feature_names[i].as_str())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectMask {
    pub mask: Vec<bool>,
    pub correct_fraction: f64,
    /// Set when the fraction on the train split falls below
    /// [`CORRECT_FRACTION_WARNING`].
    pub warning: Option<String>,
}

pub fn correctly_predicted_mask(
    model: &FittedPipeline,
    data: &Dataset,
    split: Split,
) -> Result<CorrectMask> {
    let pred = model.predict_labels(data.rows())?;
    let mask: Vec<bool> = pred
        .iter()
        .zip(data.labels())
        .map(|(p, y)| p == y)
        .collect();
    let correct = mask.iter().filter(|&&m| m).count();
    let correct_fraction = if mask.is_empty() {
        0.0
    } else {
        correct as f64 / mask.len() as f64
    };
    let warning =
        (split == Split::Train && correct_fraction < CORRECT_FRACTION_WARNING).then(|| {
            format!(
                "only {correct} of {} training samples are predicted correctly; \
             importances rest on a poorly fitting model",
                mask.len()
            )
        });
    Ok(CorrectMask {
        mask,
        correct_fraction,
        warning,
    })
}

/// Median with the even-count rule (mean of the two central values).
/// Reorders `values`. NaN-free input expected.
pub fn median(values: &mut [f64]) -> f64 {
    let n = values.len();
    assert!(n > 0, "median of empty slice");
    let mid = n / 2;
    let (_, upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower = values[..mid]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        (lower + upper) / 2.0
    }
}

pub fn median_abs_importance(
    expl: &ShapExplanation,
    mask: &[bool],
    model_run_id: &str,
    data_hash: &str,
) -> Result<FeatureImportanceSummary> {
    let rows = expl.values.nrows();
    if mask.len() != rows {
        return Err(ReportError::LengthMismatch {
            mask: mask.len(),
            rows,
        });
    }
    let used: Vec<usize> = (0..rows).filter(|&i| mask[i]).collect();
    if used.is_empty() {
        return Err(ReportError::EmptySelection);
    }
    let mut column = Vec::with_capacity(used.len());
    let median_abs_shap = (0..expl.values.ncols())
        .map(|j| {
            column.clear();
            column.extend(used.iter().map(|&i| expl.values.get(i, j).abs()));
            median(&mut column)
        })
        .collect();
    Ok(FeatureImportanceSummary {
        feature_names: expl.feature_names.clone(),
        median_abs_shap,
        n_used: used.len(),
        n_total: rows,
        split: expl.explained_split,
        model_run_id: model_run_id.to_string(),
        data_hash: data_hash.to_string(),
    })
}

/// One row per explained sample: feature columns then base and score.
pub fn explanation_tsv(expl: &ShapExplanation) -> String {
    let mut out = expl.feature_names.join("\t");
    out.push_str("\tbase_value\tmodel_score");
    for (phi, score) in expl.values.rows().zip(&expl.model_score) {
        out.push('\n');
        for v in phi {
            out.push_str(&fmt_f64(*v));
            out.push('\t');
        }
        out.push_str(&fmt_f64(expl.base_value));
        out.push('\t');
        out.push_str(&fmt_f64(*score));
    }
    out
}

pub fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            _ => out.push(c),
        }
    }
    out
}

const BAR_HEIGHT: f64 = 22.0;
const LABEL_WIDTH: f64 = 160.0;
const PLOT_WIDTH: f64 = 420.0;
const VALUE_WIDTH: f64 = 110.0;
const TOP: f64 = 40.0;

fn chart_title(summary: &FeatureImportanceSummary) -> String {
    format!(
        "Median |SHAP| ({} split, {} of {} samples)",
        summary.split.as_str(),
        summary.n_used,
        summary.n_total
    )
}

fn bars(summary: &FeatureImportanceSummary, top_k: usize) -> Vec<(&str, f64)> {
    summary
        .ranking()
        .into_iter()
        .take(top_k)
        .map(|i| {
            (
                summary.feature_names[i].as_str(),
                summary.median_abs_shap[i],
            )
        })
        .collect()
}

/// SVG body without the XML declaration, for embedding.
fn svg_element(summary: &FeatureImportanceSummary, top_k: usize) -> String {
    let bars = bars(summary, top_k);
    let max = bars.iter().map(|b| b.1).fold(0.0, f64::max);
    let width = LABEL_WIDTH + PLOT_WIDTH + VALUE_WIDTH;
    let height = TOP + BAR_HEIGHT * bars.len() as f64 + 16.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" data-run-id="{}" data-data-hash="{}" data-split="{}">"#,
        escape(&summary.model_run_id),
        escape(&summary.data_hash),
        summary.split.as_str()
    );
    let _ = writeln!(
        s,
        r#"<text x="8" y="22" font-family="sans-serif" font-size="14" font-weight="bold">{}</text>"#,
        escape(&chart_title(summary))
    );
    for (i, (name, value)) in bars.iter().enumerate() {
        let y = TOP + BAR_HEIGHT * i as f64;
        let w = if max > 0.0 {
            PLOT_WIDTH * value / max
        } else {
            0.0
        };
        let _ = writeln!(
            s,
            r##"<g class="bar" data-feature="{name}" data-value="{v}"><text x="{lx:.1}" y="{ty:.1}" text-anchor="end" font-family="sans-serif" font-size="12">{name}</text><rect x="{LABEL_WIDTH:.1}" y="{ry:.1}" width="{w:.3}" height="{bh:.1}" fill="#3b75af"><title>{name}: {v}</title></rect><text x="{vx:.1}" y="{ty:.1}" font-family="sans-serif" font-size="11">{short}</text></g>"##,
            name = escape(name),
            v = fmt_f64(*value),
            lx = LABEL_WIDTH - 6.0,
            ty = y + 15.0,
            ry = y + 3.0,
            bh = BAR_HEIGHT - 6.0,
            vx = LABEL_WIDTH + w + 6.0,
            short = format_args!("{value:.4}"),
        );
    }
    s.push_str("</svg>\n");
    s
}

const HTML_STYLE: &str = "body{font-family:sans-serif;margin:1.5em;color:#222}\
table{border-collapse:collapse;margin:0.5em 0 1.5em}\
td,th{border:1px solid #ccc;padding:3px 8px;text-align:left}\
th.sortable{cursor:pointer;background:#eef}\
.bar-cell{width:420px}.bar-fill{background:#3b75af;height:14px}\
#tip{position:fixed;display:none;background:#333;color:#fff;padding:4px 8px;border-radius:3px;font-size:12px}\
code{font-size:90%}";

/// Hover shows the exact value; clicking a header sorts by that column.
const HTML_SCRIPT: &str = r#"(function(){
var tip=document.getElementById('tip');
document.querySelectorAll('tr.bar').forEach(function(r){
r.addEventListener('mousemove',function(e){tip.textContent=r.dataset.feature+': '+r.dataset.value;tip.style.display='block';tip.style.left=(e.clientX+12)+'px';tip.style.top=(e.clientY+12)+'px';});
r.addEventListener('mouseleave',function(){tip.style.display='none';});});
document.querySelectorAll('th.sortable').forEach(function(h){
h.addEventListener('click',function(){var body=h.closest('table').tBodies[0];var rows=Array.prototype.slice.call(body.rows);
var key=h.dataset.key;var asc=h.dataset.dir!=='asc';h.dataset.dir=asc?'asc':'desc';
rows.sort(function(a,b){var x=key==='value'?parseFloat(a.dataset.value):a.dataset.feature;var y=key==='value'?parseFloat(b.dataset.value):b.dataset.feature;return (x<y?-1:x>y?1:0)*(asc?1:-1);});
rows.forEach(function(r){body.appendChild(r);});});});
})();"#;

fn html_bar_table(summary: &FeatureImportanceSummary, top_k: usize) -> String {
    let bars = bars(summary, top_k);
    let max = bars.iter().map(|b| b.1).fold(0.0, f64::max);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<table class="shap" data-run-id="{}" data-data-hash="{}" data-split="{}">"#,
        escape(&summary.model_run_id),
        escape(&summary.data_hash),
        summary.split.as_str()
    );
    s.push_str(
        "<thead><tr><th class=\"sortable\" data-key=\"feature\">feature</th>\
<th class=\"sortable\" data-key=\"value\">median |SHAP|</th><th></th></tr></thead>\n<tbody>\n",
    );
    for (name, value) in bars {
        let pct = if max > 0.0 { 100.0 * value / max } else { 0.0 };
        let _ = writeln!(
            s,
            r#"<tr class="bar" data-feature="{name}" data-value="{v}"><td>{name}</td><td>{value:.6}</td><td class="bar-cell"><div class="bar-fill" style="width:{pct:.2}%"></div></td></tr>"#,
            name = escape(name),
            v = fmt_f64(value),
        );
    }
    s.push_str("</tbody></table>\n");
    s
}

fn html_page(title: &str, body: &str) -> String {
    format!(
        "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n<title>{}</title>\n\
<style>{HTML_STYLE}</style>\n</head>\n<body>\n{body}<div id=\"tip\"></div>\n<script>{HTML_SCRIPT}</script>\n</body>\n</html>\n",
        escape(title)
    )
}

fn provenance(summary: &FeatureImportanceSummary) -> String {
    format!(
        "<p>run <code>{}</code> &middot; data <code>{}</code></p>\n",
        escape(&summary.model_run_id),
        escape(&summary.data_hash)
    )
}

/// `(interactive_html, static_svg)` bar charts of the `min(top_k, d)`
/// largest medians.
pub fn render_charts(
    summary: &FeatureImportanceSummary,
    top_k: usize,
) -> Result<(Vec<u8>, Vec<u8>)> {
    if top_k == 0 {
        return Err(ReportError::BadTopK);
    }
    let title = chart_title(summary);
    let body = format!(
        "<h1>{}</h1>\n{}{}",
        escape(&title),
        provenance(summary),
        html_bar_table(summary, top_k)
    );
    let html = html_page(&title, &body);
    let svg = format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n{}",
        svg_element(summary, top_k)
    );
    Ok((html.into_bytes(), svg.into_bytes()))
}

fn kv_table(rows: impl IntoIterator<Item = (String, String)>) -> String {
    let mut s = String::from("<table>\n");
    for (k, v) in rows {
        let _ = writeln!(s, "<tr><th>{}</th><td>{}</td></tr>", escape(&k), escape(&v));
    }
    s.push_str("</table>\n");
    s
}

fn cv_section(cv: &CvTable) -> String {
    let mut s = format!(
        "<h2>Cross-validation</h2>\n<p>{} search, {} folds, selection by <code>{}</code></p>\n<table>\n<tr><th>#</th><th>candidate</th>",
        escape(&cv.strategy),
        cv.k,
        escape(&cv.selection_metric)
    );
    for m in &cv.metrics {
        let _ = write!(s, "<th>{}</th>", escape(m));
    }
    s.push_str("</tr>\n");
    for (c, cand) in cv.candidates.iter().enumerate() {
        let params: Vec<String> = cand
            .iter()
            .map(|(k, v)| format!("{k}={}", fmt_f64(*v)))
            .collect();
        let marker = if c == cv.best_index { " (best)" } else { "" };
        let _ = write!(
            s,
            "<tr><td>{c}{marker}</td><td>{}</td>",
            escape(&params.join(", "))
        );
        for m in &cv.metrics {
            let folds = &cv.fold_scores[m][c];
            let _ = write!(
                s,
                "<td>{:.4} &plusmn; {:.4}</td>",
                crate::search::mean(folds),
                crate::search::std_dev(folds)
            );
        }
        s.push_str("</tr>\n");
    }
    s.push_str("</table>\n");
    s
}

/// One page summarizing a finished run: metadata, params, CV table, test
/// metrics and a chart per explained split.
pub fn emit_run_report(
    run: &RunRecord,
    cv: Option<&CvTable>,
    summaries: &[FeatureImportanceSummary],
    top_k: usize,
) -> Result<Vec<u8>> {
    if run.status != RunStatus::Finished {
        return Err(ReportError::NotFinished(run.run_id.clone()));
    }
    if top_k == 0 {
        return Err(ReportError::BadTopK);
    }
    let mut body = format!("<h1>Run {}</h1>\n", escape(&run.run_id));
    let mut meta = vec![
        ("experiment".to_string(), run.experiment.clone()),
        ("status".to_string(), run.status.as_str().to_string()),
        ("started_at".to_string(), run.started_at.to_rfc3339()),
        (
            "ended_at".to_string(),
            run.ended_at.map(|t| t.to_rfc3339()).unwrap_or_default(),
        ),
        ("seed".to_string(), run.seed.to_string()),
    ];
    for (split, hash) in &run.data_hashes {
        meta.push((format!("data hash ({split})"), hash.clone()));
    }
    if let Some(io) = &run.io_description {
        meta.push(("target".to_string(), io.target_name.clone()));
        for (split, shape) in &io.splits {
            meta.push((
                format!("shape ({split})"),
                format!("{} × {}", shape.n, shape.d),
            ));
        }
    }
    body.push_str(&kv_table(meta));

    body.push_str("<h2>Parameters</h2>\n");
    body.push_str(&kv_table(
        run.params.iter().map(|(k, v)| (k.clone(), v.to_string())),
    ));

    if let Some(cv) = cv {
        body.push_str(&cv_section(cv));
    }

    let test: Vec<(String, String)> = run
        .metrics
        .iter()
        .filter(|(k, _)| k.starts_with("test."))
        .map(|(k, v)| (k.clone(), fmt_f64(*v)))
        .collect();
    if !test.is_empty() {
        body.push_str("<h2>Held-out metrics</h2>\n");
        body.push_str(&kv_table(test));
    }

    let mut ordered: Vec<&FeatureImportanceSummary> = summaries.iter().collect();
    ordered.sort_by_key(|s| s.split != Split::Train);
    for summary in ordered {
        let _ = writeln!(
            body,
            "<section class=\"explain\" data-split=\"{0}\">\n<h2>Feature importance ({0})</h2>",
            summary.split.as_str()
        );
        body.push_str(&provenance(summary));
        body.push_str(&svg_element(summary, top_k));
        body.push_str(&html_bar_table(summary, top_k));
        body.push_str("</section>\n");
    }
    Ok(html_page(&format!("Run {}", run.run_id), &body).into_bytes())
}
