//! Accuracy metrics, evaluation reports, and comparison tables.
//!
//! Two metric flavors cover the benchmark suite: plain top-1 accuracy
//! (percentage of items whose argmax class matches the annotation) and
//! mean-per-class accuracy (per-class accuracies averaged over the classes
//! that have at least one test item). Reports keep full-precision values;
//! rounding to two decimals happens only at the rendering edge.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::catalog::{DatasetSpec, Metric};
use crate::zeroshot::Prediction;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("manifest is empty")]
    EmptyManifest,
    #[error("no prediction for manifest item {image_key:?}")]
    MissingPrediction { image_key: String },
    #[error("manifest item {image_key:?} has true_index {true_index} but the dataset has {num_classes} classes")]
    TrueIndexOutOfRange {
        image_key: String,
        true_index: usize,
        num_classes: usize,
    },
    #[error("baseline report is for dataset {baseline:?}, run is for {run:?}")]
    DatasetMismatch { baseline: String, run: String },
    #[error("malformed manifest at {path}:{line}: {detail}")]
    ParseError {
        path: String,
        line: usize,
        detail: String,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Ground-truth annotations: image keys with their class indices.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    items: Vec<(String, usize)>,
}

impl DatasetManifest {
    pub fn new(items: Vec<(String, usize)>) -> Self {
        Self { items }
    }

    pub fn items(&self) -> &[(String, usize)] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Loads a manifest CSV with header `image_key,true_index`.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest, EvalError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| EvalError::ParseError {
            path: path.display().to_string(),
            line: 1,
            detail: e.to_string(),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| EvalError::ParseError {
            path: path.display().to_string(),
            line: 1,
            detail: e.to_string(),
        })?
        .clone();
    if headers.iter().collect::<Vec<_>>() != vec!["image_key", "true_index"] {
        return Err(EvalError::ParseError {
            path: path.display().to_string(),
            line: 1,
            detail: format!("expected header \"image_key,true_index\", got {headers:?}"),
        });
    }
    let mut items = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| EvalError::ParseError {
            path: path.display().to_string(),
            line,
            detail: e.to_string(),
        })?;
        let key = record.get(0).unwrap_or_default().to_string();
        let index: usize = record
            .get(1)
            .unwrap_or_default()
            .trim()
            .parse()
            .map_err(|e| EvalError::ParseError {
                path: path.display().to_string(),
                line,
                detail: format!("bad true_index: {e}"),
            })?;
        items.push((key, index));
    }
    Ok(DatasetManifest { items })
}

/// Writes a manifest CSV with header `image_key,true_index`.
pub fn save_manifest(manifest: &DatasetManifest, path: &Path) -> Result<(), EvalError> {
    let mut out = String::from("image_key,true_index\n");
    for (key, index) in &manifest.items {
        out.push_str(&format!("{key},{index}\n"));
    }
    std::fs::write(path, out).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// The scored outcome of one run on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset_id: String,
    /// Which prompt family produced the run (e.g. "standard", "full").
    pub mode: String,
    pub metric_kind: Metric,
    /// The headline metric as a percentage in [0, 100], full precision.
    pub metric_value: f64,
    /// Per-class accuracy percentages, one per dataset class. Classes with
    /// no test items report 0 here but are excluded from mean-per-class.
    pub per_class_accuracy: Vec<f64>,
    pub n_items: usize,
    /// `run - baseline` in percentage points, when a baseline was supplied.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_vs_baseline: Option<f64>,
}

/// Top-1 accuracy over (predicted, true) index pairs, as a percentage.
pub fn top1_accuracy(pairs: &[(usize, usize)]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let correct = pairs.iter().filter(|(predicted, truth)| predicted == truth).count();
    100.0 * (correct as f64) / (pairs.len() as f64)
}

/// Per-class accuracies (percentage per class; 0 for classes with no
/// items) and the mean over non-empty classes.
pub fn per_class_accuracy(
    pairs: &[(usize, usize)],
    num_classes: usize,
) -> (Vec<f64>, f64) {
    let mut correct = vec![0usize; num_classes];
    let mut totals = vec![0usize; num_classes];
    for &(predicted, truth) in pairs {
        totals[truth] += 1;
        if predicted == truth {
            correct[truth] += 1;
        }
    }
    let per_class: Vec<f64> = correct
        .iter()
        .zip(&totals)
        .map(|(&c, &t)| if t == 0 { 0.0 } else { 100.0 * (c as f64) / (t as f64) })
        .collect();
    let populated: Vec<f64> = per_class
        .iter()
        .zip(&totals)
        .filter(|(_, &t)| t > 0)
        .map(|(&a, _)| a)
        .collect();
    let mean = if populated.is_empty() {
        0.0
    } else {
        populated.iter().sum::<f64>() / (populated.len() as f64)
    };
    (per_class, mean)
}

/// Scores a prediction run against a manifest using the dataset's metric.
///
/// Every manifest item must have a prediction (keys may appear in any
/// order). With a baseline report for the same dataset, the report carries
/// `run - baseline` at full precision.
pub fn evaluate(
    predictions: &[Prediction],
    manifest: &DatasetManifest,
    dataset: &DatasetSpec,
    mode: &str,
    baseline: Option<&EvalReport>,
) -> Result<EvalReport, EvalError> {
    if manifest.is_empty() {
        return Err(EvalError::EmptyManifest);
    }
    let by_key: HashMap<&str, &Prediction> =
        predictions.iter().map(|p| (p.image_key.as_str(), p)).collect();
    let mut pairs = Vec::with_capacity(manifest.len());
    for (key, true_index) in &manifest.items {
        if *true_index >= dataset.num_classes() {
            return Err(EvalError::TrueIndexOutOfRange {
                image_key: key.clone(),
                true_index: *true_index,
                num_classes: dataset.num_classes(),
            });
        }
        let prediction = by_key
            .get(key.as_str())
            .ok_or_else(|| EvalError::MissingPrediction { image_key: key.clone() })?;
        pairs.push((prediction.predicted_index, *true_index));
    }

    let (per_class, mean_per_class) = per_class_accuracy(&pairs, dataset.num_classes());
    let metric_value = match dataset.metric {
        Metric::Top1Accuracy => top1_accuracy(&pairs),
        Metric::MeanPerClass => mean_per_class,
    };

    let delta_vs_baseline = match baseline {
        Some(b) => {
            if b.dataset_id != dataset.dataset_id {
                return Err(EvalError::DatasetMismatch {
                    baseline: b.dataset_id.clone(),
                    run: dataset.dataset_id.clone(),
                });
            }
            Some(metric_value - b.metric_value)
        }
        None => None,
    };

    Ok(EvalReport {
        dataset_id: dataset.dataset_id.clone(),
        mode: mode.to_string(),
        metric_kind: dataset.metric,
        metric_value,
        per_class_accuracy: per_class,
        n_items: manifest.len(),
        delta_vs_baseline,
    })
}

/// Benchmark-table dataset order used for report columns.
pub const DATASET_TABLE_ORDER: [&str; 8] = [
    "imagenet",
    "dtd",
    "stanford_cars",
    "sun397",
    "food101",
    "fgvc_aircraft",
    "oxford_pets",
    "caltech101",
];

fn dataset_rank(dataset_id: &str) -> usize {
    DATASET_TABLE_ORDER
        .iter()
        .position(|&d| d == dataset_id)
        .unwrap_or(DATASET_TABLE_ORDER.len())
}

fn mode_rank(mode: &str) -> usize {
    match mode {
        "standard" => 0,
        "single" => 1,
        "full" => 2,
        "wordnet" => 3,
        _ => 4,
    }
}

/// Formats a percentage for display: two decimals, matching the benchmark
/// tables.
pub fn format_metric(value: f64) -> String {
    format!("{value:.2}")
}

/// Formats a delta with an explicit sign, two decimals.
pub fn format_delta(delta: f64) -> String {
    let rounded = format!("{delta:.2}");
    if rounded.starts_with('-') {
        rounded
    } else {
        format!("+{rounded}")
    }
}

/// A rendered report table: fixed-width text plus machine-readable CSV.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportTable {
    pub text: String,
    pub csv: String,
}

/// Renders reports as a mode-by-dataset grid.
///
/// Columns follow the benchmark dataset order (unknown datasets come after,
/// in first-appearance order); rows are modes; a delta row follows any mode
/// row that carries baseline deltas. The CSV is long-form, one row per
/// report, in the same deterministic order.
pub fn render_report_table(reports: &[EvalReport]) -> ReportTable {
    // Deterministic column and row orders: table rank first, then first
    // appearance in the input.
    let mut dataset_ids: Vec<&str> = Vec::new();
    for report in reports {
        if !dataset_ids.contains(&report.dataset_id.as_str()) {
            dataset_ids.push(&report.dataset_id);
        }
    }
    let mut dataset_order: Vec<(usize, usize, &str)> = dataset_ids
        .iter()
        .enumerate()
        .map(|(i, &id)| (dataset_rank(id), i, id))
        .collect();
    dataset_order.sort();
    let dataset_ids: Vec<&str> = dataset_order.into_iter().map(|(_, _, id)| id).collect();

    let mut modes: Vec<&str> = Vec::new();
    for report in reports {
        if !modes.contains(&report.mode.as_str()) {
            modes.push(&report.mode);
        }
    }
    let mut mode_order: Vec<(usize, usize, &str)> = modes
        .iter()
        .enumerate()
        .map(|(i, &m)| (mode_rank(m), i, m))
        .collect();
    mode_order.sort();
    let modes: Vec<&str> = mode_order.into_iter().map(|(_, _, m)| m).collect();

    let cell = |mode: &str, dataset: &str| {
        reports
            .iter()
            .find(|r| r.mode == mode && r.dataset_id == dataset)
    };

    // Text grid.
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut header = vec!["mode".to_string()];
    header.extend(dataset_ids.iter().map(|s| s.to_string()));
    rows.push(header);
    for mode in &modes {
        let mut value_row = vec![mode.to_string()];
        let mut delta_row = vec!["  delta".to_string()];
        let mut has_delta = false;
        for dataset in &dataset_ids {
            match cell(mode, dataset) {
                Some(report) => {
                    value_row.push(format_metric(report.metric_value));
                    match report.delta_vs_baseline {
                        Some(delta) => {
                            has_delta = true;
                            delta_row.push(format_delta(delta));
                        }
                        None => delta_row.push(String::new()),
                    }
                }
                None => {
                    value_row.push("-".to_string());
                    delta_row.push(String::new());
                }
            }
        }
        rows.push(value_row);
        if has_delta {
            rows.push(delta_row);
        }
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|col| rows.iter().map(|r| r[col].len()).max().unwrap_or(0))
        .collect();
    let mut text = String::new();
    for (i, row) in rows.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(col, value)| {
                if col == 0 {
                    format!("{value:<width$}", width = widths[col])
                } else {
                    format!("{value:>width$}", width = widths[col])
                }
            })
            .collect();
        text.push_str(line.join("  ").trim_end());
        text.push('\n');
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            text.push_str(&rule.join("--"));
            text.push('\n');
        }
    }

    // Long-form CSV in the same deterministic order.
    let mut csv = String::from("dataset_id,mode,metric_kind,metric_value,n_items,delta_vs_baseline\n");
    for mode in &modes {
        for dataset in &dataset_ids {
            if let Some(report) = cell(mode, dataset) {
                let delta = report
                    .delta_vs_baseline
                    .map(|d| d.to_string())
                    .unwrap_or_default();
                csv.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    report.dataset_id,
                    report.mode,
                    report.metric_kind,
                    report.metric_value,
                    report.n_items,
                    delta
                ));
            }
        }
    }

    ReportTable { text, csv }
}

/// Side-by-side scores of the three prompt families on one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineComparison {
    pub standard: EvalReport,
    pub cupl: EvalReport,
    pub wordnet: EvalReport,
}

impl BaselineComparison {
    /// Three-column text table: Standard | CuPL | WordNet.
    pub fn render_text(&self) -> String {
        let values = [
            format_metric(self.standard.metric_value),
            format_metric(self.cupl.metric_value),
            format_metric(self.wordnet.metric_value),
        ];
        let headers = ["Standard", "CuPL", "WordNet"];
        let widths: Vec<usize> = headers
            .iter()
            .zip(&values)
            .map(|(h, v)| h.len().max(v.len()))
            .collect();
        let mut text = format!(
            "dataset: {} ({})\n",
            self.standard.dataset_id, self.standard.metric_kind
        );
        let header_line: Vec<String> = headers
            .iter()
            .zip(&widths)
            .map(|(h, w)| format!("{h:>w$}"))
            .collect();
        let value_line: Vec<String> = values
            .iter()
            .zip(&widths)
            .map(|(v, w)| format!("{v:>w$}"))
            .collect();
        text.push_str(&header_line.join("  "));
        text.push('\n');
        text.push_str(&value_line.join("  "));
        text.push('\n');
        text
    }

    pub fn render_csv(&self) -> String {
        let mut csv = String::from("dataset_id,method,metric_kind,metric_value\n");
        for (method, report) in [
            ("standard", &self.standard),
            ("cupl", &self.cupl),
            ("wordnet", &self.wordnet),
        ] {
            csv.push_str(&format!(
                "{},{},{},{}\n",
                report.dataset_id, method, report.metric_kind, report.metric_value
            ));
        }
        csv
    }
}
