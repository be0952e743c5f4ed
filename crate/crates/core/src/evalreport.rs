//! Accuracy metrics (overall, per split, per class) and report files.
//!
//! Two report layouts exist, both with a fixed field order:
//!
//! * `rows`: tab-separated text, header
//!   `run  loop  overall  many  medium  few  seed  config_hash`, one line per
//!   run or loop. Missing values are written as `-`. Reals use the shortest
//!   representation that parses back to the same `f64`.
//! * `structured`: JSON object `{format_version, config, rows}` where `rows`
//!   holds the same records and `config` optionally embeds the full run
//!   configuration.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{LabeledSet, PseudoLabeledSet, Split, SplitSpec, UnlabeledSet};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::netcore::{Head, ModelState};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SplitAccuracy {
    pub many: Option<f64>,
    pub medium: Option<f64>,
    pub few: Option<f64>,
}

impl SplitAccuracy {
    pub fn get(&self, s: Split) -> Option<f64> {
        match s {
            Split::Many => self.many,
            Split::Medium => self.medium,
            Split::Few => self.few,
        }
    }

    fn set(&mut self, s: Split, v: Option<f64>) {
        match s {
            Split::Many => self.many = v,
            Split::Medium => self.medium = v,
            Split::Few => self.few = v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitCounts {
    pub many: usize,
    pub medium: usize,
    pub few: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub loop_index: Option<usize>,
}

/// Accuracies over one evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Correct over total samples.
    pub overall: f64,
    /// Correct over total samples whose class lies in the split.
    pub splits: SplitAccuracy,
    /// `None` for classes without samples.
    pub per_class: Vec<Option<f64>>,
    pub class_counts: Vec<usize>,
    pub split_counts: SplitCounts,
    pub provenance: Provenance,
}

impl MetricsReport {
    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }
}

/// Scores `predictions` against `labels`, grouping classes by `splits`.
pub fn accuracy_from_predictions(
    predictions: &[usize],
    labels: &[usize],
    splits: &SplitSpec,
) -> Result<MetricsReport> {
    if predictions.len() != labels.len() {
        return Err(Error::shape("predictions", labels.len(), predictions.len()));
    }
    let c = splits.num_classes();
    let mut total = vec![0usize; c];
    let mut correct = vec![0usize; c];
    for (&p, &y) in predictions.iter().zip(labels) {
        if y >= c {
            return Err(Error::Data(format!("label {y} out of range for {c} classes")));
        }
        total[y] += 1;
        if p == y {
            correct[y] += 1;
        }
    }
    let n: usize = total.iter().sum();
    let hits: usize = correct.iter().sum();
    let per_class = total
        .iter()
        .zip(&correct)
        .map(|(&t, &k)| (t > 0).then(|| k as f64 / t as f64))
        .collect();
    let mut split_acc = SplitAccuracy::default();
    let mut split_counts = SplitCounts::default();
    for s in Split::ALL {
        let classes = splits.classes_in(s);
        let t: usize = classes.iter().map(|&j| total[j]).sum();
        let k: usize = classes.iter().map(|&j| correct[j]).sum();
        split_acc.set(s, (t > 0).then(|| k as f64 / t as f64));
        match s {
            Split::Many => split_counts.many = t,
            Split::Medium => split_counts.medium = t,
            Split::Few => split_counts.few = t,
        }
    }
    Ok(MetricsReport {
        overall: if n > 0 { hits as f64 / n as f64 } else { 0.0 },
        splits: split_acc,
        per_class,
        class_counts: total,
        split_counts,
        provenance: Provenance::default(),
    })
}

/// Argmax predictions of `head ∘ f` over `xs`, in order.
pub fn predict_all<'a>(model: &ModelState, head: Head, xs: impl IntoParallelIterator<Item = &'a [f64]>) -> Vec<usize> {
    xs.into_par_iter().map(|x| model.predict(x, head)).collect()
}

/// Accuracy of `head ∘ f` on a balanced test set.
pub fn evaluate(model: &ModelState, head: Head, test: &LabeledSet, splits: &SplitSpec) -> Result<MetricsReport> {
    let c = model.num_classes();
    if test.num_classes() != c || splits.num_classes() != c {
        return Err(Error::Config(format!(
            "class count mismatch: model {c}, test {}, splits {}",
            test.num_classes(),
            splits.num_classes()
        )));
    }
    if let Some(j) = test.class_counts().iter().position(|&n| n == 0) {
        return Err(Error::Config(format!("class {j} is absent from the test set")));
    }
    if test.feature_dim() != Some(model.input_dim()) {
        return Err(Error::shape("test features", model.input_dim(), test.feature_dim().unwrap_or(0)));
    }
    let counts = test.class_counts();
    if counts.iter().any(|&n| n != counts[0]) {
        log::warn!("test set is not balanced across classes");
    }
    let xs: Vec<&[f64]> = test.examples().iter().map(|e| e.features.as_slice()).collect();
    let preds = predict_all(model, head, xs);
    accuracy_from_predictions(&preds, &test.labels(), splits)
}

/// Accuracy of pseudo labels against the hidden ground truth of `U`.
pub fn pseudo_accuracy(pseudo: &PseudoLabeledSet, unlabeled: &UnlabeledSet, splits: &SplitSpec) -> Result<MetricsReport> {
    let hidden = unlabeled.hidden_labels().ok_or_else(|| {
        Error::Unsupported("pseudo-label accuracy needs the hidden labels of a generated task".into())
    })?;
    let truth: Result<Vec<usize>> = pseudo
        .ids
        .iter()
        .map(|&i| {
            hidden
                .get(i)
                .copied()
                .ok_or_else(|| Error::Data(format!("pseudo-labeled id {i} outside the unlabeled set")))
        })
        .collect();
    accuracy_from_predictions(&pseudo.labels, &truth?, splits)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Rows,
    Structured,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rows" | "tsv" => Ok(Self::Rows),
            "structured" | "json" => Ok(Self::Structured),
            _ => Err(Error::Config(format!("unknown report format {s:?} (rows|structured)"))),
        }
    }
}

/// One line of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub run: String,
    pub loop_index: Option<usize>,
    pub overall: f64,
    pub many: Option<f64>,
    pub medium: Option<f64>,
    pub few: Option<f64>,
    pub seed: u64,
    pub config_hash: String,
}

impl ReportRow {
    pub fn from_metrics(run: impl Into<String>, m: &MetricsReport) -> Self {
        Self {
            run: run.into(),
            loop_index: m.provenance.loop_index,
            overall: m.overall,
            many: m.splits.many,
            medium: m.splits.medium,
            few: m.splits.few,
            seed: m.provenance.seed,
            config_hash: m.provenance.config_hash.clone(),
        }
    }
}

/// One row per named run, in the given order.
pub fn comparison_grid(runs: &[(String, MetricsReport)]) -> Vec<ReportRow> {
    runs.iter().map(|(name, m)| ReportRow::from_metrics(name.clone(), m)).collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct StructuredReport {
    format_version: u32,
    config: Option<serde_json::Value>,
    rows: Vec<ReportRow>,
}

const ROWS_HEADER: &str = "run\tloop\toverall\tmany\tmedium\tfew\tseed\tconfig_hash";

fn opt_f(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| x.to_string())
}

/// Renders rows in the requested layout.
pub fn render_report(rows: &[ReportRow], format: ReportFormat, config: Option<&serde_json::Value>) -> Result<String> {
    match format {
        ReportFormat::Rows => {
            let mut out = String::from(ROWS_HEADER);
            out.push('\n');
            for r in rows {
                if r.run.contains(['\t', '\n']) {
                    return Err(Error::Data(format!("run name {:?} contains a delimiter", r.run)));
                }
                out.push_str(&format!(
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                    r.run,
                    r.loop_index.map_or_else(|| "-".into(), |l| l.to_string()),
                    r.overall,
                    opt_f(r.many),
                    opt_f(r.medium),
                    opt_f(r.few),
                    r.seed,
                    r.config_hash
                ));
            }
            Ok(out)
        }
        ReportFormat::Structured => {
            let doc = StructuredReport {
                format_version: 1,
                config: config.cloned(),
                rows: rows.to_vec(),
            };
            let mut s = serde_json::to_string_pretty(&doc)?;
            s.push('\n');
            Ok(s)
        }
    }
}

/// Writes a report file atomically.
pub fn emit_report(
    rows: &[ReportRow],
    path: &Path,
    format: ReportFormat,
    config: Option<&serde_json::Value>,
) -> Result<()> {
    fsutil::write_atomic(path, render_report(rows, format, config)?.as_bytes())
}

fn parse_cell<T: std::str::FromStr>(cell: &str, line: usize) -> Result<T> {
    cell.parse()
        .map_err(|_| Error::Data(format!("report line {line}: cannot parse {cell:?}")))
}

fn parse_opt<T: std::str::FromStr>(cell: &str, line: usize) -> Result<Option<T>> {
    if cell == "-" {
        Ok(None)
    } else {
        parse_cell(cell, line).map(Some)
    }
}

/// Parses a report produced by [`render_report`].
pub fn parse_report(text: &str, format: ReportFormat) -> Result<Vec<ReportRow>> {
    match format {
        ReportFormat::Structured => Ok(serde_json::from_str::<StructuredReport>(text)?.rows),
        ReportFormat::Rows => {
            let mut lines = text.lines();
            if lines.next() != Some(ROWS_HEADER) {
                return Err(Error::Data("report header missing or unexpected".into()));
            }
            lines
                .enumerate()
                .filter(|(_, l)| !l.is_empty())
                .map(|(i, l)| {
                    let n = i + 2;
                    let cells: Vec<&str> = l.split('\t').collect();
                    if cells.len() != 8 {
                        return Err(Error::Data(format!("report line {n}: expected 8 fields, got {}", cells.len())));
                    }
                    Ok(ReportRow {
                        run: cells[0].to_string(),
                        loop_index: parse_opt(cells[1], n)?,
                        overall: parse_cell(cells[2], n)?,
                        many: parse_opt(cells[3], n)?,
                        medium: parse_opt(cells[4], n)?,
                        few: parse_opt(cells[5], n)?,
                        seed: parse_cell(cells[6], n)?,
                        config_hash: cells[7].to_string(),
                    })
                })
                .collect()
        }
    }
}
