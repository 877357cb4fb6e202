//! Accuracy, per-class recall and the confusion matrix.
//!
//! Predictions are the argmax of each utterance's class distribution, with
//! ties going to the lowest class index. Recall for a class with no true
//! utterances is reported as absent (`None`, `null` in JSON, `NA` in CSV),
//! never as zero.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Conversation;
use crate::error::{Error, Result};
use crate::models::{count_parameters, Model};

/// Class names in their fixed order. Four-way runs use the emotion names;
/// other class counts fall back to `class0`, `class1`, ...
pub fn class_names(num_classes: usize) -> Vec<String> {
    if num_classes == 4 {
        ["happy", "sad", "neutral", "angry"].map(String::from).to_vec()
    } else {
        (0..num_classes).map(|c| format!("class{c}")).collect()
    }
}

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            counts: vec![vec![0; num_classes]; num_classes],
        }
    }

    pub fn from_pairs(num_classes: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut cm = Self::new(num_classes);
        for (truth, pred) in pairs {
            cm.record(truth, pred)?;
        }
        Ok(cm)
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<()> {
        let c = self.num_classes();
        for label in [truth, predicted] {
            if label >= c {
                return Err(Error::InvalidLabel { label, classes: c });
            }
        }
        self.counts[truth][predicted] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes()).map(|c| self.counts[c][c]).sum()
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.trace() as f64 / self.total() as f64
    }

    pub fn recall(&self, c: usize) -> Option<f64> {
        let row = self.row_sum(c);
        (row > 0).then(|| self.counts[c][c] as f64 / row as f64)
    }

    /// Row-normalized matrix; empty rows are `None`.
    pub fn normalized(&self) -> Vec<Option<Vec<f64>>> {
        (0..self.num_classes())
            .map(|r| {
                let row = self.row_sum(r);
                (row > 0).then(|| self.counts[r].iter().map(|&x| x as f64 / row as f64).collect())
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub parameter_count: usize,
    pub dataset: String,
    pub utterances: u64,
    pub accuracy: f64,
    pub per_class_recall: Vec<Option<f64>>,
    pub class_names: Vec<String>,
    pub confusion: ConfusionMatrix,
}

impl EvalReport {
    pub fn from_confusion(model: &str, parameter_count: usize, dataset: &str, confusion: ConfusionMatrix) -> Result<Self> {
        if confusion.total() == 0 {
            return Err(Error::EmptyDataset);
        }
        let c = confusion.num_classes();
        Ok(Self {
            model: model.to_string(),
            parameter_count,
            dataset: dataset.to_string(),
            utterances: confusion.total(),
            accuracy: confusion.accuracy(),
            per_class_recall: (0..c).map(|k| confusion.recall(k)).collect(),
            class_names: class_names(c),
            confusion,
        })
    }
}

/// Aggregates stored class distributions against labels.
pub fn evaluate_predictions<'a>(
    num_classes: usize,
    predictions: impl IntoIterator<Item = (&'a [f64], usize)>,
) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(num_classes);
    for (probs, label) in predictions {
        if probs.len() != num_classes {
            return Err(Error::Shape {
                op: "evaluate",
                left: vec![probs.len()],
                right: vec![num_classes],
            });
        }
        cm.record(label, argmax(probs))?;
    }
    Ok(cm)
}

/// Lowest index among the maxima.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn evaluate(model: &Model, dataset: &[Conversation], dataset_name: &str) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let per_conv: Vec<Vec<(usize, usize)>> = dataset
        .par_iter()
        .map(|conv| {
            let probs = model.predict(conv)?;
            Ok(probs
                .iter()
                .zip(conv.labels())
                .map(|(p, y)| (y, argmax(p.data())))
                .collect())
        })
        .collect::<Result<_>>()?;
    let cm = ConfusionMatrix::from_pairs(model.num_classes(), per_conv.into_iter().flatten())?;
    EvalReport::from_confusion(model.name(), count_parameters(model).total, dataset_name, cm)
}

/// Fixed-width text rendering of the row-normalized matrix.
pub fn render_confusion(report: &EvalReport) -> String {
    let names = &report.class_names;
    let width = names.iter().map(|n| n.len()).max().unwrap_or(4).max(6) + 2;
    let mut out = String::new();
    let _ = writeln!(out, "{} normalized confusion matrix (rows: true, columns: predicted)", report.model);
    let _ = write!(out, "{:width$}", "");
    for n in names {
        let _ = write!(out, "{n:>width$}");
    }
    out.push('\n');
    for (name, row) in names.iter().zip(report.confusion.normalized()) {
        let _ = write!(out, "{name:width$}");
        match row {
            Some(row) => {
                for x in row {
                    let _ = write!(out, "{x:>width$.2}");
                }
            }
            None => {
                for _ in names {
                    let _ = write!(out, "{:>width$}", "NA");
                }
            }
        }
        out.push('\n');
    }
    let _ = writeln!(out, "accuracy {:.4} over {} utterances", report.accuracy, report.utterances);
    out
}

/// CSV of the row-normalized matrix with full-precision values.
pub fn confusion_csv(report: &EvalReport) -> String {
    let mut out = String::from("true\\predicted");
    for n in &report.class_names {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for (name, row) in report.class_names.iter().zip(report.confusion.normalized()) {
        out.push_str(name);
        match row {
            Some(row) => row.iter().for_each(|x| {
                let _ = write!(out, ",{x:?}");
            }),
            None => report.class_names.iter().for_each(|_| out.push_str(",NA")),
        }
        out.push('\n');
    }
    out
}

/// Class names and normalized rows (`None` for a class with no support).
pub type ConfusionRows = (Vec<String>, Vec<Option<Vec<f64>>>);

/// Parses [`confusion_csv`] output back into class names and rows.
pub fn parse_confusion_csv(text: &str) -> Result<ConfusionRows> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Data("empty confusion file".into()))?;
    let names: Vec<String> = header.split(',').skip(1).map(String::from).collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != names.len() + 1 {
            return Err(Error::Data(format!("confusion row {} has {} cells", i + 1, cells.len())));
        }
        if cells[1..].iter().all(|c| *c == "NA") {
            rows.push(None);
            continue;
        }
        let row = cells[1..]
            .iter()
            .map(|c| c.parse::<f64>().map_err(|e| Error::Data(format!("confusion row {}: {e}", i + 1))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(Some(row));
    }
    Ok((names, rows))
}

/// Writes the text grid to `path` and the CSV matrix next to it with a
/// `.csv` extension. Returns both paths.
pub fn emit_confusion_plot(report: &EvalReport, path: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
    let text_path = path.as_ref().to_path_buf();
    let csv_path = text_path.with_extension("csv");
    fs::write(&text_path, render_confusion(report)).map_err(|e| Error::io(&text_path, e))?;
    fs::write(&csv_path, confusion_csv(report)).map_err(|e| Error::io(&csv_path, e))?;
    Ok((text_path, csv_path))
}
