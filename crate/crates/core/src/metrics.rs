//! Per-class diagnostics: confusion counts, precision, recall, mean recall.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `counts[i * L + j]` = examples of true class `i` predicted as `j`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let classes = rows.len();
        if rows.iter().any(|r| r.len() != classes) {
            return Err(Error::invalid("confusion matrix must be square"));
        }
        Ok(ConfusionMatrix {
            classes,
            counts: rows.concat(),
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn record(&mut self, truth: usize, pred: usize) -> Result<()> {
        if truth >= self.classes || pred >= self.classes {
            return Err(Error::invalid(format!(
                "class index out of range: truth {} pred {} for {} classes",
                truth + 1,
                pred + 1,
                self.classes
            )));
        }
        self.counts[truth * self.classes + pred] += 1;
        Ok(())
    }

    /// Adds another matrix's counts (shard merge).
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::DimensionMismatch {
                expected: self.classes,
                actual: other.classes,
            });
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Ok(())
    }

    /// Per-class true counts (row sums).
    pub fn row_sums(&self) -> Vec<u64> {
        self.counts
            .chunks(self.classes.max(1))
            .map(|r| r.iter().sum())
            .collect()
    }

    /// Per-class predicted counts (column sums).
    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.classes)
            .map(|j| (0..self.classes).map(|i| self.get(i, j)).sum())
            .collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.classes).map(|i| self.get(i, i)).sum()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.correct() as f64 / total as f64
        }
    }
}

/// Counts `(truth, pred)` pairs; labels are 0-based.
pub fn confusion(preds: &[usize], truths: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if preds.len() != truths.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} truths",
            preds.len(),
            truths.len()
        )));
    }
    let mut cm = ConfusionMatrix::zeros(classes);
    for (&p, &t) in preds.iter().zip(truths) {
        cm.record(t, p)?;
    }
    Ok(cm)
}

/// Per-class precision and recall. Undefined ratios (0/0) are reported as 0
/// with the matching `*_defined` flag cleared.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub precision_defined: Vec<bool>,
    pub recall_defined: Vec<bool>,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, false)
    } else {
        (num as f64 / den as f64, true)
    }
}

pub fn per_class_precision_recall(cm: &ConfusionMatrix) -> PrecisionRecall {
    let rows = cm.row_sums();
    let cols = cm.col_sums();
    let (precision, precision_defined) = (0..cm.classes).map(|l| ratio(cm.get(l, l), cols[l])).unzip();
    let (recall, recall_defined) = (0..cm.classes).map(|l| ratio(cm.get(l, l), rows[l])).unzip();
    PrecisionRecall {
        precision,
        recall,
        precision_defined,
        recall_defined,
    }
}

/// Unweighted mean of per-class recall (balanced accuracy).
pub fn mean_recall(cm: &ConfusionMatrix) -> Result<f64> {
    let rows = cm.row_sums();
    if let Some(l) = rows.iter().position(|&r| r == 0) {
        return Err(Error::UndefinedMetric(format!(
            "mean recall: class {} has no true examples",
            l + 1
        )));
    }
    if rows.is_empty() {
        return Err(Error::UndefinedMetric("mean recall over zero classes".into()));
    }
    let pr = per_class_precision_recall(cm);
    Ok(pr.recall.iter().sum::<f64>() / rows.len() as f64)
}

/// Per-class metrics of one evaluated set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub n_true: Vec<u64>,
    pub n_pred: Vec<u64>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub precision_defined: Vec<bool>,
    /// `None` when some class has no true examples.
    pub mean_recall: Option<f64>,
    pub accuracy: f64,
}

impl ClassReport {
    pub fn from_confusion(cm: &ConfusionMatrix) -> Self {
        let pr = per_class_precision_recall(cm);
        ClassReport {
            n_true: cm.row_sums(),
            n_pred: cm.col_sums(),
            precision: pr.precision,
            recall: pr.recall,
            precision_defined: pr.precision_defined,
            mean_recall: mean_recall(cm).ok(),
            accuracy: cm.accuracy(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.n_true.iter().all(|&n| n == 0)
    }
}

/// Quality of pseudo-labels against hidden ground truth.
///
/// `pairs` holds `(pseudo label, true label)`.
pub fn pseudo_label_quality(pairs: &[(usize, usize)], classes: usize) -> Result<ClassReport> {
    let (preds, truths): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
    Ok(ClassReport::from_confusion(&confusion(&preds, &truths, classes)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Test,
    Unlabeled,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Test => "test",
            Split::Unlabeled => "unlabeled",
        }
    }
}

pub const METRICS_HEADER: &str = "generation,class,n_true,n_pred,precision,recall,split,precision_defined";

/// Builder for the metrics CSV.
///
/// One row per class (1-based) and split, plus a summary row per generation
/// and split whose `class` is `mean` and whose `recall` is the mean recall.
#[derive(Clone, Debug, Default)]
pub struct MetricsCsv {
    out: String,
}

impl MetricsCsv {
    pub fn new() -> Self {
        MetricsCsv {
            out: format!("{METRICS_HEADER}\n"),
        }
    }

    pub fn add(&mut self, generation: usize, split: Split, report: &ClassReport) {
        let s = split.as_str();
        for l in 0..report.n_true.len() {
            writeln!(
                self.out,
                "{generation},{},{},{},{:.6},{:.6},{s},{}",
                l + 1,
                report.n_true[l],
                report.n_pred[l],
                report.precision[l],
                report.recall[l],
                u8::from(report.precision_defined[l]),
            )
            .unwrap();
        }
        let classes = report.precision.len().max(1) as f64;
        let mean_precision = report.precision.iter().sum::<f64>() / classes;
        let mean_recall = report.mean_recall.unwrap_or(0.0);
        writeln!(
            self.out,
            "{generation},mean,{},{},{mean_precision:.6},{mean_recall:.6},{s},{}",
            report.n_true.iter().sum::<u64>(),
            report.n_pred.iter().sum::<u64>(),
            u8::from(report.mean_recall.is_some()),
        )
        .unwrap();
    }

    pub fn finish(self) -> String {
        self.out
    }
}
