//! Binary confusion matrices, per-class reports, and curve CSV export.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::Label;
use crate::error::{Error, Result};

/// `counts[true][predicted]`, classes 0 (closed) and 1 (open).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionMatrix2 {
    pub counts: [[u64; 2]; 2],
}

impl ConfusionMatrix2 {
    pub fn new(counts: [[u64; 2]; 2]) -> Self {
        ConfusionMatrix2 { counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        self.counts[0][0] + self.counts[1][1]
    }

    pub fn row_sum(&self, class: usize) -> u64 {
        self.counts[class][0] + self.counts[class][1]
    }

    pub fn column_sum(&self, class: usize) -> u64 {
        self.counts[0][class] + self.counts[1][class]
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.trace(), self.total()).0
    }

    pub fn add(&mut self, truth: Label, predicted: Label) {
        self.counts[truth.index()][predicted.index()] += 1;
    }
}

pub fn confusion(labels: &[Label], predictions: &[Label]) -> Result<ConfusionMatrix2> {
    if labels.len() != predictions.len() {
        return Err(Error::Shape(format!(
            "{} labels but {} predictions",
            labels.len(),
            predictions.len()
        )));
    }
    let mut cm = ConfusionMatrix2::default();
    for (&t, &p) in labels.iter().zip(predictions) {
        cm.add(t, p);
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// Set when any ratio had a zero denominator and was reported as 0.
    pub degenerate: bool,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

fn f1_score(precision: f64, recall: f64) -> (f64, bool) {
    let den = precision + recall;
    if den == 0.0 {
        (0.0, true)
    } else {
        (2.0 * precision * recall / den, false)
    }
}

/// Precision, recall and F1 per class. Accuracy is the overall trace
/// fraction and is repeated on both rows.
pub fn per_class_metrics(cm: &ConfusionMatrix2) -> [ClassMetrics; 2] {
    let (accuracy, acc_degenerate) = ratio(cm.trace(), cm.total());
    [0, 1].map(|c| {
        let (precision, dp) = ratio(cm.counts[c][c], cm.column_sum(c));
        let (recall, dr) = ratio(cm.counts[c][c], cm.row_sum(c));
        let (f1, df) = f1_score(precision, recall);
        ClassMetrics {
            accuracy,
            precision,
            recall,
            f1,
            support: cm.row_sum(c),
            degenerate: acc_degenerate || dp || dr || df,
        }
    })
}

/// Unweighted mean of the two per-class rows.
pub fn macro_metrics(cm: &ConfusionMatrix2) -> ClassMetrics {
    let [a, b] = per_class_metrics(cm);
    ClassMetrics {
        accuracy: a.accuracy,
        precision: (a.precision + b.precision) / 2.0,
        recall: (a.recall + b.recall) / 2.0,
        f1: (a.f1 + b.f1) / 2.0,
        support: cm.total(),
        degenerate: a.degenerate || b.degenerate,
    }
}

/// Fixed-width text table: per-class rows, macro row, then the confusion matrix.
pub fn classification_report(cm: &ConfusionMatrix2) -> String {
    let rows = per_class_metrics(cm);
    let m = macro_metrics(cm);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<12}{:>10}{:>11}{:>8}{:>10}{:>10}",
        "Class Label", "Accuracy", "Precision", "Recall", "F1 Score", "Sample #"
    );
    let mut line = |name: &str, r: &ClassMetrics| {
        let _ = writeln!(
            out,
            "{:<12}{:>10.2}{:>11.2}{:>8.2}{:>10.2}{:>10}",
            name, r.accuracy, r.precision, r.recall, r.f1, r.support
        );
    };
    line("0", &rows[0]);
    line("1", &rows[1]);
    line("macro avg", &m);
    out.push('\n');
    let _ = writeln!(out, "Confusion matrix (rows = true, columns = predicted)");
    let _ = writeln!(out, "{:<12}{:>10}{:>10}", "", "Class 0", "Class 1");
    for (c, row) in cm.counts.iter().enumerate() {
        let _ = writeln!(
            out,
            "{:<12}{:>10}{:>10}",
            format!("Class {c}"),
            row[0],
            row[1]
        );
    }
    if rows.iter().any(|r| r.degenerate) {
        let _ = writeln!(
            out,
            "warning: some metrics had zero denominators and are reported as 0"
        );
    }
    out
}

/// Six significant digits in plain decimal notation.
pub fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (5 - magnitude).max(0) as usize;
    let s = format!("{x:.decimals$}");
    // Rounding can carry into a new digit (9.999995 -> 10.00000).
    let carried = s
        .parse::<f64>()
        .is_ok_and(|r| r.abs() >= 10f64.powi(magnitude + 1));
    if carried && decimals > 0 {
        let decimals = decimals - 1;
        return format!("{x:.decimals$}");
    }
    s
}

/// Report as CSV: one row per class plus macro, then the matrix cells.
pub fn report_csv(cm: &ConfusionMatrix2) -> String {
    let rows = per_class_metrics(cm);
    let m = macro_metrics(cm);
    let mut out = String::from("class,accuracy,precision,recall,f1,support,degenerate\n");
    for (name, r) in [("0", &rows[0]), ("1", &rows[1]), ("macro", &m)] {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            name,
            sig6(r.accuracy),
            sig6(r.precision),
            sig6(r.recall),
            sig6(r.f1),
            r.support,
            r.degenerate
        );
    }
    out.push_str("true,pred_0,pred_1\n");
    for (c, row) in cm.counts.iter().enumerate() {
        let _ = writeln!(out, "{},{},{}", c, row[0], row[1]);
    }
    out
}

/// Per-epoch training summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
}

pub const CURVE_HEADER: &str = "epoch,train_loss,train_acc,test_loss,test_acc";

pub fn curves_csv(records: &[EpochRecord]) -> String {
    let mut out = format!("{CURVE_HEADER}\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.epoch,
            sig6(r.train_loss),
            sig6(r.train_accuracy),
            sig6(r.test_loss),
            sig6(r.test_accuracy)
        );
    }
    out
}

pub fn curve_export(records: &[EpochRecord], path: &Path) -> Result<()> {
    fs::write(path, curves_csv(records)).map_err(|e| Error::io(path, e))
}

/// Parses a curve CSV back into records.
pub fn parse_curves(text: &str) -> Result<Vec<EpochRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(CURVE_HEADER) {
        return Err(Error::Config("curve CSV has an unexpected header".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::Config(format!("malformed curve row {line:?}"));
            if f.len() != 5 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            Ok(EpochRecord {
                epoch: f[0].parse().map_err(|_| bad())?,
                train_loss: num(f[1])?,
                train_accuracy: num(f[2])?,
                test_loss: num(f[3])?,
                test_accuracy: num(f[4])?,
            })
        })
        .collect()
}
