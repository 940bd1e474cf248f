//! Confusion counts and the binary classification scores derived from them.
//! Class 1 (COVID-positive) is the positive class.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::hard_labels;
use crate::nn::loss::{binary_cross_entropy, check_labels};
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        Self { tp, tn, fp, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

pub fn confusion(predicted: &[u8], truth: &[u8]) -> Result<ConfusionCounts> {
    if predicted.len() != truth.len() {
        return Err(Error::domain(format!(
            "{} predictions for {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::domain("confusion counts of an empty set"));
    }
    check_labels(predicted)?;
    check_labels(truth)?;
    let mut c = ConfusionCounts::default();
    for (&p, &t) in predicted.iter().zip(truth) {
        match (p, t) {
            (1, 1) => c.tp += 1,
            (0, 0) => c.tn += 1,
            (1, 0) => c.fp += 1,
            _ => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Which scores hit a `0/0` and were reported as 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Degenerate {
    pub precision: bool,
    pub recall: bool,
    pub specificity: bool,
    pub f1: bool,
}

impl Degenerate {
    pub fn any(&self) -> bool {
        self.precision || self.recall || self.specificity || self.f1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub counts: ConfusionCounts,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub sensitivity: f64,
    pub accuracy: f64,
    pub f1: f64,
    /// Set when the report was built from probabilities.
    pub log_loss: Option<f64>,
    pub degenerate: Degenerate,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn compute_metrics(c: &ConfusionCounts) -> Result<MetricReport> {
    if c.total() == 0 {
        return Err(Error::domain("metrics of all-zero confusion counts"));
    }
    let (precision, dp) = ratio(c.tp, c.tp + c.fp);
    let (recall, dr) = ratio(c.tp, c.tp + c.fn_);
    let (specificity, ds) = ratio(c.tn, c.tn + c.fp);
    let accuracy = (c.tp + c.tn) as f64 / c.total() as f64;
    let (f1, df) = if precision + recall == 0.0 {
        (0.0, true)
    } else {
        (2.0 * precision * recall / (precision + recall), false)
    };
    Ok(MetricReport {
        counts: *c,
        precision,
        recall,
        specificity,
        sensitivity: recall,
        accuracy,
        f1,
        log_loss: None,
        degenerate: Degenerate {
            precision: dp,
            recall: dr,
            specificity: ds,
            f1: df,
        },
    })
}

/// Full report from class-1 probabilities, thresholded at 0.5.
pub fn evaluate<T: Scalar>(probabilities: &[T], truth: &[u8]) -> Result<MetricReport> {
    let counts = confusion(&hard_labels(probabilities), truth)?;
    let mut report = compute_metrics(&counts)?;
    report.log_loss = Some(binary_cross_entropy(probabilities, truth)?);
    Ok(report)
}

pub const CSV_HEADER: &str = "split,precision,recall,specificity,accuracy,f1,log_loss";

impl MetricReport {
    /// One CSV row with 6-decimal fixed formatting; `log_loss` is empty when
    /// unknown.
    pub fn csv_row(&self, split: &str) -> String {
        let loss = self.log_loss.map(|l| format!("{l:.6}")).unwrap_or_default();
        format!(
            "{split},{:.6},{:.6},{:.6},{:.6},{:.6},{loss}",
            self.precision, self.recall, self.specificity, self.accuracy, self.f1
        )
    }

    pub fn write_csv<W: Write>(&self, mut w: W, split: &str) -> std::io::Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        writeln!(w, "{}", self.csv_row(split))
    }
}
