//! Binary confusion matrix and the metrics derived from it.
//!
//! A metric whose denominator is zero is an error, never a silent 0 or NaN:
//! the tuning objective would otherwise reward degenerate models.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        ConfusionMatrix { tp, fp, tn, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn record(&mut self, predicted_positive: bool, actual_positive: bool) {
        match (predicted_positive, actual_positive) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn accuracy(&self) -> Result<f64> {
        accuracy(self)
    }

    pub fn precision(&self) -> Result<f64> {
        precision(self)
    }

    pub fn recall(&self) -> Result<f64> {
        recall(self)
    }

    pub fn fdr(&self) -> Result<f64> {
        fdr(self)
    }

    pub fn f1(&self) -> Result<f64> {
        f1(self)
    }
}

/// Tallies predictions against ground truth for the designated positive label.
pub fn confusion<L: PartialEq + Copy>(
    predicted: &[L],
    actual: &[L],
    positive: L,
) -> Result<ConfusionMatrix> {
    if predicted.len() != actual.len() {
        return Err(Error::dims(
            format!("{} predictions", actual.len()),
            predicted.len(),
        ));
    }
    if predicted.is_empty() {
        return Err(Error::InsufficientData {
            required: 1,
            actual: 0,
        });
    }
    let mut distinct: Vec<L> = Vec::with_capacity(2);
    for &l in predicted.iter().chain(actual) {
        if !distinct.contains(&l) {
            distinct.push(l);
            if distinct.len() > 2 {
                return Err(Error::NonBinaryLabels(distinct.len()));
            }
        }
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &a) in predicted.iter().zip(actual) {
        cm.record(p == positive, a == positive);
    }
    Ok(cm)
}

fn ratio(num: u64, den: u64, metric: &'static str) -> Result<f64> {
    if den == 0 {
        Err(Error::UndefinedMetric { metric })
    } else {
        Ok(num as f64 / den as f64)
    }
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    ratio(cm.tp + cm.tn, cm.total(), "accuracy")
}

pub fn precision(cm: &ConfusionMatrix) -> Result<f64> {
    ratio(cm.tp, cm.tp + cm.fp, "precision")
}

/// False discovery rate, `FP / (FP + TP)`.
pub fn fdr(cm: &ConfusionMatrix) -> Result<f64> {
    ratio(cm.fp, cm.tp + cm.fp, "fdr")
}

pub fn recall(cm: &ConfusionMatrix) -> Result<f64> {
    ratio(cm.tp, cm.tp + cm.fn_, "recall")
}

/// `TP / (TP + (FP + FN)/2)`, the harmonic mean of precision and recall.
pub fn f1(cm: &ConfusionMatrix) -> Result<f64> {
    let den = 2 * cm.tp + cm.fp + cm.fn_;
    ratio(2 * cm.tp, den, "f1")
}
