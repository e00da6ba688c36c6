//! Confusion matrices and accuracy / precision / recall / F1.
//!
//! Rates with a zero denominator are defined as 0.

use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Rows are actual classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != classes * classes {
            return Err(Error::shape("confusion matrix", &[classes, classes], &[counts.len()]));
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    pub fn from_predictions(classes: usize, actual: &[usize], predicted: &[usize]) -> Result<Self> {
        if actual.len() != predicted.len() {
            return Err(Error::shape("confusion matrix", &[actual.len()], &[predicted.len()]));
        }
        let mut cm = Self::new(classes);
        for (&a, &p) in actual.iter().zip(predicted) {
            cm.record(a, p)?;
        }
        Ok(cm)
    }

    pub fn record(&mut self, actual: usize, predicted: usize) -> Result<()> {
        let bad = actual.max(predicted);
        if bad >= self.classes {
            return Err(Error::LabelRange {
                label: bad,
                classes: self.classes,
            });
        }
        self.counts[actual * self.classes + predicted] += 1;
        Ok(())
    }

    /// Element-wise sum, for merging shards.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::shape("merge", &[self.classes], &[other.classes]));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, actual: usize, predicted: usize) -> u64 {
        self.counts[actual * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

impl MetricsReport {
    pub fn from_confusion(cm: ConfusionMatrix) -> Self {
        let k = cm.classes();
        let mut precision = Vec::with_capacity(k);
        let mut recall = Vec::with_capacity(k);
        let mut f1 = Vec::with_capacity(k);
        let mut correct = 0;
        for c in 0..k {
            let tp = cm.get(c, c);
            correct += tp;
            let predicted: u64 = (0..k).map(|a| cm.get(a, c)).sum();
            let actual: u64 = (0..k).map(|p| cm.get(c, p)).sum();
            let p = ratio(tp, predicted);
            let r = ratio(tp, actual);
            let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            precision.push(p);
            recall.push(r);
            f1.push(f);
        }
        let mean = |v: &[f64]| {
            if v.is_empty() {
                0.0
            } else {
                v.iter().sum::<f64>() / v.len() as f64
            }
        };
        MetricsReport {
            accuracy: ratio(correct, cm.total()),
            macro_precision: mean(&precision),
            macro_recall: mean(&recall),
            macro_f1: mean(&f1),
            precision,
            recall,
            f1,
            confusion: cm,
        }
    }

    pub fn from_predictions(classes: usize, actual: &[usize], predicted: &[usize]) -> Result<Self> {
        Ok(Self::from_confusion(ConfusionMatrix::from_predictions(
            classes, actual, predicted,
        )?))
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_case() {
        let cm = ConfusionMatrix::from_counts(2, vec![50, 10, 5, 35]).unwrap();
        let r = MetricsReport::from_confusion(cm);
        assert_eq!(r.accuracy, 0.85);
        assert_eq!(r.precision, vec![50.0 / 55.0, 35.0 / 45.0]);
        assert_eq!(r.recall, vec![50.0 / 60.0, 35.0 / 40.0]);
        assert_eq!(r.macro_f1, (r.f1[0] + r.f1[1]) / 2.0);
    }

    #[test]
    fn perfect_predictions() {
        let y = [0, 1, 2, 1, 0];
        let r = MetricsReport::from_predictions(3, &y, &y).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.macro_precision, 1.0);
        assert_eq!(r.macro_recall, 1.0);
        assert_eq!(r.macro_f1, 1.0);
    }

    #[test]
    fn absent_class_counts_as_zero() {
        let y = [0, 1, 0, 1];
        let r = MetricsReport::from_predictions(3, &y, &y).unwrap();
        assert_eq!(r.f1, vec![1.0, 1.0, 0.0]);
        assert_eq!(r.macro_f1, 2.0 / 3.0);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.7, 0.7]), 1);
    }

    #[test]
    fn out_of_range_label() {
        assert!(ConfusionMatrix::from_predictions(2, &[2], &[0]).is_err());
    }
}
