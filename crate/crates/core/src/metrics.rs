//! Accuracy and normalized-entropy metrics plus the per-epoch train log.

use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)] // trait methods back f64 math under no_std
use num_traits::Float;

/// Which split a log entry was measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Eval => "eval",
        }
    }
}

/// One measured point of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogEntry {
    pub epoch: usize,
    pub split: Split,
    pub accuracy: f64,
    pub entropy: f64,
}

/// Per-epoch accuracy/entropy curves of one training run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub entries: Vec<TrainLogEntry>,
}

impl TrainLog {
    pub fn push(&mut self, epoch: usize, split: Split, accuracy: f64, entropy: f64) {
        self.entries.push(TrainLogEntry {
            epoch,
            split,
            accuracy,
            entropy,
        });
    }

    /// Entries of one split in epoch order.
    pub fn split(&self, split: Split) -> impl Iterator<Item = &TrainLogEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Renders the `epoch,split,accuracy,entropy` CSV.
    pub fn to_csv(&self) -> String {
        use core::fmt::Write;
        let mut out = String::from("epoch,split,accuracy,entropy\n");
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{},{},{:.6},{:.6}",
                e.epoch,
                e.split.as_str(),
                e.accuracy,
                e.entropy
            );
        }
        out
    }
}

/// Fraction of equal entries.
pub fn pairwise_accuracy(predictions: &[bool], labels: &[bool]) -> f64 {
    assert_eq!(predictions.len(), labels.len(), "length mismatch");
    assert!(!predictions.is_empty(), "empty prediction vector");
    let correct = predictions
        .iter()
        .zip(labels.iter())
        .filter(|(p, l)| p == l)
        .count();
    correct as f64 / predictions.len() as f64
}

/// Per-query candidate decisions for the listwise metric.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryDecisions {
    pub predicted: Vec<bool>,
    pub labels: Vec<bool>,
}

/// Listwise retrieval accuracy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ListwiseAccuracy {
    /// Mean over all candidate decisions (primary).
    pub per_candidate: f64,
    /// Fraction of queries with a perfect candidate partition (secondary).
    pub exact_set: f64,
}

pub fn listwise_accuracy(per_query: &[QueryDecisions]) -> ListwiseAccuracy {
    assert!(!per_query.is_empty(), "no queries");
    let mut correct = 0usize;
    let mut total = 0usize;
    let mut exact = 0usize;
    for q in per_query {
        assert_eq!(q.predicted.len(), q.labels.len(), "candidate mismatch");
        let ok = q
            .predicted
            .iter()
            .zip(q.labels.iter())
            .filter(|(p, l)| p == l)
            .count();
        correct += ok;
        total += q.predicted.len();
        if ok == q.predicted.len() {
            exact += 1;
        }
    }
    ListwiseAccuracy {
        per_candidate: correct as f64 / total as f64,
        exact_set: exact as f64 / per_query.len() as f64,
    }
}

/// Mean binary prediction entropy normalized to [0,1] by ln 2.
///
/// Inputs are confidences in (0,1); they are clamped away from {0,1} before
/// taking logs.
pub fn normalized_entropy(probabilities: &[f64]) -> f64 {
    assert!(!probabilities.is_empty(), "no probabilities");
    let sum: f64 = probabilities
        .iter()
        .map(|&p| {
            let p = p.clamp(1e-12, 1.0 - 1e-12);
            -(p * p.ln() + (1.0 - p) * (1.0 - p).ln())
        })
        .sum();
    sum / probabilities.len() as f64 / core::f64::consts::LN_2
}
