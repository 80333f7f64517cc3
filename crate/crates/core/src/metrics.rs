//! Accuracy, macro F1 and one-vs-rest macro AUROC.
//!
//! Conventions: any 0/0 precision, recall or F1 is 0 and still counts toward
//! the macro mean; AUROC counts tied scores as half a correct ordering and
//! skips classes that have no positives or no negatives.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::bundle::Split;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: String,
    pub split: Split,
    pub accuracy: f64,
    pub macro_auroc: f64,
    pub macro_f1: f64,
    pub n_samples: usize,
    pub per_class_f1: Vec<f64>,
}

impl MetricsReport {
    /// Builds a report from softmax scores; predictions are the row argmax.
    pub fn from_scores(
        task: &str,
        split: Split,
        scores: &[Vec<f64>],
        labels: &[usize],
        n_classes: usize,
    ) -> Result<Self> {
        let preds: Vec<usize> = scores.iter().map(|s| argmax(s)).collect();
        let (macro_f1, per_class_f1) = macro_f1(&preds, labels, n_classes)?;
        Ok(Self {
            task: task.to_string(),
            split,
            accuracy: accuracy(&preds, labels)?,
            macro_auroc: macro_auroc(scores, labels, n_classes)?,
            macro_f1,
            n_samples: labels.len(),
            per_class_f1,
        })
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::dim(format!("{a} predictions for {b} labels")));
    }
    if a == 0 {
        return Err(Error::Data("no samples to score".into()));
    }
    Ok(())
}

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    check_lengths(predictions.len(), labels.len())?;
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Returns the unweighted mean F1 over all `n_classes` and the per-class values.
pub fn macro_f1(
    predictions: &[usize],
    labels: &[usize],
    n_classes: usize,
) -> Result<(f64, Vec<f64>)> {
    check_lengths(predictions.len(), labels.len())?;
    let mut tp = vec![0usize; n_classes];
    let mut fp = vec![0usize; n_classes];
    let mut fn_ = vec![0usize; n_classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        for &i in &[p, l] {
            if i >= n_classes {
                return Err(Error::Index {
                    index: i,
                    len: n_classes,
                });
            }
        }
        if p == l {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[l] += 1;
        }
    }
    let per_class: Vec<f64> = (0..n_classes)
        // Harmonic mean of precision and recall, reduced to counts so it is
        // a single rounding: 2tp / (2tp + fp + fn), zero when tp is zero.
        .map(|c| ratio(2 * tp[c], 2 * tp[c] + fp[c] + fn_[c]))
        .collect();
    let mean = per_class.iter().sum::<f64>() / n_classes as f64;
    Ok((mean, per_class))
}

/// One-vs-rest AUROC of a single score column via the rank-sum statistic
/// with mid-ranks for ties. `None` when the class lacks positives or negatives.
pub fn binary_auroc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    // Sum of 1-based mid-ranks of the positives; doubled to stay integral.
    let mut rank_sum_x2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid_x2 = (i + 1 + j + 1) as u64;
        let pos_in_run = order[i..=j].iter().filter(|&&k| positive[k]).count() as u64;
        rank_sum_x2 += mid_x2 * pos_in_run;
        i = j + 1;
    }
    let (p, n) = (n_pos as u64, n_neg as u64);
    let u_x2 = rank_sum_x2 - p * (p + 1);
    Some(u_x2 as f64 / (2 * p * n) as f64)
}

/// Unweighted mean of one-vs-rest AUROC over the classes that have both
/// positives and negatives.
pub fn macro_auroc(scores: &[Vec<f64>], labels: &[usize], n_classes: usize) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    for (i, row) in scores.iter().enumerate() {
        if row.len() != n_classes {
            return Err(Error::dim(format!(
                "score row {i} has {} entries for {n_classes} classes",
                row.len()
            )));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("score row {i}")));
        }
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::Index {
            index: bad,
            len: n_classes,
        });
    }
    let mut total = 0.0;
    let mut evaluable = 0;
    let mut column = vec![0.0; labels.len()];
    let mut positive = vec![false; labels.len()];
    for c in 0..n_classes {
        for (i, row) in scores.iter().enumerate() {
            column[i] = row[c];
            positive[i] = labels[i] == c;
        }
        if let Some(a) = binary_auroc(&column, &positive) {
            total += a;
            evaluable += 1;
        }
    }
    if evaluable == 0 {
        return Err(Error::UndefinedMetric(
            "no class has both positive and negative samples".into(),
        ));
    }
    Ok(total / evaluable as f64)
}
