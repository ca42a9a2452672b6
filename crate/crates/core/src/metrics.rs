//! Accuracy, model consistency and table-cell summaries.

use crate::dataset::Dataset;
use crate::error::{invalid, Error, Result};
use crate::rrm::IterationRecord;
use crate::shift::DecisionFunction;

/// Sign with `sign(0) = +1`.
#[inline]
pub fn sign(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Fraction of rows whose predicted sign matches the label.
pub fn accuracy(model: &dyn DecisionFunction, data: &Dataset) -> Result<f64> {
    if model.raw_width() != data.n_features() {
        return Err(invalid(format!(
            "model scores {} features, data has {}",
            model.raw_width(),
            data.n_features()
        )));
    }
    let scores = model.scores(data);
    let correct = scores
        .iter()
        .zip(data.labels())
        .filter(|(f, y)| sign(**f) == **y)
        .count();
    Ok(correct as f64 / data.n_rows() as f64)
}

/// Cosine similarity of two explicit `[w, b]` vectors.
pub fn consistency_linear(w1: &[f64], w2: &[f64]) -> Result<f64> {
    if w1.len() != w2.len() {
        return Err(invalid(format!("widths differ: {} vs {}", w1.len(), w2.len())));
    }
    let dot: f64 = w1.iter().zip(w2).map(|(a, b)| a * b).sum();
    let n1 = w1.iter().map(|v| v * v).sum::<f64>().sqrt();
    let n2 = w2.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n1 == 0.0 || n2 == 0.0 {
        return Err(Error::UndefinedConsistency);
    }
    Ok((dot / (n1 * n2)).clamp(-1.0, 1.0))
}

/// One table cell: post-burn-in means pooled over every `(trial, t)` with
/// `t > burn_in`, and the population standard deviation of the per-trial
/// means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_consistency: f64,
    pub std_consistency: f64,
    pub trials: usize,
    pub burn_in: usize,
}

/// Per-trial post-burn-in means `(accuracy, consistency)`. Non-finite
/// consistency cells (the first deployment has no predecessor) are skipped.
pub fn trial_means(records: &[IterationRecord], burn_in: usize) -> Result<(f64, f64)> {
    let post: Vec<&IterationRecord> = records.iter().filter(|r| r.t > burn_in).collect();
    if post.is_empty() {
        return Err(invalid(format!(
            "trace of length {} has nothing after burn-in {burn_in}",
            records.len()
        )));
    }
    let acc = post.iter().map(|r| r.accuracy).sum::<f64>() / post.len() as f64;
    let cons: Vec<f64> = post
        .iter()
        .map(|r| r.consistency)
        .filter(|c| c.is_finite())
        .collect();
    let cons_mean = if cons.is_empty() {
        f64::NAN
    } else {
        cons.iter().sum::<f64>() / cons.len() as f64
    };
    Ok((acc, cons_mean))
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Summarizes a set of traces (one per trial).
pub fn summarize(traces: &[&[IterationRecord]], burn_in: usize) -> Result<Summary> {
    if traces.is_empty() {
        return Err(invalid("no traces to summarize"));
    }
    let mut acc_cells = Vec::new();
    let mut cons_cells = Vec::new();
    let mut acc_means = Vec::with_capacity(traces.len());
    let mut cons_means = Vec::with_capacity(traces.len());
    for records in traces {
        let (a, c) = trial_means(records, burn_in)?;
        acc_means.push(a);
        cons_means.push(c);
        for r in records.iter().filter(|r| r.t > burn_in) {
            acc_cells.push(r.accuracy);
            if r.consistency.is_finite() {
                cons_cells.push(r.consistency);
            }
        }
    }
    let mean_accuracy = acc_cells.iter().sum::<f64>() / acc_cells.len() as f64;
    let mean_consistency = if cons_cells.is_empty() {
        f64::NAN
    } else {
        cons_cells.iter().sum::<f64>() / cons_cells.len() as f64
    };
    Ok(Summary {
        mean_accuracy,
        std_accuracy: mean_std(&acc_means).1,
        mean_consistency,
        std_consistency: mean_std(&cons_means).1,
        trials: traces.len(),
        burn_in,
    })
}
