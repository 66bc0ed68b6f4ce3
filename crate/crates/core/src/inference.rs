//! Similarity-based prediction and accuracy.

use crate::autodiff::cosine_forward;
use crate::error::{PspError, Result};
use crate::prompt::{class_means, LabeledSet};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// `M × C` class probabilities.
    pub probs: Tensor,
    /// Highest-probability class per row, lowest index on ties.
    pub argmax: Vec<usize>,
}

/// Softmax over all classes of `sim(anchor, prototype) / tau`.
pub fn predict(anchors: &Tensor, prototypes: &Tensor, tau: f64) -> Result<Prediction> {
    if prototypes.rows() == 0 {
        return Err(PspError::Contract("prediction needs at least one prototype".into()));
    }
    if !(tau > 0.0) {
        return Err(PspError::Parameter(format!("tau must be positive, got {tau}")));
    }
    let mut probs = cosine_forward(anchors, prototypes)?;
    let mut argmax = Vec::with_capacity(probs.rows());
    for r in 0..probs.rows() {
        let row = probs.row_mut(r);
        let mut best = 0;
        for (j, v) in row.iter().enumerate() {
            if *v > row[best] {
                best = j;
            }
        }
        argmax.push(best);
        let max = row[best] / tau;
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v / tau - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Ok(Prediction { probs, argmax })
}

/// Fraction of rows whose argmax equals the truth.
pub fn evaluate(pred: &Prediction, truth: &[usize]) -> Result<f64> {
    if pred.argmax.len() != truth.len() {
        return Err(PspError::Contract(format!(
            "{} predictions for {} labels",
            pred.argmax.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Ok(0.0);
    }
    let hits = pred.argmax.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Labeled-mean GCN embeddings used directly as prototypes (no tuning).
pub fn np_prototypes(z2: &Tensor, labeled: &LabeledSet, n_classes: usize) -> Result<Tensor> {
    class_means(z2, labeled, n_classes)
}
