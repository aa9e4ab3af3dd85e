use super::tensor::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Plain softmax cross-entropy.
    CrossEntropy,
    /// Balanced softmax cross-entropy weighted by the training set's class counts.
    BalancedSoftmax,
}

/// Numerically stable softmax of one logit row.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the
/// logits, `(softmax - onehot) / B`.
pub fn ce_loss(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    check_batch(logits, labels)?;
    softmax_xent(logits, labels, None)
}

/// Balanced softmax cross-entropy:
/// `-log(n_y e^{z_y} / Σ_j n_j e^{z_j})`, with the sum restricted to classes
/// whose count is positive. Absent classes get zero gradient.
///
/// Implemented as cross-entropy on `z_j + ln(n_j / n_max)`, so equal counts
/// reduce to [`ce_loss`] bit for bit.
pub fn bsce_loss(logits: &Matrix, labels: &[usize], class_counts: &[usize]) -> Result<(f64, Matrix)> {
    check_batch(logits, labels)?;
    if class_counts.len() != logits.cols() {
        return Err(Error::Shape(format!(
            "{} class counts for {} classes",
            class_counts.len(),
            logits.cols()
        )));
    }
    if let Some(&y) = labels.iter().find(|&&y| class_counts[y] == 0) {
        return Err(Error::Domain(format!("label {y} has zero class count")));
    }
    let n_max = *class_counts.iter().max().expect("non-empty") as f64;
    let log_prior: Vec<Option<f64>> = class_counts
        .iter()
        .map(|&n| (n > 0).then(|| (n as f64 / n_max).ln()))
        .collect();
    softmax_xent(logits, labels, Some(&log_prior))
}

fn check_batch(logits: &Matrix, labels: &[usize]) -> Result<()> {
    if logits.rows() == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if labels.len() != logits.rows() {
        return Err(Error::Shape(format!(
            "{} labels for {} logit rows",
            labels.len(),
            logits.rows()
        )));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= logits.cols()) {
        return Err(Error::InvalidArgument(format!(
            "label {y} out of range for {} classes",
            logits.cols()
        )));
    }
    if logits.as_slice().iter().any(|z| !z.is_finite()) {
        return Err(Error::Numeric("logits contain NaN or infinity".into()));
    }
    Ok(())
}

/// `log_prior[j] == None` removes class `j` from the normalizer.
fn softmax_xent(logits: &Matrix, labels: &[usize], log_prior: Option<&[Option<f64>]>) -> Result<(f64, Matrix)> {
    let (b, c) = logits.shape();
    let inv_b = 1.0 / b as f64;
    let mut grad = Matrix::zeros(b, c);
    let mut total = 0.0;
    let mut adjusted = vec![0.0; c];
    let mut included = vec![true; c];
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        match log_prior {
            None => adjusted.copy_from_slice(row),
            Some(prior) => {
                for j in 0..c {
                    match prior[j] {
                        Some(p) => {
                            adjusted[j] = row[j] + p;
                            included[j] = true;
                        }
                        None => {
                            adjusted[j] = f64::NEG_INFINITY;
                            included[j] = false;
                        }
                    }
                }
            }
        }
        let m = adjusted
            .iter()
            .zip(&included)
            .filter(|(_, &inc)| inc)
            .map(|(a, _)| *a)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        let g = grad.row_mut(i);
        for j in 0..c {
            if included[j] {
                let e = (adjusted[j] - m).exp();
                g[j] = e;
                s += e;
            }
        }
        total -= adjusted[y] - m - s.ln();
        for j in 0..c {
            if included[j] {
                g[j] = (g[j] / s - if j == y { 1.0 } else { 0.0 }) * inv_b;
            }
        }
    }
    Ok((total * inv_b, grad))
}
