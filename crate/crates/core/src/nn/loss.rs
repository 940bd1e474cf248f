use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// Probabilities are clipped to `[BCE_EPSILON, 1 - BCE_EPSILON]` before the log.
pub const BCE_EPSILON: f64 = 1e-7;

pub(crate) fn check_labels(labels: &[u8]) -> Result<()> {
    match labels.iter().find(|&&g| g > 1) {
        Some(g) => Err(Error::domain(format!("label {g} is not 0 or 1"))),
        None => Ok(()),
    }
}

/// Mean binary log loss, natural log, accumulated in `f64`.
pub fn binary_cross_entropy<T: Scalar>(predictions: &[T], labels: &[u8]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::domain("log loss of an empty set"));
    }
    check_labels(labels)?;
    let total: f64 = predictions
        .iter()
        .zip(labels)
        .map(|(&p, &g)| {
            let p = p.as_f64().clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
            if g == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(total / predictions.len() as f64)
}

/// Gradient of the mean loss w.r.t. the logits of a sigmoid output,
/// `(p - g) / K`. This is the derivative of the unclipped loss; it stays
/// informative when the sigmoid saturates.
pub fn bce_logit_gradient<T: Scalar>(probabilities: &[T], labels: &[u8]) -> Vec<T> {
    let k = T::from_usize(probabilities.len()).expect("batch size fits in a float");
    probabilities
        .iter()
        .zip(labels)
        .map(|(&p, &g)| (p - T::from_u8(g).expect("label is 0 or 1")) / k)
        .collect()
}
