use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn log_softmax_rows(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    for i in 0..logits.rows() {
        let lse = log_sum_exp(logits.row(i));
        out.row_mut(i).iter_mut().for_each(|v| *v -= lse);
    }
    out
}

pub fn softmax_rows(logits: &Tensor) -> Tensor {
    log_softmax_rows(logits).map(f64::exp)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Mean cross-entropy over the batch and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let targets: Vec<Option<usize>> = labels.iter().map(|&l| Some(l)).collect();
    masked_cross_entropy(logits, &targets, labels.len())
}

/// Cross-entropy summed over rows with a target and divided by `denom`.
///
/// Rows whose target is `None` contribute neither loss nor gradient; they
/// still count in `denom` when the caller passes the full batch size.
pub fn masked_cross_entropy(logits: &Tensor, targets: &[Option<usize>], denom: usize) -> Result<(f64, Tensor)> {
    let (n, k) = (logits.rows(), logits.cols());
    if targets.len() != n {
        return Err(Error::Dimension(format!(
            "{} targets for {n} logit rows",
            targets.len()
        )));
    }
    let mut grad = Tensor::zeros(&[n, k]);
    if denom == 0 {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / denom as f64;
    let mut total = 0.0;
    for (i, target) in targets.iter().enumerate() {
        let Some(t) = *target else { continue };
        if t >= k {
            return Err(Error::Index(format!("label {t} with {k} classes")));
        }
        let row = logits.row(i);
        let lse = log_sum_exp(row);
        total += lse - row[t];
        for (j, g) in grad.row_mut(i).iter_mut().enumerate() {
            let p = (row[j] - lse).exp();
            *g = scale * (p - if j == t { 1.0 } else { 0.0 });
        }
    }
    let loss = total * scale;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("cross-entropy is {loss}")));
    }
    Ok((loss, grad))
}

/// Mean binary cross-entropy on logits against 0/1 targets, with gradient.
pub fn bce_with_logits(logits: &[f64], targets: &[f64]) -> (f64, Vec<f64>) {
    let n = logits.len().max(1) as f64;
    let mut total = 0.0;
    let grad = logits
        .iter()
        .zip(targets)
        .map(|(&x, &y)| {
            // log(1 + e^x) - y·x, evaluated stably
            total += x.max(0.0) - x * y + (-x.abs()).exp().ln_1p();
            (sigmoid(x) - y) / n
        })
        .collect();
    (total / n, grad)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean squared error over all entries, with gradient w.r.t. `pred`.
pub fn mse(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if pred.shape() != target.shape() {
        return Err(Error::Dimension(format!(
            "mse {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.len().max(1) as f64;
    let mut grad = pred.clone();
    let mut total = 0.0;
    for (g, &t) in grad.data_mut().iter_mut().zip(target.data()) {
        let d = *g - t;
        total += d * d;
        *g = 2.0 * d / n;
    }
    Ok((total / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_two_class() {
        let logits = Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap();
        let (loss, _) = softmax_cross_entropy(&logits, &[0]).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn saturated_logit() {
        let logits = Tensor::matrix(1, 2, vec![50.0, 0.0]).unwrap();
        let (loss, _) = softmax_cross_entropy(&logits, &[0]).unwrap();
        assert!((0.0..1e-9).contains(&loss));
    }

    #[test]
    fn three_class_against_extended_precision_sum() {
        // -log softmax([1,2,3])[2] = log(e^1 + e^2 + e^3) - 3; the constant comes
        // from a 40-digit evaluation.
        let oracle = (1.0f64 + (-1.0f64).exp() + (-2.0f64).exp()).ln();
        let logits = Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let (loss, grad) = softmax_cross_entropy(&logits, &[2]).unwrap();
        assert!((loss - oracle).abs() < 1e-15);
        assert!((oracle - 0.407_605_964_444_380_3).abs() < 1e-15);
        assert!(grad.data().iter().sum::<f64>().abs() < 1e-15);
    }

    #[test]
    fn label_out_of_range() {
        let logits = Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap();
        assert!(matches!(softmax_cross_entropy(&logits, &[2]), Err(Error::Index(_))));
    }

    #[test]
    fn masked_rows_contribute_nothing() {
        let logits = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 3.0]).unwrap();
        let (loss, grad) = masked_cross_entropy(&logits, &[None, Some(1)], 2).unwrap();
        let single = (1.0 + (-3.0f64).exp()).ln();
        assert!((loss - single / 2.0).abs() < 1e-15);
        assert_eq!(&grad.data()[..2], &[0.0, 0.0]);
    }

    #[test]
    fn bce_matches_definition() {
        let (loss, grad) = bce_with_logits(&[0.3, -1.2], &[1.0, 0.0]);
        let p0 = sigmoid(0.3);
        let p1 = sigmoid(-1.2);
        let expected = -(p0.ln() + (1.0 - p1).ln()) / 2.0;
        assert!((loss - expected).abs() < 1e-14);
        assert!((grad[0] - (p0 - 1.0) / 2.0).abs() < 1e-15);
    }
}
