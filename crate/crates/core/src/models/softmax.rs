use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{invalid, Result};
use crate::ot::ProbabilityVector;

/// `exp(z_c / tau) / sum exp(z_c' / tau)`, evaluated after subtracting the
/// maximum logit.
pub fn tempered_softmax(logits: ArrayView1<f64>, tau: f64) -> Result<ProbabilityVector> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(invalid(format!("temperature must be positive, got {tau}")));
    }
    if logits.is_empty() {
        return Err(invalid("softmax of an empty logit vector"));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(invalid("logits must be finite"));
    }
    ProbabilityVector::new(softmax_row(logits, tau))
}

pub(crate) fn softmax_row(logits: ArrayView1<f64>, tau: f64) -> Array1<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = logits.mapv(|z| ((z - max) / tau).exp());
    let total = out.sum();
    out /= total;
    out
}

/// Row-wise tempered softmax of a logit batch.
pub fn softmax_rows(logits: ArrayView2<f64>, tau: f64) -> Array2<f64> {
    let mut out = Array2::zeros(logits.raw_dim());
    for (src, mut dst) in logits.outer_iter().zip(out.outer_iter_mut()) {
        dst.assign(&softmax_row(src, tau));
    }
    out
}

/// Summed cross-entropy of a logit batch and its gradient
/// (`softmax - onehot`, one row per instance).
pub fn cross_entropy(logits: ArrayView2<f64>, labels: &[usize]) -> (f64, Array2<f64>) {
    let mut grad = softmax_rows(logits, 1.0);
    let mut loss = 0.0;
    for (i, (&y, row)) in labels.iter().zip(logits.outer_iter()).enumerate() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        loss += lse - row[y];
        grad[[i, y]] -= 1.0;
    }
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn equal_logits_are_uniform() {
        let p = tempered_softmax(array![2.0, 2.0, 2.0, 2.0].view(), 3.0).unwrap();
        assert!(p.as_array().iter().all(|&v| (v - 0.25).abs() < 1e-16));
    }

    #[test]
    fn high_temperature_flattens() {
        let p = tempered_softmax(array![1.0, 0.0].view(), 1000.0).unwrap();
        assert!(p.as_array().iter().all(|&v| (v - 0.5).abs() < 1e-3));
    }

    #[test]
    fn matches_direct_formula() {
        let logits = [2.0, 0.0, -1.0];
        let p = tempered_softmax(array![2.0, 0.0, -1.0].view(), 3.0).unwrap();
        let direct = crate::oracles::softmax_direct(&logits, 3.0);
        for (a, b) in p.as_array().iter().zip(&direct) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((p.as_array().sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_temperature() {
        assert!(tempered_softmax(array![1.0].view(), 0.0).is_err());
        assert!(tempered_softmax(array![1.0].view(), -2.0).is_err());
    }

    #[test]
    fn large_logits_stay_finite() {
        let p = tempered_softmax(array![1000.0, 0.0, -1000.0].view(), 3.0).unwrap();
        assert!(p.as_array().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn cross_entropy_gradient_rows_sum_to_zero() {
        let logits = array![[1.0, 2.0, 0.5], [0.0, -1.0, 3.0]];
        let (loss, grad) = cross_entropy(logits.view(), &[0, 2]);
        assert!(loss > 0.0);
        for row in grad.outer_iter() {
            assert!(row.sum().abs() < 1e-15);
        }
    }
}
