use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Row-wise softmax with max subtraction. A rank-1 tensor is one row.
pub fn softmax_prob(logits: &Tensor) -> Result<Tensor> {
    if logits.is_empty() {
        return Err(Error::arg("softmax of an empty tensor"));
    }
    let width = *logits.shape().last().expect("non-empty shape");
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks_exact(width) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        out.extend(exps.into_iter().map(|e| e / total));
    }
    Tensor::new(logits.shape().to_vec(), out)
}

/// `-ln p[label]` for one distribution, and the gradient with respect to
/// the logits that produced it, `p - onehot(label)`.
pub fn cross_entropy_loss(probs: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= probs.len() {
        return Err(Error::arg(format!(
            "label {label} out of range for {} classes",
            probs.len()
        )));
    }
    let p = probs[label];
    // clamp zero probabilities but let NaN through
    let loss = -(if p.is_nan() {
        p
    } else {
        p.max(f64::MIN_POSITIVE)
    })
    .ln();
    let mut grad = probs.to_vec();
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Softmax plus cross-entropy over a batch of logits `N×K`.
///
/// Returns the mean loss, the probabilities and the per-sample logit
/// gradient (not divided by `N`; the optimizer divides by the batch size).
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor, Tensor)> {
    logits.expect_rank(2, "softmax loss")?;
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != n {
        return Err(Error::arg(format!("{} labels for {n} rows", labels.len())));
    }
    let probs = softmax_prob(logits)?;
    let mut grad = Vec::with_capacity(n * k);
    let mut total = 0.0;
    for (row, &label) in probs.data().chunks_exact(k).zip(labels) {
        let (loss, g) = cross_entropy_loss(row, label)?;
        total += loss;
        grad.extend(g);
    }
    Ok((total / n as f64, probs, Tensor::new(vec![n, k], grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor {
        Tensor::new(vec![v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn softmax_examples() {
        let p = softmax_prob(&t(&[0.0; 4])).unwrap();
        assert!(p.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        for c in [-30.0, 0.0, 7.5, 500.0] {
            let p = softmax_prob(&t(&[c, c + 3f64.ln()])).unwrap();
            assert!((p.data()[0] - 0.25).abs() < 1e-12);
            assert!((p.data()[1] - 0.75).abs() < 1e-12);
        }
        let p = softmax_prob(&t(&[1000.0, 0.0])).unwrap();
        assert_eq!(p.data()[0], 1.0);
        // e^-1000 underflows to zero in double precision
        assert!(p.data()[1] >= 0.0 && p.data()[1] < 1e-300);
        assert!(p.all_finite());
    }

    #[test]
    fn cross_entropy_examples() {
        let (loss, grad) = cross_entropy_loss(&[0.0, 1.0, 0.0], 1).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grad, vec![0.0, 0.0, 0.0]);
        let n = 7;
        let (loss, _) = cross_entropy_loss(&vec![1.0 / n as f64; n], 3).unwrap();
        assert!((loss - (n as f64).ln()).abs() < 1e-12);
        assert!(cross_entropy_loss(&[0.5, 0.5], 2).is_err());
    }

    #[test]
    fn logit_gradient_matches_finite_differences() {
        let logits = [0.3, -1.2, 2.0, 0.7, -0.1];
        let label = 2;
        let loss_at = |z: &[f64]| {
            let p = softmax_prob(&t(z)).unwrap();
            cross_entropy_loss(p.data(), label).unwrap().0
        };
        let p = softmax_prob(&t(&logits)).unwrap();
        let (_, grad) = cross_entropy_loss(p.data(), label).unwrap();
        let h = 1e-5;
        for i in 0..logits.len() {
            let mut up = logits;
            let mut down = logits;
            up[i] += h;
            down[i] -= h;
            let fd = (loss_at(&up) - loss_at(&down)) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-6, "{i}: {fd} vs {}", grad[i]);
        }
    }
}
