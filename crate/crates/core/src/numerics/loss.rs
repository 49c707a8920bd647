use crate::error::{Error, Result};

/// Log-softmax with max subtraction.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_z = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - log_z).collect()
}

/// Cross-entropy of `softmax(logits)` against `target`; returns the loss and
/// its gradient with respect to the logits (`p - onehot(target)`).
pub fn softmax_xent(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    if target >= logits.len() {
        return Err(Error::Label {
            label: target,
            classes: logits.len(),
        });
    }
    let log_p = log_softmax(logits);
    let mut grad: Vec<f64> = log_p.iter().map(|lp| lp.exp()).collect();
    grad[target] -= 1.0;
    Ok((-log_p[target], grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_logits_cost_ln_v() {
        let (loss, grad) = softmax_xent(&[0.3; 7], 2).unwrap();
        assert!((loss - 7f64.ln()).abs() < 1e-12);
        assert!(grad.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let (loss, grad) = softmax_xent(&[1000.0, 0.0], 0).unwrap();
        assert!(loss.abs() < 1e-12);
        assert!(grad.iter().all(|g| g.is_finite()));
        let (loss, _) = softmax_xent(&[1000.0, 0.0], 1).unwrap();
        assert!((loss - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let logits: Vec<f64> = (0..10).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let target = 4;
        let (_, grad) = softmax_xent(&logits, target).unwrap();
        let h = 1e-5;
        for i in 0..logits.len() {
            let mut plus = logits.clone();
            plus[i] += h;
            let mut minus = logits.clone();
            minus[i] -= h;
            let numeric = (softmax_xent(&plus, target).unwrap().0
                - softmax_xent(&minus, target).unwrap().0)
                / (2.0 * h);
            let rel = (numeric - grad[i]).abs() / grad[i].abs().max(numeric.abs());
            assert!(rel < 1e-6, "entry {i}: {numeric} vs {}", grad[i]);
        }
    }

    #[test]
    fn out_of_range_target() {
        assert!(matches!(softmax_xent(&[0.0, 1.0], 2), Err(Error::Label { label: 2, classes: 2 })));
    }
}
