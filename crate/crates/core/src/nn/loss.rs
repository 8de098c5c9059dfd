use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Lower clamp applied to probabilities before taking logarithms.
pub const LOG_CLAMP: f64 = 1e-12;

/// Softmax applied independently to each consecutive pair `(2n, 2n+1)`.
/// Entry `2n` is the presence probability of structure `n`.
pub fn paired_softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let z = logits.data();
    if z.is_empty() || z.len() % 2 != 0 {
        return Err(Error::invalid(format!(
            "paired softmax needs an even, nonzero number of logits, got {}",
            z.len()
        )));
    }
    let mut out = Vec::with_capacity(z.len());
    for pair in z.chunks_exact(2) {
        let m = pair[0].max(pair[1]);
        let e0 = (pair[0] - m).exp();
        let e1 = (pair[1] - m).exp();
        let s = e0 + e1;
        out.push(e0 / s);
        out.push(e1 / s);
    }
    Tensor::new(logits.shape().to_vec(), out)
}

/// `-Σ_n ln p[2n]` for present structures and `ln p[2n+1]` for absent ones.
pub fn cross_entropy_paired<T: Scalar>(probs: &Tensor<T>, labels: &[bool]) -> Result<f64> {
    if probs.len() != 2 * labels.len() {
        return Err(Error::invalid(format!(
            "{} probabilities for {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let p = probs.data();
    Ok(labels
        .iter()
        .enumerate()
        .map(|(n, &present)| {
            let q = if present { p[2 * n] } else { p[2 * n + 1] };
            -q.f64().max(LOG_CLAMP).ln()
        })
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::new(vec![v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(paired_softmax(&t(&[0.0, 0.0])).unwrap().data(), &[0.5, 0.5]);
        let p = paired_softmax(&t(&[2f64.ln(), 0.0])).unwrap();
        // e^{ln 2} / (e^{ln 2} + e^0) = 2/3
        assert_abs_diff_eq!(p.data()[0], 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.data()[1], 1.0 / 3.0, epsilon = 1e-12);
        let p = paired_softmax(&t(&[5.0, 5.0, -1.0, -1.0])).unwrap();
        assert_eq!(p.data(), &[0.5; 4]);
    }

    #[test]
    fn softmax_rejects_odd_length() {
        assert!(paired_softmax(&t(&[1.0, 2.0, 3.0])).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        let half = t(&[0.5, 0.5]);
        assert_abs_diff_eq!(cross_entropy_paired(&half, &[true]).unwrap(), 0.6931, epsilon = 1e-4);
        let four = t(&[0.5; 4]);
        assert_abs_diff_eq!(
            cross_entropy_paired(&four, &[true, false]).unwrap(),
            1.3863,
            epsilon = 1e-4
        );
        let mut prev = f64::INFINITY;
        for eps in [1e-2, 1e-4, 1e-8] {
            let l = cross_entropy_paired(&t(&[1.0 - eps, eps]), &[true]).unwrap();
            assert!(l < prev && l >= 0.0);
            prev = l;
        }
        assert!(prev < 1e-7);
        // Saturated wrong prediction stays finite thanks to the clamp.
        let l = cross_entropy_paired(&t(&[0.0, 1.0]), &[true]).unwrap();
        assert_abs_diff_eq!(l, -LOG_CLAMP.ln(), epsilon = 1e-9);
    }

    proptest::proptest! {
        #[test]
        fn pairs_sum_to_one(v in proptest::collection::vec(-30.0f64..30.0, 1..8)) {
            let mut logits = v.clone();
            logits.extend(v.iter().map(|x| -x * 0.5));
            let p = paired_softmax(&t(&logits)).unwrap();
            for pair in p.data().chunks(2) {
                proptest::prop_assert!((pair[0] + pair[1] - 1.0).abs() < 1e-6);
                proptest::prop_assert!(pair.iter().all(|&q| (0.0..=1.0).contains(&q)));
            }
            let labels: Vec<bool> = (0..logits.len() / 2).map(|i| i % 2 == 0).collect();
            proptest::prop_assert!(cross_entropy_paired(&p, &labels).unwrap() >= 0.0);
        }
    }
}
