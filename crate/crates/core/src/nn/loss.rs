//! Scalar losses with closed-form gradients.

use ndarray::{Array1, ArrayView1};

/// Norms below this make the cosine undefined; such pairs contribute nothing.
pub const COSINE_EPS: f64 = 1e-12;

pub fn softmax(s: ArrayView1<'_, f64>) -> Array1<f64> {
    let max = s.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let e = s.mapv(|v| (v - max).exp());
    let z = e.sum();
    e / z
}

/// `-ln softmax(s)[label]` and its gradient `softmax(s) - onehot(label)`.
pub fn softmax_cross_entropy(s: &Array1<f64>, label: usize) -> (f64, Array1<f64>) {
    assert!(label < s.len(), "label {label} out of range for {} classes", s.len());
    let max = s.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let log_z = s.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    let mut grad = softmax(s.view());
    grad[label] -= 1.0;
    (log_z - s[label], grad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CosineLoss {
    pub loss: f64,
    pub d_pred: Array1<f64>,
    pub d_target: Array1<f64>,
}

/// Negative cosine similarity `-(p·q) / (|p||q|)` with gradients for both
/// arguments.
pub fn cosine_loss(p: &Array1<f64>, q: &Array1<f64>) -> CosineLoss {
    let np = p.dot(p).sqrt();
    let nq = q.dot(q).sqrt();
    if np < COSINE_EPS || nq < COSINE_EPS {
        return CosineLoss {
            loss: 0.0,
            d_pred: Array1::zeros(p.len()),
            d_target: Array1::zeros(q.len()),
        };
    }
    let cos = p.dot(q) / (np * nq);
    // d cos / dp = q / (|p||q|) - cos p / |p|^2
    let d_pred = p * (cos / (np * np)) - q / (np * nq);
    let d_target = q * (cos / (nq * nq)) - p / (np * nq);
    CosineLoss {
        loss: -cos,
        d_pred,
        d_target,
    }
}

/// Squared distance between the unit-normalized vectors.
pub fn normalized_mse(p: &Array1<f64>, q: &Array1<f64>) -> f64 {
    let pn = p / p.dot(p).sqrt();
    let qn = q / q.dot(q).sqrt();
    let diff = pn - qn;
    diff.dot(&diff)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn fd<F: Fn(&Array1<f64>) -> f64>(f: F, x: &Array1<f64>) -> Array1<f64> {
        let eps = 1e-6;
        Array1::from_shape_fn(x.len(), |i| {
            let mut a = x.clone();
            let mut b = x.clone();
            a[i] += eps;
            b[i] -= eps;
            (f(&a) - f(&b)) / (2.0 * eps)
        })
    }

    fn rel_err(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
            .fold(0.0, f64::max)
    }

    #[test]
    fn uniform_logits_give_ln_n() {
        let (loss, grad) = softmax_cross_entropy(&Array1::from_elem(5, 0.7), 2);
        assert!((loss - 5f64.ln()).abs() < 1e-15);
        assert!(grad.sum().abs() < 1e-15);
    }

    #[test]
    fn dominant_true_logit_drives_loss_to_zero() {
        let (loss, _) = softmax_cross_entropy(&array![800.0, 0.0, 0.0], 0);
        assert_eq!(loss, 0.0);
        let (loss, _) = softmax_cross_entropy(&array![-800.0, 0.0], 0);
        assert!((loss - 800.0).abs() < 1e-9);
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let s = array![0.3, -1.2, 2.0, 0.05, -0.4];
        let (_, grad) = softmax_cross_entropy(&s, 3);
        let num = fd(|x| softmax_cross_entropy(x, 3).0, &s);
        assert!(rel_err(&grad, &num) < 1e-6);
    }

    #[test]
    fn cosine_identities() {
        let p = array![1.0, 2.0, -0.5];
        let same = cosine_loss(&p, &p);
        assert!((same.loss + 1.0).abs() < 1e-15);
        assert!(normalized_mse(&p, &p).abs() < 1e-15);
        let o = cosine_loss(&array![1.0, 0.0], &array![0.0, 3.0]);
        assert_eq!(o.loss, 0.0);
        assert!((normalized_mse(&array![1.0, 0.0], &array![0.0, 3.0]) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn cosine_degenerate_guard() {
        let c = cosine_loss(&Array1::zeros(3), &array![1.0, 2.0, 3.0]);
        assert_eq!(c.loss, 0.0);
        assert!(c.d_pred.iter().chain(c.d_target.iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn cosine_gradients_match_finite_differences() {
        let p = array![0.4, -1.3, 0.8, 2.2];
        let q = array![-0.2, 0.9, 1.7, 0.3];
        let c = cosine_loss(&p, &q);
        assert!(rel_err(&c.d_pred, &fd(|x| cosine_loss(x, &q).loss, &p)) < 1e-6);
        assert!(rel_err(&c.d_target, &fd(|x| cosine_loss(&p, x).loss, &q)) < 1e-6);
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(v in proptest::collection::vec(-50.0f64..50.0, 1..12), label in 0usize..12) {
            let s = Array1::from(v);
            let label = label % s.len();
            prop_assert!((softmax(s.view()).sum() - 1.0).abs() < 1e-12);
            let (loss, grad) = softmax_cross_entropy(&s, label);
            prop_assert!(loss >= 0.0);
            prop_assert!(grad.sum().abs() < 1e-12);
        }

        #[test]
        fn mse_equals_two_minus_two_cosine(
            p in proptest::collection::vec(-5.0f64..5.0, 8),
            q in proptest::collection::vec(-5.0f64..5.0, 8),
        ) {
            let (p, q) = (Array1::from(p), Array1::from(q));
            prop_assume!(p.dot(&p) > 1e-6 && q.dot(&q) > 1e-6);
            let c = cosine_loss(&p, &q).loss;
            prop_assert!((normalized_mse(&p, &q) - (2.0 + 2.0 * c)).abs() < 1e-10);
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&c));
        }
    }
}
