//! Softmax over K stored logits plus an implicit background class whose
//! logit is fixed at zero.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Writes the K+1 probabilities for `logits` into `out`; the last entry is
/// the implicit class.
#[inline]
pub fn softmax_implicit_into<T: Real>(logits: &[T], out: &mut [T]) {
    debug_assert_eq!(out.len(), logits.len() + 1);
    let max = logits.iter().fold(T::zero(), |m, &t| m.max(t));
    let mut sum = T::zero();
    for (o, &t) in out.iter_mut().zip(logits) {
        *o = (t - max).exp();
        sum = sum + *o;
    }
    let bg = (-max).exp();
    let k = logits.len();
    out[k] = bg;
    sum = sum + bg;
    for o in out.iter_mut() {
        *o = *o / sum;
    }
}

/// Probabilities `∝ (exp t₁, …, exp t_K, 1)`.
pub fn softmax_implicit<T: Real>(logits: &[T]) -> Result<Vec<T>> {
    if logits.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite("logit".into()));
    }
    let mut out = vec![T::zero(); logits.len() + 1];
    softmax_implicit_into(logits, &mut out);
    Ok(out)
}

/// `ln Σ exp` over the stored logits and the implicit zero.
#[inline]
pub fn log_sum_exp_implicit<T: Real>(logits: &[T]) -> T {
    let max = logits.iter().fold(T::zero(), |m, &t| m.max(t));
    let s = logits.iter().fold((-max).exp(), |acc, &t| acc + (t - max).exp());
    max + s.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_logits_are_uniform() {
        let p = softmax_implicit(&[0.0f64; 3]).unwrap();
        assert_eq!(p, vec![0.25; 4]);
    }

    #[test]
    fn hand_evaluated_case() {
        let p = softmax_implicit(&[2f64.ln(), 0.0]).unwrap();
        let expected = [0.5, 0.25, 0.25];
        for (a, b) in p.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn large_logit_does_not_overflow() {
        let p = softmax_implicit(&[1000.0f64, 0.0]).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-15);
        assert!(p[1] < 1e-300 && p[2] < 1e-300);
        assert!(p.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn non_finite_logit_is_rejected() {
        assert!(softmax_implicit(&[f64::INFINITY]).is_err());
        assert!(softmax_implicit(&[f64::NAN, 0.0]).is_err());
    }

    proptest! {
        #[test]
        fn sums_to_one_and_preserves_argmax(logits in prop::collection::vec(-300.0f64..300.0, 1..8)) {
            let p = softmax_implicit(&logits).unwrap();
            let s: f64 = p.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            let arg = |v: &[f64]| v.iter().enumerate().fold(0, |b, (i, &x)| if x > v[b] { i } else { b });
            prop_assert_eq!(arg(&p[..logits.len()]), arg(&logits));
        }

        #[test]
        fn log_sum_exp_consistent(logits in prop::collection::vec(-50.0f64..50.0, 1..6)) {
            let p = softmax_implicit(&logits).unwrap();
            let lse = log_sum_exp_implicit(&logits);
            // implicit class probability is exp(0 - lse)
            prop_assert!((p[logits.len()].ln() + lse).abs() < 1e-10);
        }
    }
}
