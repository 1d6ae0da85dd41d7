//! Numeric primitives: dot-product kernels, restricted softmax and central moments.

use crate::error::{LfpsError, Result};

/// Reference dot product: strict left-to-right accumulation.
pub fn dot_scalar(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Eight-lane dot product. The lanes are independent so the compiler can
/// vectorize; lane sums are reduced in a fixed order.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            lanes[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((lanes[0] + lanes[4]) + (lanes[1] + lanes[5])) + ((lanes[2] + lanes[6]) + (lanes[3] + lanes[7])) + tail
}

/// Softmax with max subtraction. Weights are returned in input order.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(LfpsError::Empty("softmax input"));
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(LfpsError::NonFinite("softmax input"));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for w in &mut out {
        *w /= total;
    }
    Ok(out)
}

/// Softmax over a sparse index→logit map given as `(index, logit)` pairs.
pub fn softmax_restricted(entries: &[(usize, f64)]) -> Result<Vec<(usize, f64)>> {
    let logits: Vec<f64> = entries.iter().map(|e| e.1).collect();
    let weights = softmax(&logits)?;
    Ok(entries.iter().map(|e| e.0).zip(weights).collect())
}

/// Mean and centered second/fourth power sums.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub count: usize,
    pub mean: f64,
    pub centered_sum2: f64,
    pub centered_sum4: f64,
}

impl Moments {
    /// Two-pass computation over the concatenation of `parts`.
    pub fn from_parts(parts: &[&[f64]]) -> Self {
        let count: usize = parts.iter().map(|p| p.len()).sum();
        if count == 0 {
            return Self {
                count,
                mean: 0.0,
                centered_sum2: 0.0,
                centered_sum4: 0.0,
            };
        }
        let sum: f64 = parts.iter().flat_map(|p| p.iter()).sum();
        let mean = sum / count as f64;
        // one refinement pass; exact for constant input
        let resid: f64 = parts.iter().flat_map(|p| p.iter()).map(|&x| x - mean).sum();
        let mean = mean + resid / count as f64;
        let mut s2 = 0.0;
        let mut s4 = 0.0;
        for &x in parts.iter().flat_map(|p| p.iter()) {
            let c = x - mean;
            let c2 = c * c;
            s2 += c2;
            s4 += c2 * c2;
        }
        Self {
            count,
            mean,
            centered_sum2: s2,
            centered_sum4: s4,
        }
    }
}

pub fn moments(x: &[f64]) -> Moments {
    Moments::from_parts(&[x])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_single_and_symmetric() {
        assert_eq!(softmax_restricted(&[(7, 3.0)]).unwrap(), vec![(7, 1.0)]);
        for c in [-1e300, -3.5, 0.0, 42.0, 1e300] {
            let w = softmax(&[c, c]).unwrap();
            assert_eq!(w, vec![0.5, 0.5]);
        }
    }

    #[test]
    fn softmax_ln3_case() {
        let w = softmax(&[0.0, 3f64.ln()]).unwrap();
        assert!((w[0] - 0.25).abs() < 1e-15);
        assert!((w[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_rejects_bad_input() {
        assert!(matches!(softmax(&[]), Err(LfpsError::Empty(_))));
        assert!(matches!(softmax(&[0.0, f64::NAN]), Err(LfpsError::NonFinite(_))));
        assert!(softmax(&[f64::INFINITY]).is_err());
    }

    #[test]
    fn moments_small_cases() {
        let m = moments(&[2.5, 2.5, 2.5]);
        assert_eq!((m.mean, m.centered_sum2, m.centered_sum4), (2.5, 0.0, 0.0));
        let m = moments(&[0.0, 1.0]);
        assert_eq!((m.mean, m.centered_sum2, m.centered_sum4), (0.5, 0.5, 0.125));
    }

    #[test]
    fn moments_match_naive_summation() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..100).map(|_| rng.random_range(-3.0..7.0)).collect();
        // naive oracle: direct sums in index order
        let mut sum = 0.0;
        for v in &x {
            sum += v;
        }
        let mean = sum / 100.0;
        let mut s2 = 0.0;
        let mut s4 = 0.0;
        for v in &x {
            s2 += (v - mean).powi(2);
            s4 += (v - mean).powi(4);
        }
        let m = moments(&x);
        assert!(((m.mean - mean) / mean).abs() < 1e-12);
        assert!(((m.centered_sum2 - s2) / s2).abs() < 1e-12);
        assert!(((m.centered_sum4 - s4) / s4).abs() < 1e-12);

        let (a, b) = x.split_at(37);
        assert_eq!(Moments::from_parts(&[a, b]), m);
    }

    proptest! {
        #[test]
        fn softmax_is_shift_invariant(
            logits in proptest::collection::vec(-30.0f64..30.0, 1..40),
            c in -100.0f64..100.0,
        ) {
            let a = softmax(&logits).unwrap();
            let shifted: Vec<f64> = logits.iter().map(|x| x + c).collect();
            let b = softmax(&shifted).unwrap();
            let total: f64 = a.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-6);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!(*x > 0.0);
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn zero_spread_implies_zero_fourth_moment(
            v in -1e6f64..1e6,
            len in 1usize..50,
        ) {
            let m = moments(&vec![v; len]);
            prop_assert_eq!(m.centered_sum2, 0.0);
            prop_assert_eq!(m.centered_sum4, 0.0);
        }

        #[test]
        fn vector_kernel_matches_scalar(
            pairs in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..300),
        ) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let s = dot_scalar(&a, &b);
            let v = dot(&a, &b);
            let scale: f64 = a.iter().zip(&b).map(|(x, y)| (x * y).abs()).sum::<f64>().max(1e-300);
            prop_assert!((s - v).abs() / scale < 1e-6);
        }
    }
}
