use crate::error::{Error, Result};
use crate::net::Loss;
use crate::scalar::Scalar;

/// Probability clamp applied before taking logarithms.
pub const BCE_EPSILON: f64 = 1e-7;

/// Mean pixelwise binary cross-entropy with probabilities clamped to
/// `[eps, 1 - eps]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinaryCrossEntropy {
    pub epsilon: f64,
}

impl Default for BinaryCrossEntropy {
    fn default() -> Self {
        BinaryCrossEntropy {
            epsilon: BCE_EPSILON,
        }
    }
}

fn check<T>(p: &[T], y: &[T]) -> Result<()> {
    if p.len() != y.len() || p.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions vs {} targets",
            p.len(),
            y.len()
        )));
    }
    Ok(())
}

/// `-(1/N) sum(y ln p + (1 - y) ln(1 - p))`.
pub fn bce_loss<T: Scalar>(p: &[T], y: &[T]) -> Result<T> {
    BinaryCrossEntropy::default().value(p, y)
}

impl<T: Scalar> Loss<T> for BinaryCrossEntropy {
    fn value(&self, p: &[T], y: &[T]) -> Result<T> {
        check(p, y)?;
        let eps = T::lit(self.epsilon);
        let hi = T::one() - eps;
        let mut acc = T::zero();
        for (&pi, &yi) in p.iter().zip(y) {
            let pc = pi.max(eps).min(hi);
            acc -= yi * pc.ln() + (T::one() - yi) * (T::one() - pc).ln();
        }
        Ok(acc / T::lit(p.len() as f64))
    }

    /// Derivative with respect to each probability; zero where the clamp is
    /// active.
    fn gradient(&self, p: &[T], y: &[T]) -> Result<Vec<T>> {
        check(p, y)?;
        let eps = T::lit(self.epsilon);
        let hi = T::one() - eps;
        let inv_n = T::one() / T::lit(p.len() as f64);
        Ok(p.iter()
            .zip(y)
            .map(|(&pi, &yi)| {
                if pi < eps || pi > hi {
                    T::zero()
                } else {
                    (-yi / pi + (T::one() - yi) / (T::one() - pi)) * inv_n
                }
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reference_values() {
        let half = bce_loss(&[0.5f64; 6], &[1.0, 0.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
        assert!((half - std::f64::consts::LN_2).abs() < 1e-12);
        let q = bce_loss(&[0.25f64], &[1.0]).unwrap();
        assert!((q - 1.386_294_361_119_890_6).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_hits_clamp_floor() {
        let y = [1.0f64, 0.0, 1.0, 0.0];
        let loss = bce_loss(&y, &y).unwrap();
        let floor = -(1.0f64 - BCE_EPSILON).ln();
        assert!(loss <= 1.01 * floor, "{loss}");
        assert!(loss > 0.0);
    }

    #[test]
    fn shape_mismatch() {
        assert!(matches!(
            bce_loss(&[0.5f32; 2], &[1.0f32; 3]),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn logit_gradient_is_p_minus_y_over_n() {
        // chain through the sigmoid derivative p(1-p)
        let p = [0.2f64, 0.7, 0.55, 0.9];
        let y = [0.0, 1.0, 0.0, 1.0];
        let g = BinaryCrossEntropy::default().gradient(&p, &y).unwrap();
        for i in 0..4 {
            let logit_grad = g[i] * p[i] * (1.0 - p[i]);
            assert!((logit_grad - (p[i] - y[i]) / 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn probability_gradient_matches_finite_differences() {
        let p = [0.2f64, 0.7, 0.55, 0.999];
        let y = [0.0, 1.0, 0.0, 1.0];
        let g = BinaryCrossEntropy::default().gradient(&p, &y).unwrap();
        let h = 1e-6;
        for i in 0..4 {
            let mut a = p;
            let mut b = p;
            a[i] += h;
            b[i] -= h;
            let fd = (bce_loss(&a, &y).unwrap() - bce_loss(&b, &y).unwrap()) / (2.0 * h);
            assert!(((fd - g[i]) / g[i]).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn non_negative_and_permutation_invariant(
            pairs in proptest::collection::vec((0.0f64..=1.0, any::<bool>()), 1..64),
            rot in 0usize..64,
        ) {
            let p: Vec<f64> = pairs.iter().map(|x| x.0).collect();
            let y: Vec<f64> = pairs.iter().map(|x| if x.1 { 1.0 } else { 0.0 }).collect();
            let base = bce_loss(&p, &y).unwrap();
            prop_assert!(base >= 0.0);
            let k = rot % p.len();
            let mut pr = p.clone();
            let mut yr = y.clone();
            pr.rotate_left(k);
            yr.rotate_left(k);
            let rotated = bce_loss(&pr, &yr).unwrap();
            prop_assert!((base - rotated).abs() <= 1e-12 * base.max(1.0));
        }
    }
}
