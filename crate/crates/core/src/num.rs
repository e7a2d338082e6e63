//! Scalar abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign};

/// Floating point scalar the simulation and measure code is generic over.
///
/// Implemented for `f32` and `f64`. Statistical thresholds in the test suites
/// are calibrated for `f64`; `f32` is supported for memory-bound experiments.
pub trait Real:
    Float + FloatConst + FromPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` literal. Every finite `f64` is representable (possibly rounded).
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count fits in a float")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Composite trapezoid weights for `points` equally spaced samples with spacing `h`.
pub fn trapezoid_weights<T: Real>(points: usize, h: T) -> Vec<T> {
    match points {
        0 => Vec::new(),
        1 => vec![T::zero()],
        n => {
            let half = h / T::lit(2.0);
            (0..n)
                .map(|i| if i == 0 || i == n - 1 { half } else { h })
                .collect()
        }
    }
}

/// Mean and standard error of a Monte Carlo sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate<T> {
    pub mean: T,
    pub stderr: T,
}

impl<T: Real> Estimate<T> {
    /// Sample mean and `sd / sqrt(n)`; a single sample has zero standard error.
    pub fn from_samples(samples: &[T]) -> Self {
        let n = samples.len();
        if n == 0 {
            return Self { mean: T::nan(), stderr: T::nan() };
        }
        let nf = T::from_count(n);
        let mean = samples.iter().copied().sum::<T>() / nf;
        if n == 1 {
            return Self { mean, stderr: T::zero() };
        }
        let ss: T = samples.iter().map(|&v| (v - mean) * (v - mean)).sum();
        let var = ss / T::from_count(n - 1);
        Self { mean, stderr: (var / nf).sqrt() }
    }

    /// Estimate of `E[a - b]` from paired samples (common random numbers).
    pub fn paired_difference(a: &[T], b: &[T]) -> Self {
        let diff: Vec<T> = a.iter().zip(b).map(|(&x, &y)| x - y).collect();
        Self::from_samples(&diff)
    }

    /// `|mean| / stderr`, infinite when the standard error vanishes but the mean does not.
    pub fn z_score(&self) -> T {
        if self.stderr > T::zero() {
            self.mean.abs() / self.stderr
        } else if self.mean == T::zero() {
            T::zero()
        } else {
            T::infinity()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trapezoid_integrates_linear_exactly() {
        let w = trapezoid_weights(11, 0.1f64);
        let integral: f64 = w.iter().enumerate().map(|(i, wi)| wi * (i as f64 * 0.1)).sum();
        assert!((integral - 0.5).abs() < 1e-14);
    }

    #[test]
    fn estimate_of_constant_has_zero_error() {
        let e = Estimate::from_samples(&[2.0f64; 10]);
        assert_eq!(e.mean, 2.0);
        assert_eq!(e.stderr, 0.0);
        assert!(e.z_score().is_infinite());
    }

    #[test]
    fn estimate_stderr_matches_hand_value() {
        let e = Estimate::from_samples(&[1.0f64, 3.0]);
        assert_eq!(e.mean, 2.0);
        // sample variance 2, stderr sqrt(2/2) = 1
        assert!((e.stderr - 1.0).abs() < 1e-15);
    }
}
