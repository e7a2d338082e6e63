//! Finite-activity compound Poisson noise: `N(dt, dz)` with Levy measure
//! `nu(dz) = lambda F(dz)` for a mark law `F`.

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson, Uniform};

use crate::error::{Error, Result};
use crate::num::Real;
use crate::quadrature::QuadratureRule;

const MARK_NODES: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MarkLaw<T> {
    Dirac(T),
    Normal { mean: T, sd: T },
    Uniform { lo: T, hi: T },
}

#[derive(Clone, Debug)]
pub struct JumpModel<T> {
    intensity: T,
    marks: MarkLaw<T>,
    rule: Option<QuadratureRule<T>>,
}

impl<T: Real> JumpModel<T> {
    /// No jumps at all.
    pub fn none() -> Self {
        Self { intensity: T::zero(), marks: MarkLaw::Dirac(T::zero()), rule: None }
    }

    pub fn new(intensity: T, marks: MarkLaw<T>) -> Result<Self> {
        if !(intensity.is_finite() && intensity >= T::zero()) {
            return Err(Error::invalid("intensity", format!("must be finite and >= 0, got {intensity}")));
        }
        let rule = match marks {
            MarkLaw::Dirac(a) => {
                if !a.is_finite() {
                    return Err(Error::invalid("mark", "must be finite"));
                }
                None
            }
            MarkLaw::Normal { mean, sd } => {
                if !(mean.is_finite() && sd.is_finite() && sd >= T::zero()) {
                    return Err(Error::invalid("mark_sd", "normal marks need finite mean and sd >= 0"));
                }
                Some(QuadratureRule::gauss_hermite(MARK_NODES)?)
            }
            MarkLaw::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                    return Err(Error::invalid("mark_hi", "uniform marks need finite lo <= hi"));
                }
                Some(QuadratureRule::gauss_legendre(MARK_NODES)?)
            }
        };
        Ok(Self { intensity, marks, rule })
    }

    pub fn intensity(&self) -> T {
        self.intensity
    }

    pub fn marks(&self) -> MarkLaw<T> {
        self.marks
    }

    pub fn is_active(&self) -> bool {
        self.intensity > T::zero()
    }

    /// `E[f(zeta)]` under the mark law.
    pub fn expect(&self, mut f: impl FnMut(T) -> T) -> T {
        match (self.marks, &self.rule) {
            (MarkLaw::Dirac(a), _) => f(a),
            (MarkLaw::Normal { mean, sd }, Some(q)) => {
                let s = T::lit(2.0).sqrt() * sd;
                q.integrate(|y| f(mean + s * y)) / T::PI().sqrt()
            }
            (MarkLaw::Uniform { lo, hi }, Some(q)) => {
                let mid = (lo + hi) / T::lit(2.0);
                let half = (hi - lo) / T::lit(2.0);
                q.integrate(|y| f(mid + half * y)) / T::lit(2.0)
            }
            _ => unreachable!("quadrature rule is built with the mark law"),
        }
    }

    /// `int f(zeta) nu(dzeta) = lambda E[f(zeta)]`.
    pub fn nu_integral(&self, f: impl FnMut(T) -> T) -> T {
        if self.is_active() {
            self.intensity * self.expect(f)
        } else {
            T::zero()
        }
    }

    pub fn mark_mean(&self) -> T {
        self.expect(|z| z)
    }

    pub fn mark_second_moment(&self) -> T {
        self.expect(|z| z * z)
    }

    /// Jump count over a step of length `dt`.
    pub fn sample_count<R: Rng + ?Sized>(&self, dt: T, rng: &mut R) -> usize {
        let mean = (self.intensity * dt).as_f64();
        if mean <= 0.0 {
            return 0;
        }
        let k: f64 = Poisson::new(mean).expect("positive finite mean").sample(rng);
        k as usize
    }

    pub fn sample_mark<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        match self.marks {
            MarkLaw::Dirac(a) => a,
            MarkLaw::Normal { mean, sd } => {
                let z: f64 = Normal::new(mean.as_f64(), sd.as_f64()).expect("validated").sample(rng);
                T::lit(z)
            }
            MarkLaw::Uniform { lo, hi } => {
                if lo == hi {
                    return lo;
                }
                let z: f64 = Uniform::new(lo.as_f64(), hi.as_f64()).expect("validated").sample(rng);
                T::lit(z)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn moments_match_closed_forms() {
        let d = JumpModel::<f64>::new(2.0, MarkLaw::Dirac(0.5)).unwrap();
        assert_eq!(d.mark_mean(), 0.5);
        assert_eq!(d.nu_integral(|z| z * z), 0.5);

        let n = JumpModel::<f64>::new(1.0, MarkLaw::Normal { mean: 0.1, sd: 0.3 }).unwrap();
        assert!((n.mark_mean() - 0.1).abs() < 1e-14);
        assert!((n.mark_second_moment() - (0.01 + 0.09)).abs() < 1e-14);
        // E[exp(zeta)] = exp(mean + sd^2 / 2)
        assert!((n.expect(|z: f64| z.exp()) - (0.1f64 + 0.045).exp()).abs() < 1e-13);

        let u = JumpModel::<f64>::new(1.0, MarkLaw::Uniform { lo: -0.2, hi: 0.6 }).unwrap();
        assert!((u.mark_mean() - 0.2).abs() < 1e-14);
        assert!((u.mark_second_moment() - (0.6f64.powi(3) + 0.008) / (3.0 * 0.8)).abs() < 1e-14);
    }

    #[test]
    fn inactive_model_integrates_to_zero() {
        let j = JumpModel::<f64>::none();
        assert!(!j.is_active());
        assert_eq!(j.nu_integral(|_| 5.0), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(j.sample_count(0.1, &mut rng), 0);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(JumpModel::new(-1.0, MarkLaw::Dirac(0.1)).is_err());
        assert!(JumpModel::new(1.0, MarkLaw::Normal { mean: 0.0, sd: -1.0 }).is_err());
        assert!(JumpModel::new(1.0, MarkLaw::Uniform { lo: 1.0, hi: 0.0 }).is_err());
    }

    #[test]
    fn sampled_counts_have_poisson_mean() {
        let j = JumpModel::new(3.0, MarkLaw::Uniform { lo: 0.0, hi: 1.0 }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 200_000;
        let total: usize = (0..n).map(|_| j.sample_count(0.1, &mut rng)).sum();
        let mean = total as f64 / n as f64;
        // sd of the mean is sqrt(0.3 / n)
        assert!((mean - 0.3).abs() < 4.0 * (0.3 / n as f64).sqrt());
        let marks: f64 = (0..n).map(|_| j.sample_mark(&mut rng)).sum::<f64>() / n as f64;
        assert!((marks - 0.5).abs() < 4.0 * (1.0 / 12.0 / n as f64).sqrt());
    }
}
