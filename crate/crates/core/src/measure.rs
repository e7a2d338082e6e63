//! Measures on the real line compared through their Fourier transforms:
//! `||mu||_M^2 = int |mu_hat(y)|^2 exp(-y^2) dy` with `mu_hat(y) = int exp(-i x y) mu(dx)`,
//! and the segment norm `||mbar||^2 = int_0^delta ||mu(s)||_M^2 ds`.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::num::{trapezoid_weights, Real};
use crate::quadrature::QuadratureRule;
use crate::segments::Segment;

/// Anything with a characteristic function `mu_hat(y) = int exp(-i x y) mu(dx)`.
pub trait Law<T: Real> {
    fn ecf(&self, y: T) -> Complex<T>;
}

/// Finite weighted particle cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalMeasure<T> {
    atoms: Vec<T>,
    weights: Vec<T>,
}

impl<T: Real> EmpiricalMeasure<T> {
    pub fn new(atoms: Vec<T>, weights: Vec<T>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidMeasure("no atoms".into()));
        }
        if atoms.len() != weights.len() {
            return Err(Error::InvalidMeasure(format!(
                "{} atoms but {} weights",
                atoms.len(),
                weights.len()
            )));
        }
        if atoms.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidMeasure("non-finite atom".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= T::zero())) {
            return Err(Error::InvalidMeasure("weights must be finite and non-negative".into()));
        }
        let total: T = weights.iter().copied().sum();
        let tol = T::lit(1e-12).max(T::epsilon() * T::lit(4.0) * T::from_count(weights.len()));
        if (total - T::one()).abs() > tol {
            return Err(Error::InvalidMeasure(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { atoms, weights })
    }

    /// Equal weights `1/n` on each atom.
    pub fn uniform(atoms: Vec<T>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidMeasure("no atoms".into()));
        }
        if atoms.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidMeasure("non-finite atom".into()));
        }
        let w = T::one() / T::from_count(atoms.len());
        let weights = vec![w; atoms.len()];
        Ok(Self { atoms, weights })
    }

    pub fn dirac(at: T) -> Result<Self> {
        Self::new(vec![at], vec![T::one()])
    }

    pub fn atoms(&self) -> &[T] {
        &self.atoms
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn mean(&self) -> T {
        self.atoms.iter().zip(&self.weights).map(|(&a, &w)| a * w).sum()
    }
}

impl<T: Real> Law<T> for EmpiricalMeasure<T> {
    fn ecf(&self, y: T) -> Complex<T> {
        let (mut re, mut im) = (T::zero(), T::zero());
        for (&a, &w) in self.atoms.iter().zip(&self.weights) {
            let (s, c) = (a * y).sin_cos();
            re += w * c;
            im -= w * s;
        }
        Complex::new(re, im)
    }
}

/// Borrowed uniform-weight law of a particle column, as seen by coefficient functions.
#[derive(Clone, Copy, Debug)]
pub struct UniformLaw<'a, T> {
    atoms: &'a [T],
}

impl<'a, T: Real> UniformLaw<'a, T> {
    pub fn new(atoms: &'a [T]) -> Self {
        debug_assert!(!atoms.is_empty());
        Self { atoms }
    }

    pub fn atoms(&self) -> &'a [T] {
        self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn mean(&self) -> T {
        self.atoms.iter().copied().sum::<T>() / T::from_count(self.atoms.len())
    }

    /// Population variance (divides by `n`).
    pub fn variance(&self) -> T {
        let m = self.mean();
        self.atoms.iter().map(|&a| (a - m) * (a - m)).sum::<T>() / T::from_count(self.atoms.len())
    }

    /// Empirical quantile by linear interpolation between order statistics.
    pub fn quantile(&self, p: T) -> T {
        let mut sorted = self.atoms.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        let pos = p.max(T::zero()).min(T::one()) * T::from_count(sorted.len() - 1);
        let lo = pos.floor().to_usize().unwrap_or(0);
        let hi = (lo + 1).min(sorted.len() - 1);
        let frac = pos - T::from_count(lo);
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }

    pub fn to_measure(&self) -> EmpiricalMeasure<T> {
        EmpiricalMeasure::uniform(self.atoms.to_vec()).expect("particle values are finite")
    }
}

impl<T: Real> Law<T> for UniformLaw<'_, T> {
    fn ecf(&self, y: T) -> Complex<T> {
        let (mut re, mut im) = (T::zero(), T::zero());
        for &a in self.atoms {
            let (s, c) = (a * y).sin_cos();
            re += c;
            im -= s;
        }
        let n = T::from_count(self.atoms.len());
        Complex::new(re / n, im / n)
    }
}

/// Normal law `N(mean, sd^2)`; characteristic function `exp(-i mean y - sd^2 y^2 / 2)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianLaw<T> {
    pub mean: T,
    pub sd: T,
}

impl<T: Real> Law<T> for GaussianLaw<T> {
    fn ecf(&self, y: T) -> Complex<T> {
        let modulus = (-(self.sd * self.sd * y * y) / T::lit(2.0)).exp();
        let (s, c) = (self.mean * y).sin_cos();
        Complex::new(modulus * c, -modulus * s)
    }
}

/// `||mu||_M^2` under the quadrature rule.
pub fn m_norm_sq<T: Real, A: Law<T> + ?Sized>(mu: &A, q: &QuadratureRule<T>) -> T {
    q.integrate(|y| mu.ecf(y).norm_sqr())
}

/// `||mu - nu||_M^2 = sum_k w_k |mu_hat(y_k) - nu_hat(y_k)|^2`.
pub fn m_dist_sq<T, A, B>(mu: &A, nu: &B, q: &QuadratureRule<T>) -> T
where
    T: Real,
    A: Law<T> + ?Sized,
    B: Law<T> + ?Sized,
{
    q.integrate(|y| (mu.ecf(y) - nu.ecf(y)).norm_sqr())
}

/// Measure-valued function on `[0, delta]` sampled on the simulation mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasureSegment<T> {
    measures: Vec<EmpiricalMeasure<T>>,
    dt: T,
}

impl<T: Real> MeasureSegment<T> {
    pub fn new(measures: Vec<EmpiricalMeasure<T>>, dt: T) -> Result<Self> {
        if measures.len() < 2 {
            return Err(Error::invalid("measures", "a segment spans at least one step"));
        }
        if !(dt.is_finite() && dt > T::zero()) {
            return Err(Error::invalid("dt", format!("must be positive, got {dt}")));
        }
        Ok(Self { measures, dt })
    }

    pub fn measures(&self) -> &[EmpiricalMeasure<T>] {
        &self.measures
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn delta_steps(&self) -> usize {
        self.measures.len() - 1
    }
}

/// `||a - b||^2` on `M^delta`: trapezoid in `s` of the pointwise measure distance.
pub fn m_segment_dist_sq<T: Real>(a: &MeasureSegment<T>, b: &MeasureSegment<T>, q: &QuadratureRule<T>) -> Result<T> {
    if a.measures.len() != b.measures.len() {
        return Err(Error::MeshMismatch(format!(
            "segments have {} and {} points",
            a.measures.len(),
            b.measures.len()
        )));
    }
    if (a.dt - b.dt).abs() > T::epsilon() * T::lit(16.0) * a.dt {
        return Err(Error::MeshMismatch(format!("steps {} and {}", a.dt, b.dt)));
    }
    let w = trapezoid_weights(a.measures.len(), a.dt);
    Ok(a.measures
        .iter()
        .zip(&b.measures)
        .zip(w)
        .map(|((m1, m2), wk)| wk * m_dist_sq(m1, m2, q))
        .sum())
}

/// Both sides of the bound `||L(X1) - L(X2)||_M^2 <= sqrt(pi) E[(X1 - X2)^2]`
/// for coupled samples `(x1[i], x2[i])`.
pub fn lemma31_gap<T: Real>(x1: &[T], x2: &[T], q: &QuadratureRule<T>) -> Result<(T, T)> {
    if x1.is_empty() || x2.is_empty() {
        return Err(Error::EmptySamples);
    }
    if x1.len() != x2.len() {
        return Err(Error::MeshMismatch(format!("{} vs {} samples", x1.len(), x2.len())));
    }
    let lhs = m_dist_sq(&UniformLaw::new(x1), &UniformLaw::new(x2), q);
    let msd = x1.iter().zip(x2).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>() / T::from_count(x1.len());
    Ok((lhs, T::PI().sqrt() * msd))
}

/// Segment version: laws of coupled discretized segments versus
/// `sqrt(pi) E[int_0^delta (X1 - X2)^2 ds]`.
pub fn lemma31_segment_gap<T: Real>(
    paths1: &[Segment<T>],
    paths2: &[Segment<T>],
    q: &QuadratureRule<T>,
) -> Result<(T, T)> {
    if paths1.is_empty() || paths2.is_empty() {
        return Err(Error::EmptySamples);
    }
    if paths1.len() != paths2.len() {
        return Err(Error::MeshMismatch(format!("{} vs {} sample paths", paths1.len(), paths2.len())));
    }
    let len = paths1[0].len();
    let dt = paths1[0].dt();
    if paths1.iter().chain(paths2).any(|p| p.len() != len) {
        return Err(Error::MeshMismatch("sample segments differ in length".into()));
    }
    let column = |paths: &[Segment<T>], k: usize| -> Vec<T> { paths.iter().map(|p| p.get(k)).collect() };
    let laws = |paths: &[Segment<T>]| -> Result<MeasureSegment<T>> {
        let ms = (0..len)
            .map(|k| EmpiricalMeasure::uniform(column(paths, k)))
            .collect::<Result<Vec<_>>>()?;
        MeasureSegment::new(ms, dt)
    };
    let lhs = m_segment_dist_sq(&laws(paths1)?, &laws(paths2)?, q)?;
    let mean_l2: T = paths1
        .iter()
        .zip(paths2)
        .map(|(a, b)| {
            let diff: Vec<T> = a.values().iter().zip(b.values()).map(|(&x, &y)| x - y).collect();
            Segment::new(diff, dt).expect("same mesh").l2_norm_sq()
        })
        .sum::<T>()
        / T::from_count(paths1.len());
    Ok((lhs, T::PI().sqrt() * mean_l2))
}
