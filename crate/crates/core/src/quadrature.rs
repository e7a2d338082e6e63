//! Gaussian quadrature rules: Hermite (weight `exp(-y^2)` on the real line) for the
//! measure norm and for normal jump marks, Legendre (`[-1, 1]`) for uniform marks.

use crate::error::{Error, Result};
use crate::num::Real;

/// Default node count of the rule realizing the measure norm.
pub const DEFAULT_HERMITE_NODES: usize = 64;

/// Nodes `y_k` and positive weights `w_k` with `sum_k w_k f(y_k) ~ int f(y) w(y) dy`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule<T> {
    nodes: Vec<T>,
    weights: Vec<T>,
}

impl<T: Real> QuadratureRule<T> {
    /// Gauss-Hermite rule for `int f(y) exp(-y^2) dy`; exact for polynomials of degree `< 2n`.
    pub fn gauss_hermite(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("nodes", "need at least one node"));
        }
        let (x, w) = hermite_f64(n);
        Ok(Self::from_f64(x, w))
    }

    /// Gauss-Legendre rule for `int_{-1}^{1} f(y) dy`.
    pub fn gauss_legendre(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("nodes", "need at least one node"));
        }
        let (x, w) = legendre_f64(n);
        Ok(Self::from_f64(x, w))
    }

    fn from_f64(x: Vec<f64>, w: Vec<f64>) -> Self {
        Self {
            nodes: x.into_iter().map(T::lit).collect(),
            weights: w.into_iter().map(T::lit).collect(),
        }
    }

    pub fn nodes(&self) -> &[T] {
        &self.nodes
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, mut f: impl FnMut(T) -> T) -> T {
        self.nodes.iter().zip(&self.weights).map(|(&y, &w)| w * f(y)).sum()
    }
}

impl<T: Real> Default for QuadratureRule<T> {
    fn default() -> Self {
        Self::gauss_hermite(DEFAULT_HERMITE_NODES).expect("default rule")
    }
}

// Newton iteration on the orthonormal Hermite recurrence, with the classical
// asymptotic starting guesses for the largest roots.
fn hermite_f64(n: usize) -> (Vec<f64>, Vec<f64>) {
    const PIM4: f64 = 0.751_125_544_464_942_5; // pi^{-1/4}
    let nf = n as f64;
    let m = n.div_ceil(2);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..200 {
            let mut p1 = PIM4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    if n % 2 == 1 {
        x[m - 1] = 0.0;
    }
    x.reverse();
    w.reverse();
    (x, w)
}

fn legendre_f64(n: usize) -> (Vec<f64>, Vec<f64>) {
    let nf = n as f64;
    let m = n.div_ceil(2);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..200 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = ((2.0 * jf + 1.0) * z * p2 - jf * p3) / (jf + 1.0);
            }
            pp = nf * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}
