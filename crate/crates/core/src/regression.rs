//! Least-squares projection onto a span of cross-sectional features (plus an intercept),
//! the conditional-expectation estimator of the backward sweep.
//!
//! Features are standardized; collinear ones are dropped by a pivoted Cholesky
//! factorization of their correlation matrix.

use crate::num::Real;

const PIVOT_TOL: f64 = 1e-10;

/// Projector for a fixed design, reusable across responses.
#[derive(Clone, Debug)]
pub struct Projector<T> {
    n: usize,
    // standardized kept features, one column per feature
    z: Vec<Vec<T>>,
    // lower-triangular Cholesky factor of Z^T Z / n, row-major, size z.len()^2
    chol: Vec<T>,
}

impl<T: Real> Projector<T> {
    /// `features[j][p]` is feature `j` of particle `p`.
    pub fn new(features: &[Vec<T>], n: usize) -> Self {
        assert!(n > 0, "projector needs at least one sample");
        let nf = T::from_count(n);
        let mut z = Vec::new();
        for f in features {
            debug_assert_eq!(f.len(), n);
            let mean = f.iter().copied().sum::<T>() / nf;
            let var = f.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let scale = mean.abs().max(T::one());
            if !(var.is_finite() && var.sqrt() > T::lit(1e-12) * scale) {
                continue;
            }
            let sd = var.sqrt();
            z.push(f.iter().map(|&v| (v - mean) / sd).collect::<Vec<T>>());
        }

        let m = z.len();
        let mut gram = vec![T::zero(); m * m];
        for i in 0..m {
            for j in 0..=i {
                let g = dot(&z[i], &z[j]) / nf;
                gram[i * m + j] = g;
                gram[j * m + i] = g;
            }
        }
        if gram.iter().any(|g| !g.is_finite()) {
            log::warn!("non-finite regression design; falling back to the sample mean");
            return Self { n, z: Vec::new(), chol: Vec::new() };
        }

        let order = pivoted_cholesky_order(&gram, m);
        if order.len() < m {
            log::debug!("regression dropped {} collinear feature(s)", m - order.len());
        }
        let z: Vec<Vec<T>> = order.iter().map(|&i| z[i].clone()).collect();
        let k = z.len();
        let mut sub = vec![T::zero(); k * k];
        for (a, &i) in order.iter().enumerate() {
            for (b, &j) in order.iter().enumerate() {
                sub[a * k + b] = gram[i * m + j];
            }
        }
        let chol = cholesky(&sub, k);
        Self { n, z, chol }
    }

    /// Number of non-constant features kept.
    pub fn rank(&self) -> usize {
        self.z.len()
    }

    pub fn samples(&self) -> usize {
        self.n
    }

    /// Fitted values of the least-squares projection of `y`.
    pub fn fit(&self, y: &[T]) -> Vec<T> {
        debug_assert_eq!(y.len(), self.n);
        let nf = T::from_count(self.n);
        let mean = y.iter().copied().sum::<T>() / nf;
        let k = self.z.len();
        if k == 0 {
            return vec![mean; self.n];
        }
        let rhs: Vec<T> = self.z.iter().map(|zj| dot(zj, y) / nf).collect();
        let beta = cholesky_solve(&self.chol, k, &rhs);
        let mut out = vec![mean; self.n];
        for (zj, &b) in self.z.iter().zip(&beta) {
            for (o, &v) in out.iter_mut().zip(zj) {
                *o += b * v;
            }
        }
        out
    }
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Greedy diagonal pivoting; returns kept column indices in pivot order.
fn pivoted_cholesky_order<T: Real>(a: &[T], m: usize) -> Vec<usize> {
    let mut l = vec![T::zero(); m * m];
    let mut diag: Vec<T> = (0..m).map(|i| a[i * m + i]).collect();
    let mut perm: Vec<usize> = (0..m).collect();
    let mut kept = Vec::new();
    let tol = T::lit(PIVOT_TOL);
    for step in 0..m {
        let (best, &dmax) = diag[step..]
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
            .map(|(i, d)| (i + step, d))
            .expect("non-empty");
        if dmax <= tol {
            break;
        }
        perm.swap(step, best);
        diag.swap(step, best);
        for c in 0..step {
            l.swap(step * m + c, best * m + c);
        }
        let pivot = dmax.sqrt();
        l[step * m + step] = pivot;
        for i in step + 1..m {
            let mut v = a[perm[i] * m + perm[step]];
            for c in 0..step {
                v -= l[i * m + c] * l[step * m + c];
            }
            l[i * m + step] = v / pivot;
            diag[i] -= l[i * m + step] * l[i * m + step];
        }
        kept.push(perm[step]);
    }
    kept
}

fn cholesky<T: Real>(a: &[T], k: usize) -> Vec<T> {
    let mut l = vec![T::zero(); k * k];
    for i in 0..k {
        for j in 0..=i {
            let mut s = a[i * k + j];
            for c in 0..j {
                s -= l[i * k + c] * l[j * k + c];
            }
            if i == j {
                l[i * k + i] = s.max(T::lit(PIVOT_TOL)).sqrt();
            } else {
                l[i * k + j] = s / l[j * k + j];
            }
        }
    }
    l
}

fn cholesky_solve<T: Real>(l: &[T], k: usize, b: &[T]) -> Vec<T> {
    let mut y = vec![T::zero(); k];
    for i in 0..k {
        let mut s = b[i];
        for c in 0..i {
            s -= l[i * k + c] * y[c];
        }
        y[i] = s / l[i * k + i];
    }
    let mut x = vec![T::zero(); k];
    for i in (0..k).rev() {
        let mut s = y[i];
        for c in i + 1..k {
            s -= l[c * k + i] * x[c];
        }
        x[i] = s / l[i * k + i];
    }
    x
}
