//! Path segments: backward (memory) windows `x_t(s) = x(t - s)` and forward
//! windows `x^t(s) = x(t + s)` for `s` in `[0, delta]`, stored on the simulation mesh.

use crate::error::{Error, Result};
use crate::grid::mesh_index;
use crate::num::{trapezoid_weights, Real};

/// Sample path on consecutive mesh points `first_step..=last_step`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridPath<T> {
    values: Vec<T>,
    dt: T,
    delta_steps: usize,
    first_step: isize,
}

impl<T: Real> GridPath<T> {
    /// `values[i]` is the path at time `(first_step + i) * dt`.
    pub fn new(values: Vec<T>, dt: T, delta_steps: usize, first_step: isize) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("values", "path must have at least one point"));
        }
        if !(dt.is_finite() && dt > T::zero()) {
            return Err(Error::invalid("dt", format!("must be positive, got {dt}")));
        }
        if delta_steps == 0 {
            return Err(Error::invalid("delta_steps", "must be at least one"));
        }
        Ok(Self { values, dt, delta_steps, first_step })
    }

    /// Samples `f` on `first_step..=last_step`.
    pub fn from_fn(
        dt: T,
        delta_steps: usize,
        first_step: isize,
        last_step: isize,
        f: impl Fn(T) -> T,
    ) -> Result<Self> {
        if last_step < first_step {
            return Err(Error::invalid("last_step", "must not precede first_step"));
        }
        let values = (first_step..=last_step)
            .map(|k| f(dt * T::from_isize(k).expect("mesh index fits")))
            .collect();
        Self::new(values, dt, delta_steps, first_step)
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn delta_steps(&self) -> usize {
        self.delta_steps
    }

    pub fn first_step(&self) -> isize {
        self.first_step
    }

    pub fn last_step(&self) -> isize {
        self.first_step + self.values.len() as isize - 1
    }

    pub fn start_time(&self) -> T {
        self.dt * T::from_isize(self.first_step).unwrap()
    }

    pub fn end_time(&self) -> T {
        self.dt * T::from_isize(self.last_step()).unwrap()
    }

    #[inline]
    pub fn at_step(&self, k: isize) -> Option<T> {
        let i = k - self.first_step;
        if i < 0 {
            None
        } else {
            self.values.get(i as usize).copied()
        }
    }

    pub fn step_of(&self, t: T) -> Result<isize> {
        mesh_index(t, self.dt)
    }

    pub fn value(&self, t: T) -> Result<T> {
        let k = self.step_of(t)?;
        self.at_step(k).ok_or_else(|| self.out_of_range(t))
    }

    fn out_of_range(&self, t: T) -> Error {
        Error::OutOfRange {
            time: t.as_f64(),
            start: self.start_time().as_f64(),
            end: self.end_time().as_f64(),
        }
    }
}

/// Function on `[0, delta]` sampled at `s_k = k dt`, `k = 0..=D`.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment<T> {
    values: Vec<T>,
    dt: T,
}

impl<T: Real> Segment<T> {
    pub fn new(values: Vec<T>, dt: T) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::invalid("values", "a segment spans at least one step"));
        }
        if !(dt.is_finite() && dt > T::zero()) {
            return Err(Error::invalid("dt", format!("must be positive, got {dt}")));
        }
        Ok(Self { values, dt })
    }

    pub fn constant(c: T, delta_steps: usize, dt: T) -> Result<Self> {
        Self::new(vec![c; delta_steps + 1], dt)
    }

    /// Samples `f(s)` for `s = k dt`.
    pub fn from_fn(delta_steps: usize, dt: T, f: impl Fn(T) -> T) -> Result<Self> {
        Self::new((0..=delta_steps).map(|k| f(dt * T::from_count(k))).collect(), dt)
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    #[inline]
    pub fn get(&self, k: usize) -> T {
        self.values[k]
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn delta_steps(&self) -> usize {
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sup_norm(&self) -> T {
        sup_norm(&self.values)
    }

    /// Trapezoid approximation of the integral of the squared segment over `[0, delta]`.
    pub fn l2_norm_sq(&self) -> T {
        l2_norm_sq(&self.values, self.dt)
    }

    pub fn reversed(&self) -> Self {
        let mut values = self.values.clone();
        values.reverse();
        Self { values, dt: self.dt }
    }

    pub fn scaled(&self, c: T) -> Self {
        Self { values: self.values.iter().map(|&v| v * c).collect(), dt: self.dt }
    }

    pub fn as_memory(&self) -> Memory<'_, T> {
        Memory::from_lagged(&self.values, self.dt)
    }
}

fn sup_norm<T: Real>(values: &[T]) -> T {
    values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
}

fn l2_norm_sq<T: Real>(values: &[T], dt: T) -> T {
    trapezoid_weights(values.len(), dt)
        .into_iter()
        .zip(values)
        .map(|(w, &v)| w * v * v)
        .sum()
}

/// Backward segment `values[k] = path(t - k dt)`.
pub fn backward_segment<T: Real>(path: &GridPath<T>, t: T) -> Result<Segment<T>> {
    let top = path.step_of(t)?;
    if top < 0 {
        return Err(Error::invalid("t", "backward segments are taken at t >= 0"));
    }
    let values = (0..=path.delta_steps as isize)
        .map(|k| path.at_step(top - k).ok_or_else(|| path.out_of_range(path.dt * T::from_isize(top - k).unwrap())))
        .collect::<Result<Vec<_>>>()?;
    Segment::new(values, path.dt)
}

/// Forward segment `values[k] = path(t + k dt)`; every point must be stored.
pub fn forward_segment<T: Real>(path: &GridPath<T>, t: T) -> Result<Segment<T>> {
    let start = path.step_of(t)?;
    let values = (0..=path.delta_steps as isize)
        .map(|k| {
            path.at_step(start + k)
                .ok_or_else(|| path.out_of_range(path.dt * T::from_isize(start + k).unwrap()))
        })
        .collect::<Result<Vec<_>>>()?;
    Segment::new(values, path.dt)
}

/// Forward segment where points past the end of the path read `fill`
/// (for instance `q0(t) = 0` for `t > T`).
pub fn forward_segment_extended<T: Real>(path: &GridPath<T>, t: T, fill: T) -> Result<Segment<T>> {
    let start = path.step_of(t)?;
    if start < path.first_step || start > path.last_step() {
        return Err(path.out_of_range(t));
    }
    let values = (0..=path.delta_steps as isize)
        .map(|k| path.at_step(start + k).unwrap_or(fill))
        .collect();
    Segment::new(values, path.dt)
}

#[derive(Clone, Copy, Debug)]
enum Source<'a, T> {
    /// Slice already in lag order.
    Lagged(&'a [T]),
    /// Time-major ensemble storage; lag `k` is `cols[top - k][particle]`.
    Columns { cols: &'a [Vec<T>], particle: usize, top: usize },
}

/// Borrowed backward window handed to coefficient functions: `at(k)` is the
/// value `k` steps in the past.
#[derive(Clone, Copy, Debug)]
pub struct Memory<'a, T> {
    source: Source<'a, T>,
    len: usize,
    dt: T,
}

impl<'a, T: Real> Memory<'a, T> {
    pub fn from_lagged(values: &'a [T], dt: T) -> Self {
        Self { source: Source::Lagged(values), len: values.len(), dt }
    }

    /// Window over time-major columns ending at column `top`; needs `top >= delta_steps`.
    pub(crate) fn from_columns(cols: &'a [Vec<T>], particle: usize, top: usize, delta_steps: usize, dt: T) -> Self {
        debug_assert!(top >= delta_steps);
        Self { source: Source::Columns { cols, particle, top }, len: delta_steps + 1, dt }
    }

    #[inline]
    pub fn at(&self, lag: usize) -> T {
        debug_assert!(lag < self.len);
        match self.source {
            Source::Lagged(v) => v[lag],
            Source::Columns { cols, particle, top } => cols[top - lag][particle],
        }
    }

    #[inline]
    pub fn current(&self) -> T {
        self.at(0)
    }

    /// Value at the far end of the window, `x(t - delta)`.
    #[inline]
    pub fn oldest(&self) -> T {
        self.at(self.len - 1)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn delta_steps(&self) -> usize {
        self.len - 1
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    /// Trapezoid approximation of `int_0^delta kernel(s) x(t - s) ds`; `kernel` is sampled in lag order.
    pub fn integrate(&self, kernel: &[T]) -> T {
        debug_assert_eq!(kernel.len(), self.len);
        let last = self.len - 1;
        let half = T::lit(0.5);
        let mut acc = T::zero();
        for (k, &a) in kernel.iter().enumerate() {
            let w = if k == 0 || k == last { half } else { T::one() };
            acc += w * a * self.at(k);
        }
        acc * self.dt
    }

    pub fn to_segment(&self) -> Segment<T> {
        Segment { values: (0..self.len).map(|k| self.at(k)).collect(), dt: self.dt }
    }

    pub fn sup_norm(&self) -> T {
        (0..self.len).fold(T::zero(), |m, k| m.max(self.at(k).abs()))
    }

    pub fn l2_norm_sq(&self) -> T {
        let v: Vec<T> = (0..self.len).map(|k| self.at(k)).collect();
        l2_norm_sq(&v, self.dt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn identity_path() -> GridPath<f64> {
        // path(t) = t on [-1, 2], dt = 0.1, delta = 0.5
        GridPath::from_fn(0.1, 5, -10, 20, |t| t).unwrap()
    }

    #[test]
    fn backward_segment_of_identity() {
        let seg = backward_segment(&identity_path(), 1.0).unwrap();
        let expected = [1.0, 0.9, 0.8, 0.7, 0.6, 0.5];
        for (v, e) in seg.values().iter().zip(expected) {
            assert!((v - e).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_segment_of_constant() {
        let p = GridPath::from_fn(0.1, 5, -5, 10, |_| 3.0).unwrap();
        assert!(backward_segment(&p, 0.7).unwrap().values().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn backward_segment_at_zero_is_initial_data_reversed() {
        // xi(t) = t^2 + 1 on [-0.5, 0]; x_0(s) = xi(-s)
        let xi = GridPath::from_fn(0.1, 5, -5, 0, |t| t * t + 1.0).unwrap();
        let seg = backward_segment(&xi, 0.0).unwrap();
        for k in 0..=5 {
            let s = 0.1 * k as f64;
            assert!((seg.get(k) - (s * s + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_segment_rejects_off_mesh_time() {
        assert!(matches!(backward_segment(&identity_path(), 1.05), Err(Error::OffMesh { .. })));
    }

    #[test]
    fn forward_segment_of_identity() {
        let seg = forward_segment(&identity_path(), 1.0).unwrap();
        for k in 0..=5 {
            assert!((seg.get(k) - (1.0 + 0.1 * k as f64)).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_segment_past_end_uses_fill() {
        let p = identity_path();
        assert!(forward_segment(&p, 2.0).is_err());
        let seg = forward_segment_extended(&p, 2.0, 0.0).unwrap();
        assert!((seg.get(0) - 2.0).abs() < 1e-12);
        assert!(seg.values()[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_segment_of_constant() {
        let p = GridPath::from_fn(0.1, 5, 0, 20, |_| -1.5).unwrap();
        assert!(forward_segment(&p, 1.0).unwrap().values().iter().all(|&v| v == -1.5));
    }

    #[test]
    fn norms_of_linear_segment() {
        let seg = Segment::<f64>::from_fn(500, 0.001, |s| 1.0 - s).unwrap();
        assert!((seg.sup_norm() - 1.0).abs() < 1e-15);
        // int_0^0.5 (1-s)^2 ds = 7/24; trapezoid error O(dt^2)
        assert!((seg.l2_norm_sq() - 7.0 / 24.0).abs() < 1e-6);
    }

    #[test]
    fn norms_of_zero_and_constant() {
        let z = Segment::<f64>::constant(0.0, 4, 0.25).unwrap();
        assert_eq!((z.sup_norm(), z.l2_norm_sq()), (0.0, 0.0));
        let c = Segment::<f64>::constant(2.0, 4, 0.25).unwrap();
        assert!((c.sup_norm() - 2.0).abs() < 1e-15);
        assert!((c.l2_norm_sq() - 4.0).abs() < 1e-14);
    }

    #[test]
    fn memory_view_matches_owned_segment() {
        let seg = Segment::<f64>::from_fn(4, 0.25, |s| s.sin()).unwrap();
        let m = seg.as_memory();
        assert_eq!(m.to_segment(), seg);
        assert_eq!(m.oldest(), seg.get(4));
        assert!((m.l2_norm_sq() - seg.l2_norm_sq()).abs() < 1e-15);
        let kernel = vec![1.0; 5];
        // trapezoid of sin over [0, 1]
        let direct: f64 = trapezoid_weights(5, 0.25).iter().zip(seg.values()).map(|(w, v)| w * v).sum();
        assert!((m.integrate(&kernel) - direct).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn backward_lookup_round_trip(vals in prop::collection::vec(-10.0f64..10.0, 30), top in 6usize..30) {
            let p = GridPath::new(vals.clone(), 0.1, 5, -6).unwrap();
            let t = 0.1 * (top as f64 - 6.0);
            let seg = backward_segment(&p, t).unwrap();
            for k in 0..=5 {
                prop_assert_eq!(seg.get(k), vals[top - k]);
            }
        }

        #[test]
        fn forward_reversed_mirrors_backward(vals in prop::collection::vec(-10.0f64..10.0, 30), top in 11usize..30) {
            let p = GridPath::new(vals, 0.1, 5, -6).unwrap();
            let t = 0.1 * (top as f64 - 6.0);
            let back = backward_segment(&p, t).unwrap();
            let fwd = forward_segment(&p, t - 0.5).unwrap();
            prop_assert_eq!(fwd.reversed(), back);
        }

        #[test]
        fn norms_are_homogeneous(vals in prop::collection::vec(-10.0f64..10.0, 2..20), c in -5.0f64..5.0) {
            let seg = Segment::new(vals, 0.05).unwrap();
            let scaled = seg.scaled(c);
            prop_assert!((scaled.sup_norm() - c.abs() * seg.sup_norm()).abs() <= 1e-12 * (1.0 + seg.sup_norm()));
            prop_assert!((scaled.l2_norm_sq() - c * c * seg.l2_norm_sq()).abs() <= 1e-10 * (1.0 + seg.l2_norm_sq()));
        }
    }
}
