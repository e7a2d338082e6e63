//! Uniform time mesh with the memory length an exact multiple of the step.

use crate::error::{Error, Result};
use crate::num::Real;

/// Converts `value` to a step count, requiring it to be an integer multiple of `dt`.
pub(crate) fn exact_steps<T: Real>(field: &'static str, value: T, dt: T) -> Result<usize> {
    if !(value.is_finite() && value >= T::zero()) {
        return Err(Error::invalid(field, format!("must be finite and non-negative, got {value}")));
    }
    let ratio = value / dt;
    let steps = ratio.round();
    let slack = (T::lit(1e-9)).max(T::epsilon() * T::lit(64.0)) * steps.max(T::one());
    if (ratio - steps).abs() > slack {
        return Err(Error::NotMultiple { field, value: value.as_f64(), dt: dt.as_f64() });
    }
    steps
        .to_usize()
        .ok_or_else(|| Error::invalid(field, "step count overflows usize"))
}

/// Time mesh `t_k = k dt` covering `[-delta, T]`, with `delta = D dt` and `T = n dt`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeMesh<T> {
    dt: T,
    delta_steps: usize,
    horizon_steps: usize,
}

impl<T: Real> TimeMesh<T> {
    pub fn new(dt: T, delta: T, horizon: T) -> Result<Self> {
        if !(dt.is_finite() && dt > T::zero()) {
            return Err(Error::invalid("dt", format!("must be positive, got {dt}")));
        }
        let delta_steps = exact_steps("delta", delta, dt)?;
        let horizon_steps = exact_steps("horizon", horizon, dt)?;
        Self::from_steps(dt, delta_steps, horizon_steps)
    }

    pub fn from_steps(dt: T, delta_steps: usize, horizon_steps: usize) -> Result<Self> {
        if !(dt.is_finite() && dt > T::zero()) {
            return Err(Error::invalid("dt", format!("must be positive, got {dt}")));
        }
        if delta_steps == 0 {
            return Err(Error::invalid("delta", "memory length must be at least one step"));
        }
        if horizon_steps == 0 {
            return Err(Error::invalid("horizon", "horizon must be at least one step"));
        }
        Ok(Self { dt, delta_steps, horizon_steps })
    }

    #[inline]
    pub fn dt(&self) -> T {
        self.dt
    }

    #[inline]
    pub fn delta_steps(&self) -> usize {
        self.delta_steps
    }

    #[inline]
    pub fn horizon_steps(&self) -> usize {
        self.horizon_steps
    }

    pub fn delta(&self) -> T {
        self.dt * T::from_count(self.delta_steps)
    }

    pub fn horizon(&self) -> T {
        self.dt * T::from_count(self.horizon_steps)
    }

    /// Time of (possibly negative) mesh index `k`.
    #[inline]
    pub fn time(&self, k: isize) -> T {
        self.dt * T::from_isize(k).expect("mesh index fits")
    }

    /// Mesh index of `t`, failing when `t` is not a mesh point.
    pub fn index_of(&self, t: T) -> Result<isize> {
        mesh_index(t, self.dt)
    }
}

pub(crate) fn mesh_index<T: Real>(t: T, dt: T) -> Result<isize> {
    let ratio = t / dt;
    let k = ratio.round();
    let slack = T::lit(1e-9).max(T::epsilon() * T::lit(64.0)) * k.abs().max(T::one());
    if !t.is_finite() || (ratio - k).abs() > slack {
        return Err(Error::OffMesh { time: t.as_f64(), dt: dt.as_f64() });
    }
    k.to_isize().ok_or(Error::OffMesh { time: t.as_f64(), dt: dt.as_f64() })
}

/// Mesh plus ensemble size and master seed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimGrid<T> {
    pub mesh: TimeMesh<T>,
    pub particles: usize,
    pub seed: u64,
}

impl<T: Real> SimGrid<T> {
    pub fn new(dt: T, delta: T, horizon: T, particles: usize, seed: u64) -> Result<Self> {
        let mesh = TimeMesh::new(dt, delta, horizon)?;
        Self::with_mesh(mesh, particles, seed)
    }

    pub fn with_mesh(mesh: TimeMesh<T>, particles: usize, seed: u64) -> Result<Self> {
        if particles == 0 {
            return Err(Error::invalid("particles", "need at least one particle"));
        }
        Ok(Self { mesh, particles, seed })
    }

    pub fn dt(&self) -> T {
        self.mesh.dt()
    }

    pub fn steps(&self) -> usize {
        self.mesh.horizon_steps()
    }

    pub fn delta_steps(&self) -> usize {
        self.mesh.delta_steps()
    }
}
