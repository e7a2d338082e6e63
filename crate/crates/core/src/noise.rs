//! Pre-drawn Brownian and jump increments for every particle and step.
//!
//! Particle `p` draws from its own ChaCha8 stream `p` under the master seed, so the bank
//! is identical for any thread count and particle `p` sees the same noise whatever `N` is.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::grid::SimGrid;
use crate::jumps::JumpModel;
use crate::num::Real;

#[derive(Clone, Debug)]
pub struct NoiseBank<T> {
    dt: T,
    steps: usize,
    particles: usize,
    seed: u64,
    intensity: T,
    mark_mean: T,
    mark_second_moment: T,
    brownian: Vec<Vec<T>>,
    // per step, (particle, mark) sorted by particle
    jumps: Vec<Vec<(u32, T)>>,
}

/// Stream for particle `p` under `seed`.
pub fn particle_rng(seed: u64, particle: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(particle as u64);
    rng
}

impl<T: Real> NoiseBank<T> {
    pub fn generate(grid: &SimGrid<T>, jumps: &JumpModel<T>) -> Self {
        let dt = grid.dt();
        let steps = grid.steps();
        let sqrt_dt = dt.as_f64().sqrt();
        let active = jumps.is_active();

        let per_particle: Vec<(Vec<T>, Vec<(usize, T)>)> = (0..grid.particles)
            .into_par_iter()
            .map(|p| {
                let mut rng = particle_rng(grid.seed, p);
                let mut db = Vec::with_capacity(steps);
                let mut marks = Vec::new();
                for k in 0..steps {
                    let z: f64 = rng.sample(StandardNormal);
                    db.push(T::lit(z * sqrt_dt));
                    if active {
                        for _ in 0..jumps.sample_count(dt, &mut rng) {
                            marks.push((k, jumps.sample_mark(&mut rng)));
                        }
                    }
                }
                (db, marks)
            })
            .collect();

        let mut brownian = vec![Vec::with_capacity(grid.particles); steps];
        let mut jump_cols: Vec<Vec<(u32, T)>> = vec![Vec::new(); if active { steps } else { 0 }];
        for (p, (db, marks)) in per_particle.into_iter().enumerate() {
            for (k, v) in db.into_iter().enumerate() {
                brownian[k].push(v);
            }
            for (k, z) in marks {
                jump_cols[k].push((p as u32, z));
            }
        }

        Self {
            dt,
            steps,
            particles: grid.particles,
            seed: grid.seed,
            intensity: jumps.intensity(),
            mark_mean: if active { jumps.mark_mean() } else { T::zero() },
            mark_second_moment: if active { jumps.mark_second_moment() } else { T::zero() },
            brownian,
            jumps: jump_cols,
        }
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn particles(&self) -> usize {
        self.particles
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn has_jumps(&self) -> bool {
        !self.jumps.is_empty()
    }

    /// True if the bank was drawn for this grid.
    pub fn fits(&self, grid: &SimGrid<T>) -> bool {
        self.steps == grid.steps() && self.particles == grid.particles && self.dt == grid.dt() && self.seed == grid.seed
    }

    /// `Delta B_k` for all particles.
    pub fn brownian(&self, k: usize) -> &[T] {
        &self.brownian[k]
    }

    /// Marks of the jumps of particle `p` during step `k`.
    pub fn marks(&self, k: usize, p: usize) -> impl Iterator<Item = T> + '_ {
        let slice: &[(u32, T)] = match self.jumps.get(k) {
            Some(col) => {
                let lo = col.partition_point(|&(q, _)| (q as usize) < p);
                let hi = col.partition_point(|&(q, _)| (q as usize) <= p);
                &col[lo..hi]
            }
            None => &[],
        };
        slice.iter().map(|&(_, z)| z)
    }

    /// `int zeta Ntilde(dt, dzeta)` over step `k`: mark sum minus `lambda E[zeta] dt`.
    pub fn compensated_marks(&self, k: usize) -> Vec<T> {
        let comp = self.intensity * self.mark_mean * self.dt;
        let mut out = vec![-comp; self.particles];
        if let Some(col) = self.jumps.get(k) {
            for &(p, z) in col {
                out[p as usize] += z;
            }
        }
        out
    }

    /// `lambda E[zeta^2]`, the variance rate of the compensated mark sum.
    pub fn mark_variance_rate(&self) -> T {
        self.intensity * self.mark_second_moment
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jumps::MarkLaw;

    fn grid(particles: usize, seed: u64) -> SimGrid<f64> {
        SimGrid::new(0.1, 0.2, 1.0, particles, seed).unwrap()
    }

    #[test]
    fn same_seed_same_bank() {
        let j = JumpModel::new(2.0, MarkLaw::Normal { mean: 0.0, sd: 1.0 }).unwrap();
        let a = NoiseBank::generate(&grid(50, 3), &j);
        let b = NoiseBank::generate(&grid(50, 3), &j);
        assert_eq!(a.brownian, b.brownian);
        assert_eq!(a.jumps, b.jumps);
        let c = NoiseBank::generate(&grid(50, 4), &j);
        assert_ne!(a.brownian, c.brownian);
    }

    #[test]
    fn particle_streams_do_not_depend_on_ensemble_size() {
        let j = JumpModel::none();
        let small = NoiseBank::generate(&grid(5, 9), &j);
        let large = NoiseBank::generate(&grid(40, 9), &j);
        for k in 0..small.steps() {
            assert_eq!(small.brownian(k), &large.brownian(k)[..5]);
        }
    }

    #[test]
    fn brownian_increments_have_variance_dt() {
        let g = SimGrid::new(0.01, 0.01, 1.0, 20_000, 1).unwrap();
        let bank = NoiseBank::generate(&g, &JumpModel::none());
        let all: Vec<f64> = (0..bank.steps()).flat_map(|k| bank.brownian(k).to_vec()).collect();
        let n = all.len() as f64;
        let mean = all.iter().sum::<f64>() / n;
        let var = all.iter().map(|v| v * v).sum::<f64>() / n - mean * mean;
        assert!(mean.abs() < 4.0 * (0.01 / n).sqrt());
        assert!((var / 0.01 - 1.0).abs() < 4.0 * (2.0 / n).sqrt());
    }

    #[test]
    fn marks_lookup_and_compensation() {
        let j = JumpModel::new(5.0, MarkLaw::Dirac(1.0)).unwrap();
        let bank = NoiseBank::generate(&grid(200, 2), &j);
        for k in 0..bank.steps() {
            let comp = bank.compensated_marks(k);
            for (p, &c) in comp.iter().enumerate() {
                let count = bank.marks(k, p).count() as f64;
                assert!((c - (count - 0.5)).abs() < 1e-12);
            }
        }
        assert_eq!(bank.mark_variance_rate(), 5.0);
    }
}
