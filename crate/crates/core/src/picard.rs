//! Fixed-point construction of the solution window by window.
//!
//! On a window `[s, e]` the map `Phi` takes an input path `x` (known exactly up to step `s`)
//! and returns `X(k+1) = X(k) + increment(x at step k)` with frozen noise. Coefficients read
//! the input only, so `Phi` is a deterministic map on path space.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::num::Real;
use crate::segments::Memory;
use crate::sfde::{column_mean, increment, Coefficients, Control, LawWindow, ParticleEnsemble, Simulator, StateView};

/// Iterate distances on one window, `distances[j] = mean_p max_k (X^{(j+1)} - X^{(j)})^2`.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowReport<T> {
    pub start_step: usize,
    pub end_step: usize,
    pub distances: Vec<T>,
    pub converged: bool,
}

impl<T: Real> WindowReport<T> {
    /// `d_{j+1} / d_j`, `None` where `d_j = 0`.
    pub fn ratios(&self) -> Vec<Option<T>> {
        self.distances
            .windows(2)
            .map(|w| if w[0] > T::zero() { Some(w[1] / w[0]) } else { None })
            .collect()
    }

    /// First `j` with `d_j < tol`; the number of iterates computed if none.
    pub fn iterations(&self) -> usize {
        if self.converged {
            self.distances.len() - 1
        } else {
            self.distances.len()
        }
    }

    pub fn first_ratio(&self) -> Option<T> {
        self.ratios().into_iter().next().flatten()
    }

    pub fn last_ratio(&self) -> Option<T> {
        self.ratios().into_iter().flatten().last()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PicardReport<T> {
    pub windows: Vec<WindowReport<T>>,
    pub tolerance: T,
}

impl<T: Real> PicardReport<T> {
    pub fn converged(&self) -> bool {
        self.windows.iter().all(|w| w.converged)
    }

    pub fn window_count(&self) -> usize {
        self.windows.len()
    }
}

/// Solve by Picard iteration on windows of `t0_steps` steps.
pub fn picard_solve<T, C, U>(
    coeffs: &C,
    control: &U,
    sim: &Simulator<T>,
    t0_steps: usize,
    tol: T,
    max_iter: usize,
) -> Result<(ParticleEnsemble<T>, PicardReport<T>)>
where
    T: Real,
    C: Coefficients<T> + ?Sized,
    U: Control<T> + ?Sized,
{
    let grid = sim.grid();
    let n = grid.steps();
    let d = grid.delta_steps();
    let np = grid.particles;
    let dt = grid.dt();
    if t0_steps == 0 || !n.is_multiple_of(t0_steps) {
        return Err(Error::invalid("t0_steps", format!("must be positive and divide the {n} horizon steps")));
    }
    if max_iter == 0 {
        return Err(Error::invalid("max_iter", "need at least one iteration"));
    }
    if !(tol.is_finite() && tol > T::zero()) {
        return Err(Error::invalid("tol", "must be positive"));
    }

    let mut cur = sim.initial_columns();
    let mut means: Vec<T> = cur.iter().map(|c| column_mean(c)).collect();
    let mut controls = vec![vec![T::zero(); np]; n];
    let mut windows = Vec::with_capacity(n / t0_steps);

    for s in (0..n).step_by(t0_steps) {
        let e = s + t0_steps;
        for c in d + s + 1..=d + e {
            let start = cur[d + s].clone();
            cur[c] = start;
            means[c] = means[d + s];
        }
        let mut report = WindowReport { start_step: s, end_step: e, distances: Vec::new(), converged: false };
        let mut next: Vec<Vec<T>> = vec![vec![T::zero(); np]; t0_steps];

        for _ in 0..max_iter {
            // next[i] holds X^{(j+1)} at step s + i + 1
            for i in 0..t0_steps {
                let k = s + i;
                let top = d + k;
                let law = LawWindow::new(&cur, &means, top, d);
                let t = grid.mesh.time(k as isize);
                let (done, rest) = next.split_at_mut(i);
                let base: &[T] = if i == 0 { &cur[d + s] } else { &done[i - 1] };
                let cur_ref = &cur;
                rest[0]
                    .par_iter_mut()
                    .zip(controls[k].par_iter_mut())
                    .enumerate()
                    .try_for_each(|(p, (x_next, u_out))| -> Result<()> {
                        let view = StateView {
                            step: k,
                            t,
                            particle: p,
                            x: cur_ref[top][p],
                            memory: Memory::from_columns(cur_ref, p, top, d, dt),
                            law,
                        };
                        let (dx, u) = increment(coeffs, control, sim.jumps(), sim.noise(), &view)?;
                        *x_next = base[p] + dx;
                        *u_out = u;
                        Ok(())
                    })?;
            }

            let dist = (0..np)
                .into_par_iter()
                .map(|p| {
                    (0..t0_steps)
                        .map(|i| {
                            let diff = next[i][p] - cur[d + s + i + 1][p];
                            diff * diff
                        })
                        .fold(T::zero(), T::max)
                })
                .collect::<Vec<T>>()
                .into_iter()
                .sum::<T>()
                / T::from_count(np);

            for i in 0..t0_steps {
                std::mem::swap(&mut cur[d + s + i + 1], &mut next[i]);
                means[d + s + i + 1] = column_mean(&cur[d + s + i + 1]);
            }
            report.distances.push(dist);
            if dist < tol {
                report.converged = true;
                break;
            }
        }
        log::debug!(
            "picard window [{s}, {e}]: {} iterations, converged = {}",
            report.iterations(),
            report.converged
        );
        windows.push(report);
    }

    let ens = ParticleEnsemble::from_parts(grid.mesh, grid.seed, cur, controls);
    Ok((ens, PicardReport { windows, tolerance: tol }))
}

/// `sup_k mean_p (X_a(k) - X_b(k))^2` over the common mesh.
pub fn consistency_check<T: Real>(a: &ParticleEnsemble<T>, b: &ParticleEnsemble<T>) -> Result<T> {
    if a.mesh() != b.mesh() || a.particles() != b.particles() {
        return Err(Error::MeshMismatch("ensembles differ in mesh or particle count".into()));
    }
    Ok(a
        .columns()
        .iter()
        .zip(b.columns())
        .map(|(ca, cb)| {
            ca.iter().zip(cb).map(|(&x, &y)| (x - y) * (x - y)).sum::<T>() / T::from_count(ca.len())
        })
        .fold(T::zero(), T::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SimGrid;
    use crate::jumps::{JumpModel, MarkLaw};
    use crate::segments::Segment;
    use crate::sfde::{ConstantControl, LinearMemory};

    fn sim(particles: usize, delta: f64, horizon: f64, jumps: JumpModel<f64>) -> Simulator<f64> {
        let dt = 0.01;
        let grid = SimGrid::<f64>::new(dt, delta, horizon, particles, 42).unwrap();
        let xi = Segment::from_fn(grid.delta_steps(), dt, |s| 1.0 - 0.5 * s).unwrap();
        Simulator::new(grid, jumps, xi).unwrap()
    }

    #[test]
    fn state_independent_coefficients_converge_after_one_iteration() {
        let s = sim(200, 0.1, 0.5, JumpModel::none());
        let coeffs = LinearMemory { c0: 0.3, s0: 1.0, ..Default::default() };
        let (ens, report) = picard_solve(&coeffs, &ConstantControl(0.0), &s, 10, 1e-20, 20).unwrap();
        assert!(report.converged());
        assert!(report.windows.iter().all(|w| w.iterations() == 1 && w.distances[1] == 0.0));
        let direct = s.run(&coeffs, &ConstantControl(0.0)).unwrap();
        assert_eq!(consistency_check(&ens, &direct).unwrap(), 0.0);
    }

    #[test]
    fn pure_delay_window_shorter_than_delay_is_exact_at_once() {
        let s = sim(1, 0.5, 1.0, JumpModel::none());
        let coeffs = LinearMemory { clag: 1.0, ..Default::default() };
        let (_, report) = picard_solve(&coeffs, &ConstantControl(0.0), &s, 20, 1e-20, 10).unwrap();
        // t0 = 0.2 < delta: the segment reads only known values
        assert!(report.windows.iter().all(|w| w.distances.len() == 2 && w.distances[1] == 0.0));
    }

    #[test]
    fn linear_drift_contracts_and_matches_direct_solution() {
        let jumps = JumpModel::new(1.0, MarkLaw::Normal { mean: 0.0, sd: 0.1 }).unwrap();
        let s = sim(500, 0.1, 1.0, jumps);
        for l in [0.5, 1.0, 2.0] {
            let coeffs = LinearMemory { cx: l, clag: 0.2, cmean: 0.1, s0: 0.3, sx: 0.1, jump_scale: 1.0, ..Default::default() };
            let (ens, report) = picard_solve(&coeffs, &ConstantControl(0.0), &s, 10, 1e-26, 50).unwrap();
            assert!(report.converged());
            for w in &report.windows {
                assert!(w.ratios().iter().flatten().all(|&r| r < 1.0));
            }
            let direct = s.run(&coeffs, &ConstantControl(0.0)).unwrap();
            assert!(consistency_check(&ens, &direct).unwrap() < 1e-20);
        }
    }

    #[test]
    fn smaller_windows_contract_faster() {
        let s = sim(300, 0.1, 0.4, JumpModel::none());
        let coeffs = LinearMemory { cx: 1.0, s0: 0.5, ..Default::default() };
        let (_, wide) = picard_solve(&coeffs, &ConstantControl(0.0), &s, 10, 1e-26, 50).unwrap();
        let (_, narrow) = picard_solve(&coeffs, &ConstantControl(0.0), &s, 5, 1e-26, 50).unwrap();
        let r_wide = wide.windows[0].first_ratio().unwrap();
        let r_narrow = narrow.windows[0].first_ratio().unwrap();
        assert!(r_narrow < r_wide, "{r_narrow} vs {r_wide}");
    }

    #[test]
    fn non_convergence_is_reported_not_raised() {
        let s = sim(10, 0.1, 0.2, JumpModel::none());
        let coeffs = LinearMemory { cx: 1.0, s0: 0.5, ..Default::default() };
        let (_, report) = picard_solve(&coeffs, &ConstantControl(0.0), &s, 20, 1e-30, 2).unwrap();
        assert!(!report.converged());
        assert_eq!(report.windows[0].iterations(), 2);
    }

    #[test]
    fn window_must_divide_horizon() {
        let s = sim(2, 0.1, 0.2, JumpModel::none());
        assert!(picard_solve(&LinearMemory::default(), &ConstantControl(0.0), &s, 3, 1e-10, 5).is_err());
    }

    #[test]
    fn consistency_check_rejects_mismatched_grids() {
        let a = sim(2, 0.1, 0.2, JumpModel::none()).run(&LinearMemory::default(), &ConstantControl(0.0)).unwrap();
        let b = sim(3, 0.1, 0.2, JumpModel::none()).run(&LinearMemory::default(), &ConstantControl(0.0)).unwrap();
        assert!(consistency_check(&a, &b).is_err());
    }
}
