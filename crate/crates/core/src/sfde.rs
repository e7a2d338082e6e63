//! Euler-Maruyama particle scheme for
//! `dX = b dt + sigma dB + int gamma Ntilde(dt, dz)` where the coefficients read the
//! current state, its memory segment, the empirical law and its segment, and a control.
//!
//! State is stored time-major: one column of `N` particle values per mesh step
//! `k = -D..=n`, column index `D + k`. Step `k -> k + 1` reads columns `<= D + k` only.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{SimGrid, TimeMesh};
use crate::jumps::JumpModel;
use crate::measure::{EmpiricalMeasure, MeasureSegment, UniformLaw};
use crate::noise::NoiseBank;
use crate::num::{Estimate, Real};
use crate::segments::{GridPath, Memory, Segment};

/// Empirical law of the ensemble over the memory window ending at the current step.
#[derive(Clone, Copy, Debug)]
pub struct LawWindow<'a, T> {
    cols: &'a [Vec<T>],
    means: &'a [T],
    top: usize,
    delta_steps: usize,
}

impl<'a, T: Real> LawWindow<'a, T> {
    pub(crate) fn new(cols: &'a [Vec<T>], means: &'a [T], top: usize, delta_steps: usize) -> Self {
        Self { cols, means, top, delta_steps }
    }

    /// `M(t)`.
    pub fn current(&self) -> UniformLaw<'a, T> {
        UniformLaw::new(&self.cols[self.top])
    }

    /// `M(t - lag dt)`, `lag <= delta_steps`.
    pub fn at(&self, lag: usize) -> UniformLaw<'a, T> {
        debug_assert!(lag <= self.delta_steps);
        UniformLaw::new(&self.cols[self.top - lag])
    }

    pub fn mean(&self, lag: usize) -> T {
        debug_assert!(lag <= self.delta_steps);
        self.means[self.top - lag]
    }

    pub fn delta_steps(&self) -> usize {
        self.delta_steps
    }
}

/// Everything a coefficient may read about particle `particle` at step `step`.
#[derive(Clone, Copy, Debug)]
pub struct StateView<'a, T> {
    pub step: usize,
    pub t: T,
    pub particle: usize,
    pub x: T,
    pub memory: Memory<'a, T>,
    pub law: LawWindow<'a, T>,
}

impl<T: Real> StateView<'_, T> {
    /// `x(t - delta)`.
    pub fn delayed(&self) -> T {
        self.memory.oldest()
    }
}

/// Coefficients `(b, sigma, gamma)` and costs `(l, h)` of a controlled equation.
pub trait Coefficients<T: Real>: Sync {
    fn drift(&self, s: &StateView<'_, T>, u: T) -> T;

    fn diffusion(&self, s: &StateView<'_, T>, u: T) -> T;

    /// Jump size for a jump with mark `mark`.
    fn jump(&self, _s: &StateView<'_, T>, _u: T, _mark: T) -> T {
        T::zero()
    }

    fn running_cost(&self, _s: &StateView<'_, T>, _u: T) -> T {
        T::zero()
    }

    fn terminal_cost(&self, _x: T, _law: &UniformLaw<'_, T>) -> T {
        T::zero()
    }

    /// Declared Lipschitz constant in `(x, segment, law)`, if known.
    fn lipschitz(&self) -> Option<T> {
        None
    }
}

/// A control policy: feedback on the state view, or an open-loop path looked up by step.
pub trait Control<T: Real>: Sync {
    fn value(&self, s: &StateView<'_, T>) -> Result<T>;
}

impl<T: Real, C: Control<T> + ?Sized> Control<T> for &C {
    fn value(&self, s: &StateView<'_, T>) -> Result<T> {
        (**self).value(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstantControl<T>(pub T);

impl<T: Real> Control<T> for ConstantControl<T> {
    fn value(&self, _s: &StateView<'_, T>) -> Result<T> {
        Ok(self.0)
    }
}

/// Deterministic open-loop control `u_k`, shared by all particles.
#[derive(Clone, Debug, PartialEq)]
pub struct PathControl<T>(pub Vec<T>);

impl<T: Real> Control<T> for PathControl<T> {
    fn value(&self, s: &StateView<'_, T>) -> Result<T> {
        Ok(self.0[s.step])
    }
}

/// Adapted control given per step and particle, `columns[k][p]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptedControl<T> {
    pub columns: Vec<Vec<T>>,
}

impl<T: Real> Control<T> for AdaptedControl<T> {
    fn value(&self, s: &StateView<'_, T>) -> Result<T> {
        Ok(self.columns[s.step][s.particle])
    }
}

/// Feedback control from a closure.
pub struct FeedbackControl<F>(pub F);

impl<T, F> Control<T> for FeedbackControl<F>
where
    T: Real,
    F: Fn(&StateView<'_, T>) -> Result<T> + Sync,
{
    fn value(&self, s: &StateView<'_, T>) -> Result<T> {
        (self.0)(s)
    }
}

/// `scale * base + shift`.
pub struct AffineControl<'a, T> {
    pub base: &'a dyn Control<T>,
    pub scale: T,
    pub shift: T,
}

impl<T: Real> Control<T> for AffineControl<'_, T> {
    fn value(&self, s: &StateView<'_, T>) -> Result<T> {
        Ok(self.scale * self.base.value(s)? + self.shift)
    }
}

/// `base + eps * direction`.
pub struct PerturbedControl<'a, T> {
    pub base: &'a dyn Control<T>,
    pub direction: &'a dyn Control<T>,
    pub eps: T,
}

impl<T: Real> Control<T> for PerturbedControl<'_, T> {
    fn value(&self, s: &StateView<'_, T>) -> Result<T> {
        if self.eps == T::zero() {
            return self.base.value(s);
        }
        Ok(self.base.value(s)? + self.eps * self.direction.value(s)?)
    }
}

/// Simulated particle paths on `[-delta, T]` with the controls used on `[0, T)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleEnsemble<T> {
    mesh: TimeMesh<T>,
    particles: usize,
    seed: u64,
    states: Vec<Vec<T>>,
    controls: Vec<Vec<T>>,
    means: Vec<T>,
}

impl<T: Real> ParticleEnsemble<T> {
    pub(crate) fn from_parts(
        mesh: TimeMesh<T>,
        seed: u64,
        states: Vec<Vec<T>>,
        controls: Vec<Vec<T>>,
    ) -> Self {
        let particles = states[0].len();
        let means = states.iter().map(|c| column_mean(c)).collect();
        Self { mesh, particles, seed, states, controls, means }
    }

    pub fn mesh(&self) -> &TimeMesh<T> {
        &self.mesh
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

    pub fn particles(&self) -> usize {
        self.particles
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn time(&self, k: isize) -> T {
        self.mesh.time(k)
    }

    fn col_index(&self, k: isize) -> usize {
        let c = k + self.delta_steps() as isize;
        assert!(c >= 0 && (c as usize) < self.states.len(), "step {k} outside the stored range");
        c as usize
    }

    /// `X(k dt)` for all particles, `-D <= k <= n`.
    pub fn column(&self, k: isize) -> &[T] {
        &self.states[self.col_index(k)]
    }

    /// All state columns, index `D + k`.
    pub fn columns(&self) -> &[Vec<T>] {
        &self.states
    }

    /// Control used on step `k -> k + 1`.
    pub fn control_column(&self, k: usize) -> &[T] {
        &self.controls[k]
    }

    pub fn controls(&self) -> &[Vec<T>] {
        &self.controls
    }

    pub fn mean(&self, k: isize) -> T {
        self.means[self.col_index(k)]
    }

    pub fn terminal(&self) -> &[T] {
        self.column(self.steps() as isize)
    }

    pub fn law_at_step(&self, k: isize) -> UniformLaw<'_, T> {
        UniformLaw::new(self.column(k))
    }

    pub fn law_at(&self, t: T) -> Result<EmpiricalMeasure<T>> {
        let k = self.checked_step(t)?;
        EmpiricalMeasure::uniform(self.column(k).to_vec())
    }

    /// `{M(t - s)}_{s in [0, delta]}` in lag order, `0 <= t <= T`.
    pub fn law_segment(&self, t: T) -> Result<MeasureSegment<T>> {
        let k = self.checked_step(t)?;
        if k < 0 {
            return Err(Error::OutOfRange {
                time: t.as_f64(),
                start: 0.0,
                end: self.mesh.horizon().as_f64(),
            });
        }
        let measures = (0..=self.delta_steps())
            .map(|lag| EmpiricalMeasure::uniform(self.column(k - lag as isize).to_vec()))
            .collect::<Result<Vec<_>>>()?;
        MeasureSegment::new(measures, self.dt())
    }

    fn checked_step(&self, t: T) -> Result<isize> {
        let k = self.mesh.index_of(t)?;
        let d = self.delta_steps() as isize;
        if k < -d || k > self.steps() as isize {
            return Err(Error::OutOfRange {
                time: t.as_f64(),
                start: -self.mesh.delta().as_f64(),
                end: self.mesh.horizon().as_f64(),
            });
        }
        Ok(k)
    }

    pub fn path(&self, p: usize) -> GridPath<T> {
        let values = self.states.iter().map(|c| c[p]).collect();
        GridPath::new(values, self.dt(), self.delta_steps(), -(self.delta_steps() as isize))
            .expect("ensemble columns form a valid path")
    }

    /// Backward segment `X_t` of particle `p` at step `k >= 0`.
    pub fn memory(&self, k: usize, p: usize) -> Memory<'_, T> {
        Memory::from_columns(&self.states, p, self.delta_steps() + k, self.delta_steps(), self.dt())
    }

    pub fn law_window(&self, k: usize) -> LawWindow<'_, T> {
        LawWindow { cols: &self.states, means: &self.means, top: self.delta_steps() + k, delta_steps: self.delta_steps() }
    }

    pub fn view(&self, k: usize, p: usize) -> StateView<'_, T> {
        StateView {
            step: k,
            t: self.time(k as isize),
            particle: p,
            x: self.states[self.delta_steps() + k][p],
            memory: self.memory(k, p),
            law: self.law_window(k),
        }
    }

    /// Per-step summary rows for `k = 0..=n`.
    pub fn law_stats(&self, probs: &[T]) -> Vec<LawStats<T>> {
        (0..=self.steps() as isize)
            .map(|k| {
                let law = self.law_at_step(k);
                LawStats {
                    t: self.time(k),
                    mean: self.mean(k),
                    variance: law.variance(),
                    quantiles: probs.iter().map(|&q| law.quantile(q)).collect(),
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LawStats<T> {
    pub t: T,
    pub mean: T,
    pub variance: T,
    pub quantiles: Vec<T>,
}

pub(crate) fn column_mean<T: Real>(c: &[T]) -> T {
    c.iter().copied().sum::<T>() / T::from_count(c.len())
}

/// One Euler increment for particle `p` on step `k`, reading coefficients at `view`.
/// Returns `(increment, control)`.
pub(crate) fn increment<T, C, U>(
    coeffs: &C,
    control: &U,
    jumps: &JumpModel<T>,
    noise: &NoiseBank<T>,
    view: &StateView<'_, T>,
) -> Result<(T, T)>
where
    T: Real,
    C: Coefficients<T> + ?Sized,
    U: Control<T> + ?Sized,
{
    let k = view.step;
    let p = view.particle;
    let dt = noise.dt();
    let u = control.value(view)?;
    if !u.is_finite() {
        return Err(non_finite(k, view.t, p));
    }
    let mut dx = coeffs.drift(view, u) * dt + coeffs.diffusion(view, u) * noise.brownian(k)[p];
    if jumps.is_active() {
        for z in noise.marks(k, p) {
            dx += coeffs.jump(view, u, z);
        }
        dx -= dt * jumps.nu_integral(|z| coeffs.jump(view, u, z));
    }
    if !dx.is_finite() {
        return Err(non_finite(k, view.t, p));
    }
    Ok((dx, u))
}

fn non_finite<T: Real>(step: usize, t: T, particle: usize) -> Error {
    Error::NonFinite { step, time: t.as_f64(), particle }
}

/// Grid, jump law, initial segment and a frozen noise bank.
#[derive(Clone, Debug)]
pub struct Simulator<T> {
    grid: SimGrid<T>,
    jumps: JumpModel<T>,
    xi: Segment<T>,
    noise: Arc<NoiseBank<T>>,
}

impl<T: Real> Simulator<T> {
    pub fn new(grid: SimGrid<T>, jumps: JumpModel<T>, xi: Segment<T>) -> Result<Self> {
        check_initial(&grid, &xi)?;
        let noise = Arc::new(NoiseBank::generate(&grid, &jumps));
        Ok(Self { grid, jumps, xi, noise })
    }

    /// Reuse an existing noise bank (common random numbers).
    pub fn with_noise(grid: SimGrid<T>, jumps: JumpModel<T>, xi: Segment<T>, noise: Arc<NoiseBank<T>>) -> Result<Self> {
        check_initial(&grid, &xi)?;
        if !noise.fits(&grid) {
            return Err(Error::MeshMismatch("noise bank was drawn for a different grid or seed".into()));
        }
        Ok(Self { grid, jumps, xi, noise })
    }

    pub fn grid(&self) -> &SimGrid<T> {
        &self.grid
    }

    pub fn jumps(&self) -> &JumpModel<T> {
        &self.jumps
    }

    pub fn xi(&self) -> &Segment<T> {
        &self.xi
    }

    pub fn noise(&self) -> &Arc<NoiseBank<T>> {
        &self.noise
    }

    /// Columns `-D..=0` filled from the initial segment, remaining columns zero.
    pub(crate) fn initial_columns(&self) -> Vec<Vec<T>> {
        let d = self.grid.delta_steps();
        let n = self.grid.steps();
        let np = self.grid.particles;
        let mut states = Vec::with_capacity(d + n + 1);
        for c in 0..=d {
            states.push(vec![self.xi.get(d - c); np]);
        }
        for _ in 0..n {
            states.push(vec![T::zero(); np]);
        }
        states
    }

    pub fn run<C, U>(&self, coeffs: &C, control: &U) -> Result<ParticleEnsemble<T>>
    where
        C: Coefficients<T> + ?Sized,
        U: Control<T> + ?Sized,
    {
        let d = self.grid.delta_steps();
        let n = self.grid.steps();
        let np = self.grid.particles;
        let dt = self.grid.dt();
        let mut states = self.initial_columns();
        let mut means: Vec<T> = states.iter().map(|c| column_mean(c)).collect();
        let mut controls = vec![vec![T::zero(); np]; n];

        for k in 0..n {
            let c = d + k;
            let (prev, next) = states.split_at_mut(c + 1);
            let law = LawWindow { cols: prev, means: &means[..=c], top: c, delta_steps: d };
            let t = self.grid.mesh.time(k as isize);
            let current = &prev[c];
            next[0]
                .par_iter_mut()
                .zip(controls[k].par_iter_mut())
                .enumerate()
                .try_for_each(|(p, (x_next, u_out))| -> Result<()> {
                    let view = StateView {
                        step: k,
                        t,
                        particle: p,
                        x: current[p],
                        memory: Memory::from_columns(prev, p, c, d, dt),
                        law,
                    };
                    let (dx, u) = increment(coeffs, control, &self.jumps, &self.noise, &view)?;
                    *x_next = current[p] + dx;
                    *u_out = u;
                    Ok(())
                })?;
            means[c + 1] = column_mean(&states[c + 1]);
        }

        Ok(ParticleEnsemble { mesh: self.grid.mesh, particles: np, seed: self.grid.seed, states, controls, means })
    }

    /// Simulate and estimate `J`.
    pub fn performance<C, U>(&self, coeffs: &C, control: &U) -> Result<(ParticleEnsemble<T>, Estimate<T>)>
    where
        C: Coefficients<T> + ?Sized,
        U: Control<T> + ?Sized,
    {
        let ens = self.run(coeffs, control)?;
        let j = performance(&ens, coeffs);
        Ok((ens, j))
    }
}

fn check_initial<T: Real>(grid: &SimGrid<T>, xi: &Segment<T>) -> Result<()> {
    if xi.delta_steps() != grid.delta_steps() {
        return Err(Error::MeshMismatch(format!(
            "initial segment has {} steps, the grid delay has {}",
            xi.delta_steps(),
            grid.delta_steps()
        )));
    }
    if (xi.dt() - grid.dt()).abs() > T::epsilon() * T::lit(16.0) * grid.dt() {
        return Err(Error::MeshMismatch(format!("initial segment step {} vs grid step {}", xi.dt(), grid.dt())));
    }
    if xi.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("xi", "initial segment must be finite"));
    }
    if grid.particles > u32::MAX as usize {
        return Err(Error::invalid("particles", "at most 2^32 - 1 particles"));
    }
    Ok(())
}

/// Simulate once with freshly drawn noise.
pub fn simulate<T, C, U>(
    coeffs: &C,
    control: &U,
    grid: &SimGrid<T>,
    jumps: &JumpModel<T>,
    xi: &Segment<T>,
) -> Result<ParticleEnsemble<T>>
where
    T: Real,
    C: Coefficients<T> + ?Sized,
    U: Control<T> + ?Sized,
{
    Simulator::new(*grid, jumps.clone(), xi.clone())?.run(coeffs, control)
}

/// Realized cost of each path: `sum_{k<n} l_k dt + h(X(T), M(T))`.
pub fn path_costs<T, C>(ens: &ParticleEnsemble<T>, coeffs: &C) -> Vec<T>
where
    T: Real,
    C: Coefficients<T> + ?Sized,
{
    let n = ens.steps();
    let dt = ens.dt();
    let terminal_law = ens.law_at_step(n as isize);
    let terminal = ens.terminal();
    (0..ens.particles())
        .into_par_iter()
        .map(|p| {
            let running: T = (0..n).map(|k| coeffs.running_cost(&ens.view(k, p), ens.controls[k][p])).sum();
            running * dt + coeffs.terminal_cost(terminal[p], &terminal_law)
        })
        .collect()
}

/// Monte Carlo estimate of `J` with its standard error.
pub fn performance<T, C>(ens: &ParticleEnsemble<T>, coeffs: &C) -> Estimate<T>
where
    T: Real,
    C: Coefficients<T> + ?Sized,
{
    Estimate::from_samples(&path_costs(ens, coeffs))
}

/// `b = c0 + cx x + clag x(t - delta) + cmean E[X(t)] + cu u`, `sigma = s0 + sx x`,
/// `gamma = jump_scale * zeta`; no costs.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LinearMemory<T> {
    pub c0: T,
    pub cx: T,
    pub clag: T,
    pub cmean: T,
    pub cu: T,
    pub s0: T,
    pub sx: T,
    pub jump_scale: T,
}

impl<T: Real> Coefficients<T> for LinearMemory<T> {
    fn drift(&self, s: &StateView<'_, T>, u: T) -> T {
        let mut b = self.c0 + self.cx * s.x + self.cu * u;
        if self.clag != T::zero() {
            b += self.clag * s.delayed();
        }
        if self.cmean != T::zero() {
            b += self.cmean * s.law.mean(0);
        }
        b
    }

    fn diffusion(&self, s: &StateView<'_, T>, _u: T) -> T {
        self.s0 + self.sx * s.x
    }

    fn jump(&self, _s: &StateView<'_, T>, _u: T, mark: T) -> T {
        self.jump_scale * mark
    }

    fn lipschitz(&self) -> Option<T> {
        Some(self.cx.abs() + self.clag.abs() + self.cmean.abs() + self.sx.abs())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jumps::MarkLaw;
    use crate::measure::{m_dist_sq, GaussianLaw};
    use crate::quadrature::QuadratureRule;

    fn lag_only() -> LinearMemory<f64> {
        LinearMemory { clag: 1.0, ..Default::default() }
    }

    fn brownian() -> LinearMemory<f64> {
        LinearMemory { s0: 1.0, ..Default::default() }
    }

    fn delay_error(dt: f64) -> f64 {
        let grid = SimGrid::<f64>::new(dt, 1.0, 2.0, 1, 0).unwrap();
        let xi = Segment::constant(1.0, grid.delta_steps(), dt).unwrap();
        let ens = simulate(&lag_only(), &ConstantControl(0.0), &grid, &JumpModel::none(), &xi).unwrap();
        (ens.terminal()[0] - 3.5).abs()
    }

    #[test]
    fn delay_ode_matches_method_of_steps() {
        let dt = 0.001;
        let grid = SimGrid::<f64>::new(dt, 1.0, 2.0, 1, 0).unwrap();
        let xi = Segment::constant(1.0, grid.delta_steps(), dt).unwrap();
        let ens = simulate(&lag_only(), &ConstantControl(0.0), &grid, &JumpModel::none(), &xi).unwrap();
        assert!((ens.column(1000)[0] - 2.0).abs() < 1e-9);
        assert!((ens.terminal()[0] - 3.5).abs() < 1e-3);
    }

    #[test]
    fn delay_ode_error_is_first_order() {
        let e1 = delay_error(0.02);
        let e2 = delay_error(0.01);
        let e3 = delay_error(0.005);
        assert!((e1 / e2 - 2.0).abs() < 0.2, "{}", e1 / e2);
        assert!((e2 / e3 - 2.0).abs() < 0.2, "{}", e2 / e3);
    }

    #[test]
    fn zero_coefficients_freeze_the_state() {
        let grid = SimGrid::<f64>::new(0.1, 0.3, 1.0, 4, 5).unwrap();
        let xi = Segment::from_fn(3, 0.1, |s| 2.0 + s).unwrap();
        let ens = simulate(&LinearMemory::default(), &ConstantControl(0.0), &grid, &JumpModel::none(), &xi).unwrap();
        for k in 0..=10 {
            assert!(ens.column(k).iter().all(|&v| v == 2.0));
        }
        assert_eq!(ens.column(-3)[0], 2.0 + 0.30000000000000004);
    }

    #[test]
    fn brownian_variance_and_law() {
        let n = 100_000;
        let grid = SimGrid::<f64>::new(0.05, 0.05, 1.0, n, 17).unwrap();
        let xi = Segment::constant(0.0, 1, 0.05).unwrap();
        let ens = simulate(&brownian(), &ConstantControl(0.0), &grid, &JumpModel::none(), &xi).unwrap();
        let var = ens.law_at_step(20).variance();
        assert!((var - 1.0).abs() < 3.0 * (2.0 / n as f64).sqrt(), "var {var}");
        let q = QuadratureRule::default();
        let d = m_dist_sq(&ens.law_at_step(20), &GaussianLaw { mean: 0.0, sd: 1.0 }, &q);
        assert!(d < 5e-3, "d = {d}");
    }

    #[test]
    fn compensated_jumps_are_martingale() {
        let n = 50_000;
        let grid = SimGrid::<f64>::new(0.05, 0.05, 1.0, n, 23).unwrap();
        let xi = Segment::constant(1.0, 1, 0.05).unwrap();
        let jumps = JumpModel::new(2.0, MarkLaw::Uniform { lo: 0.0, hi: 1.0 }).unwrap();
        let coeffs = LinearMemory { jump_scale: 1.0, ..Default::default() };
        let ens = simulate(&coeffs, &ConstantControl(0.0), &grid, &jumps, &xi).unwrap();
        let est = Estimate::from_samples(ens.terminal());
        assert!((est.mean - 1.0).abs() < 3.0 * est.stderr, "{est:?}");
    }

    #[test]
    fn identical_seed_gives_identical_ensembles() {
        let grid = SimGrid::<f64>::new(0.05, 0.1, 0.5, 300, 99).unwrap();
        let xi = Segment::constant(0.5, 2, 0.05).unwrap();
        let jumps = JumpModel::new(1.0, MarkLaw::Normal { mean: 0.0, sd: 0.2 }).unwrap();
        let coeffs = LinearMemory { cx: -0.5, clag: 0.3, cmean: 0.2, s0: 0.4, sx: 0.1, jump_scale: 1.0, ..Default::default() };
        let a = simulate(&coeffs, &ConstantControl(0.1), &grid, &jumps, &xi).unwrap();
        let b = simulate(&coeffs, &ConstantControl(0.1), &grid, &jumps, &xi).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn law_views_of_small_ensembles() {
        let grid = SimGrid::<f64>::new(0.1, 0.2, 1.0, 1, 3).unwrap();
        let xi = Segment::constant(1.0, 2, 0.1).unwrap();
        let ens = simulate(&brownian(), &ConstantControl(0.0), &grid, &JumpModel::none(), &xi).unwrap();
        let law = ens.law_at(0.5).unwrap();
        assert_eq!(law.len(), 1);
        assert_eq!(law.atoms()[0], ens.column(5)[0]);
        let seg = ens.law_segment(0.5).unwrap();
        assert_eq!(seg.measures().len(), 3);
        assert_eq!(seg.measures()[2].atoms()[0], ens.column(3)[0]);
        assert!(ens.law_at(1.5).is_err());
        assert!(ens.law_at(0.55).is_err());
    }

    #[test]
    fn deterministic_law_is_a_dirac() {
        let grid = SimGrid::<f64>::new(0.1, 0.2, 1.0, 10, 3).unwrap();
        let xi = Segment::constant(1.0, 2, 0.1).unwrap();
        let ens = simulate(&lag_only(), &ConstantControl(0.0), &grid, &JumpModel::none(), &xi).unwrap();
        let law = ens.law_at(1.0).unwrap();
        assert!(law.atoms().iter().all(|&a| a == law.atoms()[0]));
    }

    #[test]
    fn independent_particles_have_uncorrelated_increments() {
        let n = 20_000;
        let grid = SimGrid::<f64>::new(0.1, 0.1, 1.0, n, 8).unwrap();
        let xi = Segment::constant(0.0, 1, 0.1).unwrap();
        let coeffs = LinearMemory { cx: -0.3, s0: 1.0, ..Default::default() };
        let ens = simulate(&coeffs, &ConstantControl(0.0), &grid, &JumpModel::none(), &xi).unwrap();
        let inc: Vec<f64> = ens.terminal().iter().zip(ens.column(5)).map(|(a, b)| a - b).collect();
        let half = n / 2;
        let (a, b) = inc.split_at(half);
        let ma = a.iter().sum::<f64>() / half as f64;
        let mb = b.iter().sum::<f64>() / half as f64;
        let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / half as f64;
        let va = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / half as f64;
        let vb = b.iter().map(|y| (y - mb).powi(2)).sum::<f64>() / half as f64;
        let corr = cov / (va * vb).sqrt();
        assert!(corr.abs() < 4.0 / (half as f64).sqrt(), "corr {corr}");
    }

    #[test]
    fn performance_of_constant_costs() {
        struct UnitCost;
        impl Coefficients<f64> for UnitCost {
            fn drift(&self, _: &StateView<'_, f64>, _: f64) -> f64 {
                0.0
            }
            fn diffusion(&self, _: &StateView<'_, f64>, _: f64) -> f64 {
                0.0
            }
            fn running_cost(&self, _: &StateView<'_, f64>, _: f64) -> f64 {
                1.0
            }
        }
        let grid = SimGrid::<f64>::new(0.1, 0.1, 2.0, 3, 0).unwrap();
        let xi = Segment::constant(0.0, 1, 0.1).unwrap();
        let ens = simulate(&UnitCost, &ConstantControl(0.0), &grid, &JumpModel::none(), &xi).unwrap();
        let j = performance(&ens, &UnitCost);
        assert!((j.mean - 2.0).abs() < 1e-12);
        assert_eq!(j.stderr, 0.0);
    }

    #[test]
    fn terminal_cost_of_deterministic_state() {
        struct Identity;
        impl Coefficients<f64> for Identity {
            fn drift(&self, _: &StateView<'_, f64>, _: f64) -> f64 {
                0.5
            }
            fn diffusion(&self, _: &StateView<'_, f64>, _: f64) -> f64 {
                0.0
            }
            fn terminal_cost(&self, x: f64, _: &UniformLaw<'_, f64>) -> f64 {
                x
            }
        }
        let grid = SimGrid::<f64>::new(0.25, 0.25, 1.0, 4, 0).unwrap();
        let xi = Segment::constant(1.0, 1, 0.25).unwrap();
        let ens = simulate(&Identity, &ConstantControl(0.0), &grid, &JumpModel::none(), &xi).unwrap();
        let j = performance(&ens, &Identity);
        assert_eq!((j.mean, j.stderr), (1.5, 0.0));
    }

    #[test]
    fn non_finite_state_aborts_with_location() {
        let grid = SimGrid::<f64>::new(0.1, 0.1, 5.0, 2, 0).unwrap();
        let xi = Segment::constant(1.0, 1, 0.1).unwrap();
        let blowup = LinearMemory { cx: 1e300, ..Default::default() };
        let err = simulate(&blowup, &ConstantControl(0.0), &grid, &JumpModel::none(), &xi).unwrap_err();
        assert!(matches!(err, Error::NonFinite { step: 1, .. }), "{err:?}");
    }

    #[test]
    fn mismatched_initial_segment_is_rejected() {
        let grid = SimGrid::<f64>::new(0.1, 0.2, 1.0, 2, 0).unwrap();
        let xi = Segment::constant(1.0, 3, 0.1).unwrap();
        assert!(matches!(
            simulate(&brownian(), &ConstantControl(0.0), &grid, &JumpModel::none(), &xi),
            Err(Error::MeshMismatch(_))
        ));
    }

    #[test]
    fn f32_engine_runs() {
        let grid = SimGrid::<f32>::new(0.125, 0.25, 1.0, 16, 1).unwrap();
        let xi = Segment::constant(1.0f32, 2, 0.125).unwrap();
        let coeffs = LinearMemory { clag: 1.0f32, ..Default::default() };
        let ens = simulate(&coeffs, &ConstantControl(0.0f32), &grid, &JumpModel::none(), &xi).unwrap();
        assert!(ens.terminal()[0] > 1.0);
    }
}
