//! Linear-quadratic control with distributed delay:
//! `dX = (int_0^delta a(s) X(t - s) ds + u) dt + alpha0 dB + int beta0 zeta Ntilde`,
//! `J(u) = -E[X(T)^2 + int_0^T u^2 dt] / 2`.
//!
//! The maximum condition gives `u = p0`, so the optimum is the fixed point of
//! "simulate forward under `u`, solve the advanced backward equation, set `u = p0`",
//! computed here by damped iteration on the control.

use crate::adjoint::{solve_absde, stationarity_gap, AbsdeDriver, AdjointTriple, Basis, BasisTerm, SegmentFunctional};
use crate::error::{Error, Result};
use crate::grid::SimGrid;
use crate::jumps::JumpModel;
use crate::measure::UniformLaw;
use crate::num::{Estimate, Real};
use crate::segments::Segment;
use crate::sfde::{
    path_costs, AdaptedControl, Coefficients, ConstantControl, Control, FeedbackControl, ParticleEnsemble,
    PerturbedControl, Simulator, StateView,
};

const GROWTH_LIMIT: usize = 5;

/// Kernel values `a(j dt)`, `j = 0..=D`, and constant noise loadings.
#[derive(Clone, Debug, PartialEq)]
pub struct LQSpec<T> {
    pub kernel: Vec<T>,
    pub alpha0: T,
    /// Jump size `beta0(t, zeta) = beta0 * zeta`.
    pub beta0: T,
    pub xi: Segment<T>,
}

impl<T: Real> LQSpec<T> {
    pub fn new(kernel: impl Fn(T) -> T, alpha0: T, beta0: T, xi: Segment<T>) -> Self {
        let d = xi.delta_steps();
        let dt = xi.dt();
        let kernel = (0..=d).map(|j| kernel(T::from_count(j) * dt)).collect();
        Self { kernel, alpha0, beta0, xi }
    }

    pub fn functional(&self) -> Result<SegmentFunctional<T>> {
        SegmentFunctional::from_weights(self.kernel.clone(), self.xi.dt())
    }

    pub fn validate(&self, grid: &SimGrid<T>) -> Result<()> {
        if self.kernel.len() != grid.delta_steps() + 1 {
            return Err(Error::MeshMismatch("kernel must have one value per delay step".into()));
        }
        if !(self.alpha0.is_finite() && self.beta0.is_finite()) {
            return Err(Error::invalid("alpha0", "noise loadings must be finite"));
        }
        self.functional().map(|_| ())
    }
}

#[derive(Clone, Debug)]
pub struct LQCoefficients<T> {
    pub functional: SegmentFunctional<T>,
    pub alpha0: T,
    pub beta0: T,
}

impl<T: Real> LQCoefficients<T> {
    pub fn new(spec: &LQSpec<T>) -> Result<Self> {
        Ok(Self { functional: spec.functional()?, alpha0: spec.alpha0, beta0: spec.beta0 })
    }
}

impl<T: Real> Coefficients<T> for LQCoefficients<T> {
    fn drift(&self, s: &StateView<'_, T>, u: T) -> T {
        self.functional.apply(&s.memory) + u
    }

    fn diffusion(&self, _s: &StateView<'_, T>, _u: T) -> T {
        self.alpha0
    }

    fn jump(&self, _s: &StateView<'_, T>, _u: T, mark: T) -> T {
        self.beta0 * mark
    }

    fn running_cost(&self, _s: &StateView<'_, T>, u: T) -> T {
        -u * u / T::lit(2.0)
    }

    fn terminal_cost(&self, x: T, _law: &UniformLaw<'_, T>) -> T {
        -x * x / T::lit(2.0)
    }
}

/// `p0(T) = -X(T)`, driver `int_0^delta a(r) E[p0(t + r) | F_t] dr`.
pub struct LQDriver<'a, T> {
    pub functional: &'a SegmentFunctional<T>,
}

impl<T: Real> AbsdeDriver<T> for LQDriver<'_, T> {
    fn terminal(&self, x: T, _law: &UniformLaw<'_, T>) -> T {
        -x
    }

    fn advanced(&self) -> Option<&SegmentFunctional<T>> {
        Some(self.functional)
    }
}

/// Basis with the running delay integral added.
pub fn lq_basis<T: Real>(functional: &SegmentFunctional<T>) -> Basis<T> {
    Basis::default().with_term(BasisTerm::Functional(functional.clone()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LQOptions<T> {
    pub damping: T,
    pub tolerance: T,
    pub max_iter: usize,
}

impl<T: Real> Default for LQOptions<T> {
    fn default() -> Self {
        Self { damping: T::lit(0.5), tolerance: T::lit(1e-4), max_iter: 50 }
    }
}

/// `changes[i] = ||p0_next(u_i) - u_i||`, mesh L2 and Monte Carlo mean; the applied
/// step is `damping` times this.
#[derive(Clone, Debug, PartialEq)]
pub struct FBSDEIterationReport<T> {
    pub changes: Vec<T>,
    pub damping: T,
    pub tolerance: T,
    pub converged: bool,
}

impl<T: Real> FBSDEIterationReport<T> {
    pub fn iterations(&self) -> usize {
        self.changes.len()
    }

    pub fn last_change(&self) -> Option<T> {
        self.changes.last().copied()
    }
}

pub struct LQSolution<T> {
    pub sim: Simulator<T>,
    pub coeffs: LQCoefficients<T>,
    pub basis: Basis<T>,
    pub control: AdaptedControl<T>,
    pub ensemble: ParticleEnsemble<T>,
    pub adjoint: AdjointTriple<T>,
    pub report: FBSDEIterationReport<T>,
}

impl<T: Real> LQSolution<T> {
    pub fn performance(&self) -> Estimate<T> {
        Estimate::from_samples(&path_costs(&self.ensemble, &self.coeffs))
    }

    /// Per step `(t, mean u, sd u)`.
    pub fn control_summary(&self) -> Vec<(T, T, T)> {
        self.control
            .columns
            .iter()
            .enumerate()
            .map(|(k, col)| {
                let law = UniformLaw::new(col);
                (self.ensemble.time(k as isize), law.mean(), law.variance().sqrt())
            })
            .collect()
    }
}

/// One forward and backward pass under `u`; returns the ensemble, the adjoint and
/// the updated control `E[p0(t + dt) | F_t]`.
pub fn best_response<T: Real>(
    sim: &Simulator<T>,
    coeffs: &LQCoefficients<T>,
    basis: &Basis<T>,
    u: &AdaptedControl<T>,
) -> Result<(ParticleEnsemble<T>, AdjointTriple<T>, Vec<Vec<T>>)> {
    let ens = sim.run(coeffs, u)?;
    let adj = solve_absde(&LQDriver { functional: &coeffs.functional }, &ens, sim, basis)?;
    let target = (0..ens.steps()).map(|k| adj.p0_next(k).to_vec()).collect();
    Ok((ens, adj, target))
}

/// `sqrt(mean_p sum_k (a - b)^2 dt)`.
pub fn control_distance<T: Real>(a: &[Vec<T>], b: &[Vec<T>], dt: T) -> T {
    let np = a.first().map_or(1, |c| c.len().max(1));
    let total: T = a
        .iter()
        .zip(b)
        .map(|(ca, cb)| ca.iter().zip(cb).map(|(&x, &y)| (x - y) * (x - y)).sum::<T>())
        .sum();
    (total * dt / T::from_count(np)).sqrt()
}

pub fn solve_lq<T: Real>(spec: &LQSpec<T>, grid: SimGrid<T>, jumps: JumpModel<T>, opts: LQOptions<T>) -> Result<LQSolution<T>> {
    spec.validate(&grid)?;
    if !(opts.damping > T::zero() && opts.damping <= T::one()) {
        return Err(Error::invalid("damping", "must lie in (0, 1]"));
    }
    if !(opts.tolerance > T::zero()) || opts.max_iter == 0 {
        return Err(Error::invalid("tolerance", "need a positive tolerance and at least one iteration"));
    }
    let sim = Simulator::new(grid, jumps, spec.xi.clone())?;
    let coeffs = LQCoefficients::new(spec)?;
    let basis = lq_basis(&coeffs.functional);
    let dt = grid.dt();
    let theta = opts.damping;

    let mut control = AdaptedControl { columns: vec![vec![T::zero(); grid.particles]; grid.steps()] };
    let mut changes = Vec::new();
    let mut growth = 0;
    loop {
        let (ensemble, adjoint, target) = best_response(&sim, &coeffs, &basis, &control)?;
        let change = control_distance(&target, &control.columns, dt);
        if let Some(&prev) = changes.last() {
            growth = if change > prev { growth + 1 } else { 0 };
        }
        changes.push(change);
        log::debug!("lq iteration {}: change {:e}", changes.len(), change.as_f64());
        if !change.is_finite() || growth >= GROWTH_LIMIT {
            return Err(Error::Divergence { iterations: changes.len() });
        }
        let converged = change < opts.tolerance;
        if converged || changes.len() >= opts.max_iter {
            let report = FBSDEIterationReport { changes, damping: theta, tolerance: opts.tolerance, converged };
            return Ok(LQSolution { sim, coeffs, basis, control, ensemble, adjoint, report });
        }
        for (col, tgt) in control.columns.iter_mut().zip(&target) {
            for (u, &t) in col.iter_mut().zip(tgt) {
                *u += theta * (t - *u);
            }
        }
    }
}

/// `J(u + lambda pi)` versus `J(u)` under common random numbers.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationRow<T> {
    pub lambda: T,
    pub j: Estimate<T>,
    /// `J(u) - J(u + lambda pi)`.
    pub advantage: Estimate<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LQReport<T> {
    /// `max_t |mean_p (p0 - u)|`.
    pub residual_max: T,
    /// `||p0 - u||` in the control norm.
    pub residual_norm: T,
    /// Change of the control after one more forward and backward pass.
    pub idempotence: T,
    /// Central-difference gaps for the directions `constant`, `late_indicator`, `delayed_state`.
    pub stationarity: Vec<(String, Estimate<T>)>,
    pub perturbations: Vec<PerturbationRow<T>>,
    /// Least-squares parabola `c2 lambda^2 + c1 lambda + c0` through `(lambda, mean J)`.
    pub parabola: [T; 3],
    pub parabola_residual: T,
}

impl<T: Real> LQReport<T> {
    pub fn vertex(&self) -> T {
        -self.parabola[1] / (T::lit(2.0) * self.parabola[2])
    }

    pub fn stationarity_holds(&self) -> bool {
        self.stationarity.iter().all(|(_, g)| g.mean.abs() <= T::lit(3.0) * g.stderr + T::lit(1e-9))
    }

    pub fn perturbations_hold(&self) -> bool {
        self.perturbations.iter().all(|r| r.advantage.mean >= -T::lit(3.0) * r.advantage.stderr)
    }
}

pub const VERIFY_LAMBDAS: [f64; 4] = [-0.5, -0.2, 0.2, 0.5];

pub fn verify_lq<T: Real>(sol: &LQSolution<T>, eps: T) -> Result<LQReport<T>> {
    let ens = &sol.ensemble;
    let n = ens.steps();
    let dt = ens.dt();
    let adj = &sol.adjoint;
    let u = &sol.control.columns;

    let mut residual_max = T::zero();
    for (k, col) in u.iter().enumerate() {
        let diff: Vec<T> = adj.p0_next(k).iter().zip(col).map(|(&p, &v)| p - v).collect();
        residual_max = residual_max.max(Estimate::from_samples(&diff).mean.abs());
    }
    let p_next: Vec<Vec<T>> = (0..n).map(|k| adj.p0_next(k).to_vec()).collect();
    let residual_norm = control_distance(&p_next, u, dt);

    let (_, _, again) = best_response(&sol.sim, &sol.coeffs, &sol.basis, &sol.control)?;
    let idempotence = control_distance(&again, u, dt);

    let half = ens.mesh().horizon() / T::lit(2.0);
    let late = FeedbackControl(move |s: &StateView<'_, T>| Ok(if s.t >= half { T::one() } else { T::zero() }));
    let d = ens.delta_steps() as isize;
    let delayed = AdaptedControl { columns: (0..n).map(|k| ens.column(k as isize - d).to_vec()).collect() };
    let directions: [(&str, &dyn Control<T>); 3] =
        [("constant", &ConstantControl(T::one())), ("late_indicator", &late), ("delayed_state", &delayed)];
    let mut stationarity = Vec::new();
    for (name, dir) in directions {
        stationarity.push((name.to_string(), stationarity_gap(&sol.sim, &sol.coeffs, &sol.control, dir, eps)?));
    }

    let base = path_costs(ens, &sol.coeffs);
    let one = ConstantControl(T::one());
    let mut perturbations = Vec::new();
    let mut points = vec![(T::zero(), Estimate::from_samples(&base).mean)];
    for lam in VERIFY_LAMBDAS.map(T::lit) {
        let ctl = PerturbedControl { base: &sol.control, direction: &one, eps: lam };
        let costs = path_costs(&sol.sim.run(&sol.coeffs, &ctl)?, &sol.coeffs);
        let j = Estimate::from_samples(&costs);
        points.push((lam, j.mean));
        perturbations.push(PerturbationRow { lambda: lam, j, advantage: Estimate::paired_difference(&base, &costs) });
    }
    let (parabola, parabola_residual) = fit_parabola(&points);

    Ok(LQReport { residual_max, residual_norm, idempotence, stationarity, perturbations, parabola, parabola_residual })
}

/// Least-squares quadratic through `(x, y)`; returns `[c0, c1, c2]` and the largest
/// residual relative to `max |y|`.
pub fn fit_parabola<T: Real>(points: &[(T, T)]) -> ([T; 3], T) {
    // normal equations on the monomials 1, x, x^2
    let mut m = [[T::zero(); 3]; 3];
    let mut rhs = [T::zero(); 3];
    for &(x, y) in points {
        let row = [T::one(), x, x * x];
        for i in 0..3 {
            rhs[i] += row[i] * y;
            for j in 0..3 {
                m[i][j] += row[i] * row[j];
            }
        }
    }
    let c = solve3(m, rhs);
    let scale = points.iter().map(|p| p.1.abs()).fold(T::zero(), T::max).max(T::min_positive_value());
    let worst = points
        .iter()
        .map(|&(x, y)| (c[0] + c[1] * x + c[2] * x * x - y).abs())
        .fold(T::zero(), T::max);
    (c, worst / scale)
}

fn solve3<T: Real>(mut m: [[T; 3]; 3], mut b: [T; 3]) -> [T; 3] {
    for col in 0..3 {
        let piv = (col..3)
            .max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap_or(std::cmp::Ordering::Equal))
            .expect("non-empty");
        m.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..3 {
            let f = m[r][col] / m[col][col];
            for c in col..3 {
                m[r][c] -= f * m[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = [T::zero(); 3];
    for r in (0..3).rev() {
        let s = (r + 1..3).fold(b[r], |acc, c| acc - m[r][c] * x[c]);
        x[r] = s / m[r][r];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adjoint::Adjoints;

    fn grid(delta: f64, n: usize, seed: u64) -> SimGrid<f64> {
        SimGrid::<f64>::new(0.01, delta, 1.0, n, seed).unwrap()
    }

    #[test]
    fn deterministic_case_hits_the_scalar_optimum() {
        let g = grid(0.2, 4, 1);
        let spec = LQSpec::new(|_| 0.0, 0.0, 0.0, Segment::constant(1.0, 20, 0.01).unwrap());
        let sol = solve_lq(&spec, g, JumpModel::none(), LQOptions::default()).unwrap();
        assert!(sol.report.converged);
        assert!(sol.control.columns.iter().flatten().all(|&u| (u + 0.5).abs() < 1e-12));
        assert!(sol.ensemble.terminal().iter().all(|&x| (x - 0.5).abs() < 1e-12));
        assert!((sol.performance().mean + 0.25).abs() < 1e-12);
        // constant p0 = -X(T)
        for k in 0..=100 {
            assert!(sol.adjoint.p0(k).iter().all(|&p| (p + 0.5).abs() < 1e-12));
        }
        let rep = verify_lq(&sol, 1e-3).unwrap();
        assert!(rep.residual_max < 1e-12);
        assert!(rep.stationarity.iter().all(|(_, g)| g.mean.abs() < 1e-3));
        assert!(rep.vertex().abs() < 1e-9);
    }

    #[test]
    fn zero_initial_segment_is_a_fixed_point() {
        let g = grid(0.2, 3, 1);
        let spec = LQSpec::new(|s| 1.0 + s, 0.0, 0.0, Segment::constant(0.0, 20, 0.01).unwrap());
        let sol = solve_lq(&spec, g, JumpModel::none(), LQOptions::default()).unwrap();
        assert!(sol.report.converged && sol.report.iterations() == 1);
        assert!(sol.control.columns.iter().flatten().all(|&u| u == 0.0));
        assert_eq!(sol.performance().mean, 0.0);
    }

    #[test]
    fn brownian_no_delay_matches_linear_filter() {
        let g = grid(0.2, 20_000, 11);
        let spec = LQSpec::new(|_| 0.0, 1.0, 0.0, Segment::constant(1.0, 20, 0.01).unwrap());
        let sol = solve_lq(&spec, g, JumpModel::none(), LQOptions::default()).unwrap();
        assert!(sol.report.converged);
        let u0 = Estimate::from_samples(&sol.control.columns[0]).mean;
        assert!((u0 + 0.5).abs() < 0.01, "{u0}");
    }

    #[test]
    fn delayed_state_default_converges_and_is_stationary() {
        let g = grid(0.2, 10_000, 5);
        let spec = LQSpec::new(|_| 1.0, 0.3, 0.0, Segment::constant(1.0, 20, 0.01).unwrap());
        let sol = solve_lq(&spec, g, JumpModel::none(), LQOptions::default()).unwrap();
        assert!(sol.report.converged, "{:?}", sol.report.changes);
        let rep = verify_lq(&sol, 0.1).unwrap();
        assert!(rep.idempotence < 1e-4);
        assert!(rep.stationarity_holds(), "{:?}", rep.stationarity);
        assert!(rep.perturbations_hold());
        assert!(rep.vertex().abs() < 0.05, "{}", rep.vertex());
        assert!(rep.parabola_residual < 1e-8, "{}", rep.parabola_residual);
    }

    #[test]
    fn divergent_damping_aborts() {
        // full steps on a long horizon overshoot: the linear map has gain above one
        let g = SimGrid::<f64>::new(0.01, 0.2, 3.0, 2, 1).unwrap();
        let spec = LQSpec::new(|_| 1.0, 0.0, 0.0, Segment::constant(1.0, 20, 0.01).unwrap());
        let opts = LQOptions { damping: 1.0, ..Default::default() };
        assert!(matches!(solve_lq(&spec, g, JumpModel::none(), opts), Err(Error::Divergence { .. })));
    }

    struct Probe<'a> {
        f: &'a SegmentFunctional<f64>,
        at: usize,
    }

    impl AbsdeDriver<f64> for Probe<'_> {
        fn terminal(&self, _x: f64, _law: &UniformLaw<'_, f64>) -> f64 {
            0.0
        }
        fn advanced(&self) -> Option<&SegmentFunctional<f64>> {
            Some(self.f)
        }
        fn advanced_integrand(&self, s: &StateView<'_, f64>, _u: f64, _adj: Adjoints<f64>) -> f64 {
            if s.step == self.at { 1.0 } else { 0.0 }
        }
    }

    #[test]
    fn advanced_reads_stay_inside_the_window() {
        let g = grid(0.2, 2, 1);
        let spec = LQSpec::new(|s| 1.0 + s, 0.0, 0.0, Segment::constant(1.0, 20, 0.01).unwrap());
        let coeffs = LQCoefficients::new(&spec).unwrap();
        let sim = Simulator::new(g, JumpModel::none(), spec.xi.clone()).unwrap();
        let ens = sim.run(&coeffs, &ConstantControl(0.0)).unwrap();
        let c = coeffs.functional.coefficients().to_vec();
        for at in [50, 95] {
            let adj = solve_absde(&Probe { f: &coeffs.functional, at }, &ens, &sim, &Basis::default()).unwrap();
            for k in 0..100 {
                let inc = adj.p0(k)[0] - adj.p0(k + 1)[0];
                let want = if k <= at && at - k <= 20 { c[at - k] * 0.01 } else { 0.0 };
                assert!((inc - want).abs() < 1e-15, "k={k} at={at}");
            }
        }
    }

    #[test]
    fn terminal_extension_is_not_read_past_the_horizon() {
        let g = grid(0.2, 1, 1);
        let spec = LQSpec::new(|_| 1.0, 0.0, 0.0, Segment::constant(1.0, 20, 0.01).unwrap());
        let coeffs = LQCoefficients::new(&spec).unwrap();
        let sim = Simulator::new(g, JumpModel::none(), spec.xi.clone()).unwrap();
        let ens = sim.run(&coeffs, &ConstantControl(0.0)).unwrap();
        let adj = solve_absde(&LQDriver { functional: &coeffs.functional }, &ens, &sim, &Basis::default()).unwrap();
        let pn = adj.p0(100)[0];
        let c0 = coeffs.functional.coefficients()[0];
        assert!((adj.p0(99)[0] - pn * (1.0 + c0 * 0.01)).abs() < 1e-14);
        assert!(adj.terminal_conventions_hold());
    }

    #[test]
    fn parabola_fit_recovers_quadratics() {
        let pts: Vec<(f64, f64)> = [-0.5, -0.2, 0.0, 0.2, 0.5].iter().map(|&x| (x, 3.0 - 2.0 * x + 0.7 * x * x)).collect();
        let (c, res) = fit_parabola(&pts);
        assert!((c[0] - 3.0).abs() < 1e-12 && (c[1] + 2.0).abs() < 1e-12 && (c[2] - 0.7).abs() < 1e-12);
        assert!(res < 1e-14);
    }
}
