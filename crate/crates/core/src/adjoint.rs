//! Hamiltonian, advanced (anticipating) gradient terms and the backward sweep for
//! `dp = -[dH/dx + E(grad_xbar H^t | F_t)] dt + q dB + int r Ntilde(dt, dz)`.
//!
//! Discretization matches the explicit Euler forward scheme: with `m = E[p_{k+1} | F_k]`,
//! `q_k = E[(p_{k+1} - m) dB_k | F_k] / dt`, and
//! `p_k = E[p_{k+1} + (dH/dx + Gamma_k) dt | F_k]` where the Hamiltonian terms are
//! evaluated at `(p_{k+1}, q_k, r_k)` and `Gamma_k` pairs the segment gradient with the
//! forward window of those values, zero past the horizon.
//!
//! Jump loadings are linear in the mark: `r(t, zeta) = r(t) * zeta`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::TimeMesh;
use crate::jumps::JumpModel;
use crate::measure::UniformLaw;
use crate::num::{trapezoid_weights, Estimate, Real};
use crate::regression::Projector;
use crate::segments::{GridPath, Memory};
use crate::sfde::{path_costs, Coefficients, Control, ParticleEnsemble, Simulator, StateView};

/// Bounded linear functional on segments, `F(xbar) = sum_j c_j xbar(j dt)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentFunctional<T> {
    kind: FunctionalKind<T>,
    coeffs: Vec<T>,
    dt: T,
}

#[derive(Clone, Debug, PartialEq)]
pub enum FunctionalKind<T> {
    /// `int_0^delta a(s) xbar(s) ds` with `a` sampled on the mesh.
    Averaging(Vec<T>),
    /// `xbar(lag dt)`.
    Evaluation(usize),
}

impl<T: Real> SegmentFunctional<T> {
    pub fn averaging(delta_steps: usize, dt: T, a: impl Fn(T) -> T) -> Result<Self> {
        let weights: Vec<T> = (0..=delta_steps).map(|j| a(T::from_count(j) * dt)).collect();
        Self::from_weights(weights, dt)
    }

    pub fn from_weights(weights: Vec<T>, dt: T) -> Result<Self> {
        if weights.len() < 2 {
            return Err(Error::invalid("kernel", "needs at least two mesh values"));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("kernel", "must be finite"));
        }
        let coeffs = trapezoid_weights(weights.len(), dt).into_iter().zip(&weights).map(|(w, &a)| w * a).collect();
        Ok(Self { kind: FunctionalKind::Averaging(weights), coeffs, dt })
    }

    /// Evaluation at `t0 in [0, delta]`, a mesh point.
    pub fn evaluation(t0: T, delta_steps: usize, dt: T) -> Result<Self> {
        let lag = crate::grid::exact_steps("t0", t0, dt)?;
        if lag > delta_steps {
            return Err(Error::invalid("t0", "evaluation point must lie in [0, delta]"));
        }
        let mut coeffs = vec![T::zero(); delta_steps + 1];
        coeffs[lag] = T::one();
        Ok(Self { kind: FunctionalKind::Evaluation(lag), coeffs, dt })
    }

    pub fn kind(&self) -> &FunctionalKind<T> {
        &self.kind
    }

    /// Quadrature coefficients `c_j`, `j = 0..=D`.
    pub fn coefficients(&self) -> &[T] {
        &self.coeffs
    }

    pub fn delta_steps(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    /// `F(x_t)` on a backward segment.
    pub fn apply(&self, mem: &Memory<'_, T>) -> T {
        debug_assert_eq!(mem.delta_steps(), self.delta_steps());
        self.coeffs.iter().enumerate().map(|(j, &c)| c * mem.at(j)).sum()
    }

    /// `<grad F, p^t> = sum_j c_j p(t + j dt)`, with `p = 0` past the end of the path.
    pub fn riesz_advanced(&self, p: &GridPath<T>, t: T) -> Result<T> {
        let k = p.step_of(t)?;
        Ok(self.pair_forward(|j| p.at_step(k + j as isize).unwrap_or(T::zero())))
    }

    fn pair_forward(&self, mut value: impl FnMut(usize) -> T) -> T {
        self.coeffs.iter().enumerate().filter(|(_, c)| **c != T::zero()).map(|(j, &c)| c * value(j)).sum()
    }
}

/// Both sides of `int_0^T Gamma(t) Y(t) dt = int_0^T p(t) F(Y_t) dt` with `T` the end of
/// `p_path`, `p` and `Y` zero outside their stored ranges.
pub fn riesz_duality_check<T: Real>(
    f: &SegmentFunctional<T>,
    p_path: &GridPath<T>,
    y_path: &GridPath<T>,
) -> Result<(T, T)> {
    let dt = p_path.dt();
    if (y_path.dt() - dt).abs() > T::epsilon() * T::lit(16.0) * dt || (f.dt() - dt).abs() > T::epsilon() * T::lit(16.0) * dt {
        return Err(Error::MeshMismatch("paths and functional must share the time step".into()));
    }
    if p_path.first_step() > 0 {
        return Err(Error::invalid("p_path", "must cover [0, T]"));
    }
    let n = p_path.last_step();
    if n < 1 {
        return Err(Error::invalid("p_path", "horizon must be at least one step"));
    }
    for k in y_path.first_step()..=y_path.last_step() {
        if (k < 0 || k > n) && y_path.at_step(k) != Some(T::zero()) {
            return Err(Error::SupportViolation { time: k as f64 * dt.as_f64() });
        }
    }
    let y = |k: isize| if (0..=n).contains(&k) { y_path.at_step(k).unwrap_or(T::zero()) } else { T::zero() };
    let p = |k: isize| if (0..=n).contains(&k) { p_path.at_step(k).unwrap_or(T::zero()) } else { T::zero() };
    let w = trapezoid_weights((n + 1) as usize, dt);
    let mut lhs = T::zero();
    let mut rhs = T::zero();
    for k in 0..=n {
        let wk = w[k as usize];
        let gamma = f.pair_forward(|j| p(k + j as isize));
        let fy = f.pair_forward(|j| y(k - j as isize));
        lhs += wk * gamma * y(k);
        rhs += wk * p(k) * fy;
    }
    Ok((lhs, rhs))
}

/// Adjoint values `(p0, q0, r0)` at one point.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Adjoints<T> {
    pub p: T,
    pub q: T,
    pub r: T,
}

/// Arguments of the Hamiltonian. The measure-derivative pairing is identically zero.
#[derive(Clone, Copy, Debug)]
pub struct HamiltonianInputs<'a, T> {
    pub state: StateView<'a, T>,
    pub u: T,
    pub adjoints: Adjoints<T>,
}

/// `H = l + p b + q sigma + r int zeta gamma(zeta) nu(dzeta)`, and `H = 0` for `t > horizon`.
pub fn hamiltonian<T, C>(coeffs: &C, inputs: &HamiltonianInputs<'_, T>, jumps: &JumpModel<T>, horizon: T) -> T
where
    T: Real,
    C: Coefficients<T> + ?Sized,
{
    let s = &inputs.state;
    if s.t > horizon + T::epsilon() * T::lit(64.0) * horizon.abs().max(T::one()) {
        return T::zero();
    }
    let u = inputs.u;
    let a = inputs.adjoints;
    let mut h = coeffs.running_cost(s, u) + a.p * coeffs.drift(s, u) + a.q * coeffs.diffusion(s, u);
    if a.r != T::zero() && jumps.is_active() {
        h += a.r * jumps.nu_integral(|z| z * coeffs.jump(s, u, z));
    }
    h
}

/// Solution of the backward sweep, one column of particle values per mesh step.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjointTriple<T> {
    mesh: TimeMesh<T>,
    // k = 0..=n + D; columns past n repeat the terminal value
    p: Vec<Vec<T>>,
    // E[p_{k+1} | F_k], k < n
    p_next: Vec<Vec<T>>,
    q: Vec<Vec<T>>,
    r: Vec<Vec<T>>,
}

impl<T: Real> AdjointTriple<T> {
    /// From `p` on `k = 0..=n` and `p_next, q, r` on `k < n`.
    pub fn from_columns(
        mesh: TimeMesh<T>,
        mut p: Vec<Vec<T>>,
        p_next: Vec<Vec<T>>,
        q: Vec<Vec<T>>,
        r: Vec<Vec<T>>,
    ) -> Result<Self> {
        let n = mesh.horizon_steps();
        if p.len() != n + 1 || p_next.len() != n || q.len() != n || r.len() != n {
            return Err(Error::MeshMismatch("adjoint columns do not match the mesh".into()));
        }
        let np = p[0].len();
        if p.iter().chain(&p_next).chain(&q).chain(&r).any(|c| c.len() != np) {
            return Err(Error::MeshMismatch("adjoint columns differ in particle count".into()));
        }
        let terminal = p[n].clone();
        for _ in 0..mesh.delta_steps() {
            p.push(terminal.clone());
        }
        Ok(Self { mesh, p, p_next, q, r })
    }

    pub fn mesh(&self) -> &TimeMesh<T> {
        &self.mesh
    }

    pub fn steps(&self) -> usize {
        self.mesh.horizon_steps()
    }

    pub fn particles(&self) -> usize {
        self.p[0].len()
    }

    /// `p0` at step `0 <= k <= n + D`.
    pub fn p0(&self, k: usize) -> &[T] {
        &self.p[k]
    }

    /// `E[p0_{k+1} | F_k]`, `k < n`.
    pub fn p0_next(&self, k: usize) -> &[T] {
        &self.p_next[k]
    }

    /// `q0` on step `k < n`.
    pub fn q0(&self, k: usize) -> &[T] {
        &self.q[k]
    }

    /// `r0` on step `k < n`, per unit mark.
    pub fn r0(&self, k: usize) -> &[T] {
        &self.r[k]
    }

    /// Adjoints entering the Hamiltonian on step `k`; all zero for `k >= n`.
    pub fn at(&self, k: usize, particle: usize) -> Adjoints<T> {
        if k >= self.steps() {
            return Adjoints::default();
        }
        Adjoints { p: self.p_next[k][particle], q: self.q[k][particle], r: self.r[k][particle] }
    }

    pub fn mean_p0(&self, k: usize) -> T {
        self.p[k].iter().copied().sum::<T>() / T::from_count(self.particles())
    }

    /// `p0` of one particle on `[0, T + delta]`.
    pub fn p_path(&self, particle: usize) -> GridPath<T> {
        let values = self.p.iter().map(|c| c[particle]).collect();
        GridPath::new(values, self.mesh.dt(), self.mesh.delta_steps(), 0).expect("adjoint columns form a path")
    }

    /// `p0(t) = p0(T)` for `t >= T`. `q0` and `r0` are not stored past `T` and read as zero.
    pub fn terminal_conventions_hold(&self) -> bool {
        let n = self.steps();
        self.p[n..].iter().all(|c| c == &self.p[n]) && self.q.len() == n && self.r.len() == n
    }
}

/// Driver of the backward equation.
pub trait AbsdeDriver<T: Real>: Sync {
    /// `p0(T) = dh/dx (X(T), M(T))`.
    fn terminal(&self, x: T, law: &UniformLaw<'_, T>) -> T;

    /// `dH/dx` on step `k` at adjoints `(p_{k+1}, q_k, r_k)`.
    fn local(&self, _s: &StateView<'_, T>, _u: T, _adj: Adjoints<T>) -> T {
        T::zero()
    }

    /// Segment functional through which the coefficients depend on `x_t`.
    fn advanced(&self) -> Option<&SegmentFunctional<T>> {
        None
    }

    /// Process paired with the segment gradient, evaluated on step `s`.
    fn advanced_integrand(&self, _s: &StateView<'_, T>, _u: T, adj: Adjoints<T>) -> T {
        adj.p
    }
}

/// Zero driver with affine terminal value `slope x + intercept`; the solution is the
/// conditional expectation of the terminal value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ZeroDriver<T> {
    pub slope: T,
    pub intercept: T,
}

impl<T: Real> AbsdeDriver<T> for ZeroDriver<T> {
    fn terminal(&self, x: T, _law: &UniformLaw<'_, T>) -> T {
        self.slope * x + self.intercept
    }
}

/// Cross-sectional regressors; an intercept is always included.
#[derive(Clone, Debug, PartialEq)]
pub enum BasisTerm<T> {
    State,
    Delayed,
    StateSquared,
    StateDelayed,
    Functional(SegmentFunctional<T>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Basis<T> {
    pub terms: Vec<BasisTerm<T>>,
}

impl<T: Real> Default for Basis<T> {
    /// `{1, X(t), X(t - delta), X(t)^2, X(t) X(t - delta)}`.
    fn default() -> Self {
        Self {
            terms: vec![BasisTerm::State, BasisTerm::Delayed, BasisTerm::StateSquared, BasisTerm::StateDelayed],
        }
    }
}

impl<T: Real> Basis<T> {
    pub fn with_term(mut self, term: BasisTerm<T>) -> Self {
        self.terms.push(term);
        self
    }

    pub fn features(&self, ens: &ParticleEnsemble<T>, k: usize) -> Vec<Vec<T>> {
        let x = ens.column(k as isize);
        let lag = ens.column(k as isize - ens.delta_steps() as isize);
        self.terms
            .iter()
            .map(|term| match term {
                BasisTerm::State => x.to_vec(),
                BasisTerm::Delayed => lag.to_vec(),
                BasisTerm::StateSquared => x.iter().map(|&v| v * v).collect(),
                BasisTerm::StateDelayed => x.iter().zip(lag).map(|(&a, &b)| a * b).collect(),
                BasisTerm::Functional(f) => (0..ens.particles()).map(|p| f.apply(&ens.memory(k, p))).collect(),
            })
            .collect()
    }
}

/// Backward sweep from `T` to `0` on the forward ensemble `ens`, which must have been
/// produced by `sim` (same grid and noise).
pub fn solve_absde<T, D>(driver: &D, ens: &ParticleEnsemble<T>, sim: &Simulator<T>, basis: &Basis<T>) -> Result<AdjointTriple<T>>
where
    T: Real,
    D: AbsdeDriver<T> + ?Sized,
{
    let noise = sim.noise();
    if ens.mesh() != &sim.grid().mesh || ens.particles() != sim.grid().particles || ens.seed() != sim.grid().seed {
        return Err(Error::MeshMismatch("ensemble was not produced by this simulator".into()));
    }
    let n = ens.steps();
    let np = ens.particles();
    let dt = ens.dt();
    let advanced = driver.advanced();
    if let Some(f) = advanced {
        if f.delta_steps() != ens.delta_steps() {
            return Err(Error::MeshMismatch("segment functional and ensemble have different delays".into()));
        }
    }

    let terminal_law = ens.law_at_step(n as isize);
    let mut p: Vec<Vec<T>> = vec![Vec::new(); n + 1];
    p[n] = ens.terminal().iter().map(|&x| driver.terminal(x, &terminal_law)).collect();
    let mut p_next = vec![Vec::new(); n];
    let mut q = vec![Vec::new(); n];
    let mut r = vec![Vec::new(); n];
    let mut g: Vec<Vec<T>> = if advanced.is_some() { vec![Vec::new(); n] } else { Vec::new() };
    let jump_rate = noise.mark_variance_rate();

    for k in (0..n).rev() {
        let proj = Projector::new(&basis.features(ens, k), np);
        let pn = &p[k + 1];
        let m = proj.fit(pn);

        let db = noise.brownian(k);
        let prod: Vec<T> = (0..np).map(|i| (pn[i] - m[i]) * db[i]).collect();
        let qk: Vec<T> = proj.fit(&prod).into_iter().map(|v| v / dt).collect();

        let rk: Vec<T> = if noise.has_jumps() && jump_rate > T::zero() {
            let comp = noise.compensated_marks(k);
            let prod: Vec<T> = (0..np).map(|i| (pn[i] - m[i]) * comp[i]).collect();
            proj.fit(&prod).into_iter().map(|v| v / (jump_rate * dt)).collect()
        } else {
            vec![T::zero(); np]
        };

        let controls = ens.control_column(k);
        let (local, gk): (Vec<T>, Vec<T>) = (0..np)
            .into_par_iter()
            .map(|i| {
                let view = ens.view(k, i);
                let adj = Adjoints { p: pn[i], q: qk[i], r: rk[i] };
                let local = driver.local(&view, controls[i], adj);
                let gi = if advanced.is_some() { driver.advanced_integrand(&view, controls[i], adj) } else { T::zero() };
                (local, gi)
            })
            .unzip();

        let mut target: Vec<T> = (0..np).map(|i| pn[i] + local[i] * dt).collect();
        if let Some(f) = advanced {
            g[k] = gk;
            for (j, &c) in f.coefficients().iter().enumerate() {
                if c == T::zero() || k + j >= n {
                    continue;
                }
                for (t, &v) in target.iter_mut().zip(&g[k + j]) {
                    *t += c * v * dt;
                }
            }
        }
        p[k] = proj.fit(&target);
        if p[k].iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: k, time: ens.time(k as isize).as_f64(), particle: 0 });
        }
        p_next[k] = m;
        q[k] = qk;
        r[k] = rk;
    }

    AdjointTriple::from_columns(*ens.mesh(), p, p_next, q, r)
}

/// Information available to the controller.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Information {
    /// Adapted controls: the maximum condition holds particle by particle.
    Full,
    /// Deterministic controls: the maximum condition holds for the ensemble mean.
    Trivial,
}

/// Largest violation of the maximum condition over the mesh.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConditionGap<T> {
    pub gap: T,
    pub stderr: T,
    pub step: usize,
}

/// `max_t [max_u E[H(u) | G_t] - E[H(u_used) | G_t]]`, with `u_used` the controls stored in
/// `ens` and `u` ranging over `candidates`.
pub fn max_condition_gap<T, C>(
    coeffs: &C,
    ens: &ParticleEnsemble<T>,
    adj: &AdjointTriple<T>,
    jumps: &JumpModel<T>,
    candidates: &[T],
    info: Information,
) -> Result<ConditionGap<T>>
where
    T: Real,
    C: Coefficients<T> + ?Sized,
{
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    if adj.mesh() != ens.mesh() || adj.particles() != ens.particles() {
        return Err(Error::MeshMismatch("adjoint and ensemble differ".into()));
    }
    let horizon = ens.mesh().horizon();
    let mut worst: Option<ConditionGap<T>> = None;
    for k in 0..ens.steps() {
        let used = ens.control_column(k);
        // rows[p] = (H at used control, H at each candidate)
        let rows: Vec<(T, Vec<T>)> = (0..ens.particles())
            .into_par_iter()
            .map(|p| {
                let state = ens.view(k, p);
                let adjoints = adj.at(k, p);
                let h = |u: T| hamiltonian(coeffs, &HamiltonianInputs { state, u, adjoints }, jumps, horizon);
                (h(used[p]), candidates.iter().map(|&u| h(u)).collect())
            })
            .collect();
        let diffs: Vec<T> = match info {
            Information::Full => rows
                .iter()
                .map(|(h0, hs)| hs.iter().copied().fold(T::neg_infinity(), T::max) - *h0)
                .collect(),
            Information::Trivial => {
                let nf = T::from_count(rows.len());
                let best = (0..candidates.len())
                    .max_by(|&a, &b| {
                        let ma: T = rows.iter().map(|r| r.1[a]).sum::<T>() / nf;
                        let mb: T = rows.iter().map(|r| r.1[b]).sum::<T>() / nf;
                        ma.partial_cmp(&mb).unwrap_or(std::cmp::Ordering::Equal)
                    })
                    .expect("non-empty candidates");
                rows.iter().map(|(h0, hs)| hs[best] - *h0).collect()
            }
        };
        let est = Estimate::from_samples(&diffs);
        if worst.is_none_or(|w| est.mean > w.gap) {
            worst = Some(ConditionGap { gap: est.mean, stderr: est.stderr, step: k });
        }
    }
    Ok(worst.expect("at least one step"))
}

/// Central difference `(J(u + eps pi) - J(u - eps pi)) / (2 eps)` under common random numbers.
pub fn stationarity_gap<T, C>(
    sim: &Simulator<T>,
    coeffs: &C,
    control: &dyn Control<T>,
    direction: &dyn Control<T>,
    eps: T,
) -> Result<Estimate<T>>
where
    T: Real,
    C: Coefficients<T> + ?Sized,
{
    if eps == T::zero() {
        return Ok(Estimate { mean: T::zero(), stderr: T::zero() });
    }
    use crate::sfde::PerturbedControl;
    let plus = PerturbedControl { base: control, direction, eps };
    let minus = PerturbedControl { base: control, direction, eps: -eps };
    let j_plus = path_costs(&sim.run(coeffs, &plus)?, coeffs);
    let j_minus = path_costs(&sim.run(coeffs, &minus)?, coeffs);
    let diff = Estimate::paired_difference(&j_plus, &j_minus);
    let scale = T::lit(2.0) * eps;
    Ok(Estimate { mean: diff.mean / scale, stderr: diff.stderr / scale.abs() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SimGrid;
    use crate::segments::Segment;
    use crate::sfde::{ConstantControl, LinearMemory};
    use proptest::prelude::*;

    #[test]
    fn riesz_examples() {
        let dt = 0.01;
        let avg = SegmentFunctional::<f64>::averaging(100, dt, |_| 1.0).unwrap();
        let p = GridPath::<f64>::from_fn(dt, 100, 0, 300, |_| 2.5).unwrap();
        assert!((avg.riesz_advanced(&p, 1.0).unwrap() - 2.5).abs() < 1e-12);

        let ev = SegmentFunctional::evaluation(0.5, 50, dt).unwrap();
        let id = GridPath::<f64>::from_fn(dt, 50, 0, 300, |t| t).unwrap();
        assert!((ev.riesz_advanced(&id, 1.0).unwrap() - 1.5).abs() < 1e-12);

        // a(r) = r against p(t + r) = r on [0, 1]: 1/3 up to trapezoid error
        let ramp = SegmentFunctional::<f64>::averaging(1000, 0.001, |r| r).unwrap();
        let p = GridPath::<f64>::from_fn(0.001, 1000, 0, 2000, |t| t - 1.0).unwrap();
        assert!((ramp.riesz_advanced(&p, 1.0).unwrap() - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn riesz_reads_zero_past_the_path() {
        let dt = 0.1;
        let avg = SegmentFunctional::<f64>::averaging(4, dt, |_| 1.0).unwrap();
        let p = GridPath::<f64>::from_fn(dt, 4, 0, 10, |_| 1.0).unwrap();
        // at t = T only the s = 0 point survives, with trapezoid weight dt/2
        assert!((avg.riesz_advanced(&p, 1.0).unwrap() - 0.05).abs() < 1e-12);
    }

    #[test]
    fn evaluation_must_be_on_mesh_and_within_delay() {
        assert!(SegmentFunctional::evaluation(0.55, 10, 0.1).is_err());
        assert!(SegmentFunctional::evaluation(2.0, 10, 0.1).is_err());
    }

    #[test]
    fn duality_trivial_cases() {
        let dt = 0.05;
        let p = GridPath::<f64>::from_fn(dt, 4, 0, 20, |t| 1.0 + t).unwrap();
        let zero = GridPath::<f64>::from_fn(dt, 4, -4, 24, |_| 0.0).unwrap();
        let avg = SegmentFunctional::<f64>::averaging(4, dt, |_| 1.0).unwrap();
        assert_eq!(riesz_duality_check(&avg, &p, &zero).unwrap(), (0.0, 0.0));

        let y = GridPath::<f64>::from_fn(dt, 4, 0, 20, |t| t.sin()).unwrap();
        let ev0 = SegmentFunctional::evaluation(0.0, 4, dt).unwrap();
        let (l, r) = riesz_duality_check(&ev0, &p, &y).unwrap();
        assert_eq!(l, r);
    }

    #[test]
    fn duality_rejects_support_violation() {
        let dt = 0.1;
        let p = GridPath::<f64>::from_fn(dt, 2, 0, 10, |_| 1.0).unwrap();
        let y = GridPath::<f64>::from_fn(dt, 2, -2, 10, |t| if t < 0.0 { 1.0 } else { 0.0 }).unwrap();
        let avg = SegmentFunctional::<f64>::averaging(2, dt, |_| 1.0).unwrap();
        assert!(matches!(riesz_duality_check(&avg, &p, &y), Err(Error::SupportViolation { .. })));
    }

    proptest! {
        #[test]
        fn duality_holds_to_first_order(
            a in -2.0f64..2.0, b in -2.0f64..2.0, c in 0.5f64..3.0, lag in 0usize..=20
        ) {
            let dt = 0.01;
            let d = 20;
            let p = GridPath::<f64>::from_fn(dt, d, 0, 100, |t| a + (c * t).cos()).unwrap();
            let y = GridPath::<f64>::from_fn(dt, d, 0, 100, |t| b * t + (c * t).sin()).unwrap();
            let avg = SegmentFunctional::<f64>::averaging(d, dt, |s| 1.0 + s).unwrap();
            let (l, r) = riesz_duality_check(&avg, &p, &y).unwrap();
            prop_assert!((l - r).abs() < 5.0 * dt);
            let ev = SegmentFunctional::evaluation(lag as f64 * dt, d, dt).unwrap();
            let (l, r) = riesz_duality_check(&ev, &p, &y).unwrap();
            prop_assert!((l - r).abs() < 5.0 * dt);
        }
    }

    #[test]
    fn hamiltonian_examples() {
        let grid = SimGrid::<f64>::new(0.1, 0.1, 1.0, 1, 0).unwrap();
        let xi = Segment::constant(0.0, 1, 0.1).unwrap();
        let sim = Simulator::new(grid, JumpModel::none(), xi).unwrap();
        let coeffs = LinearMemory { c0: 1.0, ..Default::default() };
        let ens = sim.run(&coeffs, &ConstantControl(0.0)).unwrap();
        let inputs = HamiltonianInputs { state: ens.view(3, 0), u: 0.0, adjoints: Adjoints { p: 3.0, q: 7.0, r: 0.0 } };
        assert_eq!(hamiltonian(&coeffs, &inputs, &JumpModel::none(), 1.0), 3.0);
        // past the horizon
        assert_eq!(hamiltonian(&coeffs, &inputs, &JumpModel::none(), 0.25), 0.0);
    }

    struct Terminal(f64);

    impl AbsdeDriver<f64> for Terminal {
        fn terminal(&self, x: f64, _: &UniformLaw<'_, f64>) -> f64 {
            self.0 * x
        }
    }

    struct Fixed(f64);

    impl AbsdeDriver<f64> for Fixed {
        fn terminal(&self, _: f64, _: &UniformLaw<'_, f64>) -> f64 {
            self.0
        }
    }

    fn brownian_sim(n: usize) -> (Simulator<f64>, ParticleEnsemble<f64>) {
        let grid = SimGrid::<f64>::new(0.02, 0.1, 1.0, n, 5).unwrap();
        let xi = Segment::constant(0.7, 5, 0.02).unwrap();
        let sim = Simulator::new(grid, JumpModel::none(), xi).unwrap();
        let ens = sim.run(&LinearMemory { s0: 1.0, ..Default::default() }, &ConstantControl(0.0)).unwrap();
        (sim, ens)
    }

    #[test]
    fn zero_driver_with_deterministic_terminal() {
        let (sim, ens) = brownian_sim(500);
        let adj = solve_absde(&Fixed(2.0), &ens, &sim, &Basis::default()).unwrap();
        for k in 0..ens.steps() {
            assert!(adj.p0(k).iter().all(|&v| (v - 2.0).abs() < 1e-12));
            assert!(adj.q0(k).iter().all(|&v| v.abs() < 1e-12));
            assert!(adj.r0(k).iter().all(|&v| v == 0.0));
        }
        assert!(adj.terminal_conventions_hold());
        assert_eq!(adj.at(ens.steps(), 0), Adjoints::default());
    }

    #[test]
    fn zero_driver_recovers_martingale_and_its_integrand() {
        let (sim, ens) = brownian_sim(20_000);
        let adj = solve_absde(&Terminal(-1.0), &ens, &sim, &Basis::default()).unwrap();
        assert!(adj.terminal_conventions_hold());
        for k in [0usize, 10, 25, 49] {
            let x = ens.column(k as isize);
            let rms = (adj.p0(k).iter().zip(x).map(|(p, x)| (p + x).powi(2)).sum::<f64>() / x.len() as f64).sqrt();
            assert!(rms < 0.02, "k={k} rms={rms}");
            let q_mean = adj.q0(k).iter().sum::<f64>() / x.len() as f64;
            assert!((q_mean + 1.0).abs() < 0.05, "k={k} q={q_mean}");
        }
        assert!(adj.p_path(3).values()[50..].iter().all(|&v| v == adj.p0(50)[3]));
    }

    #[test]
    fn condition_gap_of_control_free_hamiltonian_is_zero() {
        let (_, ens) = brownian_sim(50);
        let coeffs = LinearMemory { s0: 1.0, ..Default::default() };
        let adj = solve_absde(&Terminal(-1.0), &ens, &brownian_sim(50).0, &Basis::default()).unwrap();
        let g = max_condition_gap(&coeffs, &ens, &adj, &JumpModel::none(), &[-1.0, 0.0, 2.0], Information::Full).unwrap();
        assert_eq!(g.gap, 0.0);
        assert!(matches!(
            max_condition_gap(&coeffs, &ens, &adj, &JumpModel::none(), &[], Information::Trivial),
            Err(Error::EmptyCandidates)
        ));
    }

    #[test]
    fn zero_perturbation_has_zero_gap() {
        let (sim, _) = brownian_sim(10);
        let coeffs = LinearMemory { s0: 1.0, ..Default::default() };
        let g = stationarity_gap(&sim, &coeffs, &ConstantControl(0.0), &ConstantControl(1.0), 0.0).unwrap();
        assert_eq!((g.mean, g.stderr), (0.0, 0.0));
    }
}
