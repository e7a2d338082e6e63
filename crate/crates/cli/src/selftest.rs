//! Analytic-oracle suite: each entry compares a library result with a value known in
//! closed form. Runs in a few seconds at reduced particle counts.

use memfield::adjoint::{solve_absde, Basis, SegmentFunctional, ZeroDriver};
use memfield::grid::SimGrid;
use memfield::jumps::JumpModel;
use memfield::lq::{solve_lq, LQOptions, LQSpec};
use memfield::mean_variance::{
    self, verify, MeanVarCoefficients, MeanVarSolution, MeanVarSpec, OptimalPortfolio, Schedule,
};
use memfield::measure::{m_dist_sq, m_norm_sq, EmpiricalMeasure};
use memfield::num::Estimate;
use memfield::quadrature::QuadratureRule;
use memfield::segments::{GridPath, Segment};
use memfield::sfde::{ConstantControl, LinearMemory, Simulator};

use crate::Check;

type LambdaFormula = fn(f64, f64, f64) -> f64;

/// Deliberately wrong `Lambda` (unsquared drift) for the mutation test.
fn tampered_lambda(b0: f64, sigma0: f64, jump: f64) -> f64 {
    b0 / (sigma0 * sigma0 + jump)
}

/// Run every oracle. With `tamper_lambda` the mean-variance checks use a wrong
/// `Lambda` formula and must fail.
pub fn run(tamper_lambda: bool) -> Result<Vec<Check>, memfield::Error> {
    let mut checks = Vec::new();
    dirac_norms(&mut checks);
    delay_ode(&mut checks)?;
    riesz(&mut checks)?;
    zero_driver(&mut checks)?;
    deterministic_lq(&mut checks)?;
    let formula: LambdaFormula = if tamper_lambda { tampered_lambda } else { mean_variance::lambda };
    mean_variance_closed_form(&mut checks, formula)?;
    Ok(checks)
}

fn dirac_norms(out: &mut Vec<Check>) {
    let q = QuadratureRule::<f64>::default();
    let sqrt_pi = std::f64::consts::PI.sqrt();
    let d0 = EmpiricalMeasure::dirac(0.0).expect("valid");
    let d2 = EmpiricalMeasure::dirac(2.0).expect("valid");
    out.push(Check::below("dirac_norm", (m_norm_sq(&d0, &q) - sqrt_pi).abs(), 1e-6));
    let exact = 2.0 * sqrt_pi * (1.0 - (-1.0f64).exp());
    out.push(Check::below("dirac_distance", (m_dist_sq(&d0, &d2, &q) - exact).abs(), 1e-6));
}

/// Euler error at `T = 2` for `x' = x(t - 1)`, `x = 1` on `[-1, 0]`; exact value 3.5.
pub fn delay_ode_errors(steps: &[f64]) -> Result<Vec<f64>, memfield::Error> {
    steps
        .iter()
        .map(|&dt| {
            let grid = SimGrid::<f64>::new(dt, 1.0, 2.0, 1, 0)?;
            let xi = Segment::constant(1.0, grid.delta_steps(), dt)?;
            let sim = Simulator::new(grid, JumpModel::none(), xi)?;
            let ens = sim.run(&LinearMemory { clag: 1.0, ..Default::default() }, &ConstantControl(0.0))?;
            Ok((ens.terminal()[0] - 3.5).abs())
        })
        .collect()
}

fn delay_ode(out: &mut Vec<Check>) -> Result<(), memfield::Error> {
    let e = delay_ode_errors(&[0.02, 0.01, 0.005])?;
    for (i, w) in e.windows(2).enumerate() {
        out.push(Check::below(format!("delay_ode_ratio_{i}_off_2"), (w[0] / w[1] - 2.0).abs(), 0.2));
    }
    Ok(())
}

fn riesz(out: &mut Vec<Check>) -> Result<(), memfield::Error> {
    let dt = 0.01;
    let avg = SegmentFunctional::<f64>::averaging(100, dt, |_| 1.0)?;
    let constant = GridPath::from_fn(dt, 100, 0, 400, |_| 0.7)?;
    out.push(Check::below("riesz_averaging_constant", (avg.riesz_advanced(&constant, 1.0)? - 0.7).abs(), 1e-12));
    let eval = SegmentFunctional::<f64>::evaluation(0.5, 50, dt)?;
    let identity = GridPath::from_fn(dt, 50, 0, 300, |t| t)?;
    out.push(Check::below("riesz_evaluation", (eval.riesz_advanced(&identity, 1.0)? - 1.5).abs(), 1e-12));
    Ok(())
}

/// `X = 1 + B`, terminal `-X(T)`: returns `(max_k |mean p_k + 1| / stderr, max_k |mean q_k + 1|)`.
pub fn zero_driver_errors(particles: usize, dt: f64, seed: u64) -> Result<(f64, f64), memfield::Error> {
    let grid = SimGrid::<f64>::new(dt, 0.1, 1.0, particles, seed)?;
    let xi = Segment::constant(1.0, grid.delta_steps(), dt)?;
    let sim = Simulator::new(grid, JumpModel::none(), xi)?;
    let ens = sim.run(&LinearMemory { s0: 1.0, ..Default::default() }, &ConstantControl(0.0))?;
    let adj = solve_absde(&ZeroDriver { slope: -1.0, intercept: 0.0 }, &ens, &sim, &Basis::default())?;
    let se = Estimate::from_samples(adj.p0(ens.steps())).stderr;
    let mut p_err = 0.0f64;
    let mut q_err = 0.0f64;
    for k in 0..ens.steps() {
        p_err = p_err.max((adj.mean_p0(k) + 1.0).abs() / se);
        q_err = q_err.max((Estimate::from_samples(adj.q0(k)).mean + 1.0).abs());
    }
    Ok((p_err, q_err))
}

fn zero_driver(out: &mut Vec<Check>) -> Result<(), memfield::Error> {
    let (p, q) = zero_driver_errors(20_000, 0.02, 7)?;
    out.push(Check::below("absde_mean_p_z", p, 3.0));
    out.push(Check::below("absde_q_error", q, 0.05));
    Ok(())
}

fn deterministic_lq(out: &mut Vec<Check>) -> Result<(), memfield::Error> {
    let grid = SimGrid::<f64>::new(0.01, 0.2, 1.0, 2, 0)?;
    let spec = LQSpec::<f64>::new(|_| 0.0, 0.0, 0.0, Segment::constant(1.0, 20, 0.01)?);
    let sol = solve_lq(&spec, grid, JumpModel::none(), LQOptions::default())?;
    out.push(Check::flag("lq_converged", sol.report.converged));
    out.push(Check::below("lq_value_error", (sol.performance().mean + 0.25).abs(), 1e-6));
    let u_err = sol.control.columns.iter().flatten().fold(0.0f64, |m, &u| m.max((u + 0.5).abs()));
    out.push(Check::below("lq_control_error", u_err, 1e-6));
    Ok(())
}

fn mean_variance_closed_form(out: &mut Vec<Check>, formula: LambdaFormula) -> Result<(), memfield::Error> {
    let grid = SimGrid::<f64>::new(0.01, 0.1, 1.0, 2_000, 3)?;
    let spec = MeanVarSpec {
        b0: Schedule::Constant(0.1),
        sigma0: Schedule::Constant(0.2),
        a: 1.0,
        xi: Segment::constant(2.0, grid.delta_steps(), 0.01)?,
        jumps: JumpModel::none(),
    };
    spec.validate(&grid.mesh)?;
    let lam = vec![formula(0.1, 0.2, 0.0); grid.steps() + 1];
    let sol = MeanVarSolution::from_lambda(&spec, &grid.mesh, lam)?;
    out.push(Check::below("meanvar_lambda", (sol.lambda()[0] - 0.25).abs(), 1e-12));
    out.push(Check::below("meanvar_phi0", (sol.phi()[0] + (-0.25f64).exp()).abs(), 1e-12));
    // X = 1.5, X(t - delta) = 1.2
    let pi = sol.pi_hat(0, 1.5, 1.2)?;
    out.push(Check::below("meanvar_feedback", (pi + 0.25 * 0.5 / 0.12).abs(), 1e-12));
    let sim = Simulator::new(grid, JumpModel::none(), spec.xi.clone())?;
    let ens = sim.run(&MeanVarCoefficients { solution: &sol }, &OptimalPortfolio { solution: &sol })?;
    let rep = verify(&sol, &sim, &ens)?;
    out.push(Check::below("meanvar_pi_residual", rep.pi_residual, 1e-12));
    Ok(())
}
