//! One function per problem. Setup failures (parameters the library rejects) are
//! configuration errors; failures while simulating are runtime aborts.

use memfield::adjoint::{max_condition_gap, stationarity_gap, Information};
use memfield::grid::SimGrid;
use memfield::jumps::{JumpModel, MarkLaw};
use memfield::lq::{solve_lq, verify_lq, LQOptions, LQSpec};
use memfield::mean_variance::{
    closed_form_adjoint, compare_controls, solve_closed_form, verify, MeanVarCoefficients, MeanVarSpec,
    OptimalPortfolio, Schedule,
};
use memfield::measure::{lemma31_gap, m_dist_sq, m_norm_sq, EmpiricalMeasure};
use memfield::noise::particle_rng;
use memfield::picard::{consistency_check, picard_solve, PicardReport};
use memfield::quadrature::QuadratureRule;
use memfield::segments::Segment;
use memfield::sfde::{ConstantControl, LinearMemory, Simulator};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::{ConfigError, LinearConfig, MarkConfig, Problem, RunConfig};
use crate::output::{checks_csv, csv_bytes, num};
use crate::{Check, CliError, Outcome};

pub fn execute(cfg: &RunConfig) -> Result<Outcome, CliError> {
    match cfg.problem {
        Problem::Simulate => simulate(cfg),
        Problem::Picard => picard(cfg),
        Problem::Norms => norms(cfg),
        Problem::Meanvar => meanvar(cfg),
        Problem::Lq => lq(cfg),
    }
}

/// Library rejection of a configured parameter, mapped to the config key.
fn setup<T>(r: memfield::Result<T>, problem: Problem) -> Result<T, CliError> {
    r.map_err(|e| {
        let key = match &e {
            memfield::Error::NotMultiple { field, .. } => format!("grid.{field}"),
            memfield::Error::InvalidParameter { name, .. } => match *name {
                "dt" | "delta" | "horizon" | "particles" => format!("grid.{name}"),
                "intensity" => "jumps.intensity".into(),
                "jump_marks" | "marks" | "sd" | "lo" | "hi" => "jumps.marks".into(),
                "xi" => "initial.value".into(),
                n => format!("{}.{n}", problem.name()),
            },
            _ => String::new(),
        };
        CliError::Config { path: "config".into(), error: ConfigError::new(key, e.to_string()) }
    })
}

fn grid(cfg: &RunConfig) -> Result<SimGrid<f64>, CliError> {
    let g = cfg.grid();
    setup(SimGrid::new(g.dt, g.delta, g.horizon, g.particles, cfg.seed.0), cfg.problem)
}

fn jumps(cfg: &RunConfig) -> Result<JumpModel<f64>, CliError> {
    match cfg.jumps {
        None => Ok(JumpModel::none()),
        Some(j) => {
            let marks = match j.marks {
                MarkConfig::Dirac { value } => MarkLaw::Dirac(value),
                MarkConfig::Normal { mean, sd } => MarkLaw::Normal { mean, sd },
                MarkConfig::Uniform { lo, hi } => MarkLaw::Uniform { lo, hi },
            };
            setup(JumpModel::new(j.intensity, marks), cfg.problem)
        }
    }
}

/// `xi(-s) = value - slope s` sampled at lags `s = k dt`.
fn initial(cfg: &RunConfig, grid: &SimGrid<f64>) -> Result<Segment<f64>, CliError> {
    let i = cfg.initial();
    setup(Segment::from_fn(grid.delta_steps(), grid.dt(), |s| i.value - i.slope * s), cfg.problem)
}

fn simulator(cfg: &RunConfig) -> Result<Simulator<f64>, CliError> {
    let g = grid(cfg)?;
    let xi = initial(cfg, &g)?;
    setup(Simulator::new(g, jumps(cfg)?, xi), cfg.problem)
}

fn linear(c: &LinearConfig) -> LinearMemory<f64> {
    LinearMemory {
        c0: c.c0,
        cx: c.cx,
        clag: c.clag,
        cmean: c.cmean,
        cu: c.cu,
        s0: c.s0,
        sx: c.sx,
        jump_scale: c.jump_scale,
    }
}

fn z(mean: f64, stderr: f64) -> f64 {
    if stderr > 0.0 {
        mean.abs() / stderr
    } else if mean == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

fn simulate(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let sc = cfg.simulate.clone().unwrap_or_default();
    let sim = simulator(cfg)?;
    let ens = sim.run(&linear(&sc.coefficients), &ConstantControl(sc.control))?;
    let mut out = Outcome::default();

    let mut header = vec!["t".to_string(), "mean".into(), "variance".into()];
    header.extend(sc.quantiles.iter().map(|q| format!("q{q}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let stats = ens.law_stats(&sc.quantiles);
    let law = csv_bytes(
        &header,
        stats.iter().map(|s| {
            let mut r = vec![num(s.t), num(s.mean), num(s.variance)];
            r.extend(s.quantiles.iter().map(|&q| num(q)));
            r
        }),
    );
    out.files.push(("law.csv".into(), law));

    let shown = sc.paths.min(ens.particles());
    let names: Vec<String> = std::iter::once("t".to_string()).chain((0..shown).map(|p| format!("path_{p}"))).collect();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let d = ens.delta_steps() as isize;
    let paths = csv_bytes(
        &names,
        (-d..=ens.steps() as isize).map(|k| {
            let col = ens.column(k);
            std::iter::once(num(ens.time(k))).chain(col[..shown].iter().map(|&x| num(x))).collect()
        }),
    );
    out.files.push(("paths.csv".into(), paths));

    let last = stats.last().expect("non-empty mesh");
    out.scalar("mean_T", last.mean);
    out.scalar("variance_T", last.variance);
    let finite = ens.columns().iter().flatten().all(|x| x.is_finite());
    out.checks.push(Check::flag("finite_states", finite));
    Ok(out)
}

fn picard_rows(rows: &mut Vec<Vec<String>>, window_steps: usize, rep: &PicardReport<f64>, dt: f64) {
    for (w, win) in rep.windows.iter().enumerate() {
        let ratios = win.ratios();
        for (j, &d) in win.distances.iter().enumerate() {
            let ratio = if j == 0 { String::new() } else { ratios[j - 1].map(num).unwrap_or_default() };
            rows.push(vec![
                window_steps.to_string(),
                w.to_string(),
                num(win.start_step as f64 * dt),
                j.to_string(),
                num(d),
                ratio,
            ]);
        }
    }
}

fn mean_first_ratio(rep: &PicardReport<f64>) -> Option<f64> {
    let r: Vec<f64> = rep.windows.iter().filter_map(|w| w.first_ratio()).collect();
    (!r.is_empty()).then(|| r.iter().sum::<f64>() / r.len() as f64)
}

fn picard(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let pc = cfg.picard.clone().unwrap_or_default();
    let sim = simulator(cfg)?;
    let coeffs = linear(&pc.coefficients);
    let control = ConstantControl(pc.control);
    let dt = sim.grid().dt();
    let window_steps = (pc.window / dt).round() as usize;

    let (ens, rep) = picard_solve(&coeffs, &control, &sim, window_steps, pc.tol, pc.max_iter)?;
    let direct = sim.run(&coeffs, &control)?;
    let consistency = consistency_check(&ens, &direct)?;

    let mut out = Outcome::default();
    let mut rows = Vec::new();
    picard_rows(&mut rows, window_steps, &rep, dt);

    out.checks.push(Check::flag("converged", rep.converged()));
    let worst_final = rep.windows.iter().filter_map(|w| w.last_ratio()).fold(0.0, f64::max);
    out.checks.push(Check::below("final_ratio_max", worst_final, 1.0));
    out.checks.push(Check::below("consistency_msd", consistency, pc.consistency_tol));
    let full = mean_first_ratio(&rep);
    out.scalar("windows", rep.window_count() as f64);
    out.scalar("iterations_max", rep.windows.iter().map(|w| w.iterations()).max().unwrap_or(0) as f64);
    out.scalar("consistency_msd", consistency);
    if let Some(r) = full {
        out.scalar("first_ratio_mean", r);
    }

    if pc.compare_half_window && window_steps.is_multiple_of(2) {
        let half = window_steps / 2;
        let (_, rep_half) = picard_solve(&coeffs, &control, &sim, half, pc.tol, pc.max_iter)?;
        picard_rows(&mut rows, half, &rep_half, dt);
        if let (Some(a), Some(b)) = (full, mean_first_ratio(&rep_half)) {
            out.scalar("first_ratio_mean_half", b);
            out.checks.push(Check::below("half_window_ratio_gain", b - a, 0.0));
        }
    }

    out.files.push((
        "picard.csv".into(),
        csv_bytes(&["window_steps", "window", "start", "iteration", "distance", "ratio"], rows),
    ));
    out.files.push(("verification.csv".into(), checks_csv(&out.checks)));
    Ok(out)
}

fn norms(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let nc = cfg.norms.clone().unwrap_or_default();
    let q = setup(QuadratureRule::gauss_hermite(nc.nodes), cfg.problem)?;
    let sqrt_pi = std::f64::consts::PI.sqrt();
    let mut out = Outcome::default();
    let mut rows = Vec::new();

    let origin = setup(EmpiricalMeasure::dirac(0.0), cfg.problem)?;
    let v = m_norm_sq(&origin, &q);
    rows.push(vec!["norm_dirac_0".into(), num(v), num(sqrt_pi), num((v - sqrt_pi).abs())]);
    for [a, b] in &nc.dirac_pairs {
        let da = setup(EmpiricalMeasure::dirac(*a), cfg.problem)?;
        let db = setup(EmpiricalMeasure::dirac(*b), cfg.problem)?;
        let v = m_dist_sq(&da, &db, &q);
        let exact = 2.0 * sqrt_pi * (1.0 - (-(a - b) * (a - b) / 4.0).exp());
        rows.push(vec![format!("dist_dirac_{a}_{b}"), num(v), num(exact), num((v - exact).abs())]);
    }
    let worst = rows.iter().map(|r| r[3].parse::<f64>().expect("own formatting")).fold(0.0, f64::max);
    out.checks.push(Check::below("dirac_max_abs_error", worst, nc.tolerance));
    out.scalar("dirac_max_abs_error", worst);
    out.files.push(("norms.csv".into(), csv_bytes(&["case", "value", "oracle", "abs_error"], rows)));

    let mut lemma = Vec::new();
    let mut violations = 0usize;
    let mut worst_ratio = 0.0f64;
    for trial in 0..nc.lemma_trials {
        let (x1, x2) = coupled_samples(cfg.seed.0, trial, nc.lemma_samples);
        let (lhs, rhs) = setup(lemma31_gap(&x1, &x2, &q), cfg.problem)?;
        let ok = lhs <= rhs + nc.lemma_slack;
        violations += usize::from(!ok);
        if rhs > 0.0 {
            worst_ratio = worst_ratio.max(lhs / rhs);
        }
        lemma.push(vec![trial.to_string(), num(lhs), num(rhs), ok.to_string()]);
    }
    out.checks.push(Check::at_most("lemma_violations", violations as f64, 0.0));
    out.scalar("lemma_max_ratio", worst_ratio);
    out.files.push(("lemma31.csv".into(), csv_bytes(&["trial", "lhs", "rhs", "pass"], lemma)));
    out.files.push(("verification.csv".into(), checks_csv(&out.checks)));
    Ok(out)
}

/// Randomized coupling `X2 = c X1 + shift + s W` of a Gaussian sample `X1`.
pub fn coupled_samples(seed: u64, trial: usize, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut rng = particle_rng(seed, trial);
    let mu: f64 = rng.random_range(-2.0..2.0);
    let sd: f64 = rng.random_range(0.1..2.0);
    let c: f64 = rng.random_range(0.5..1.5);
    let shift: f64 = rng.random_range(-1.5..1.5);
    let s: f64 = rng.random_range(0.0..1.0);
    let mut x1 = Vec::with_capacity(n);
    let mut x2 = Vec::with_capacity(n);
    for _ in 0..n {
        let a: f64 = rng.sample(StandardNormal);
        let w: f64 = rng.sample(StandardNormal);
        let v = mu + sd * a;
        x1.push(v);
        x2.push(c * v + shift + s * w);
    }
    (x1, x2)
}

fn meanvar(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let mc = cfg.meanvar.clone().unwrap_or_default();
    let g = grid(cfg)?;
    let xi = initial(cfg, &g)?;
    let jumps = jumps(cfg)?;
    let spec = MeanVarSpec {
        b0: Schedule::Constant(mc.b0),
        sigma0: Schedule::Constant(mc.sigma0),
        a: mc.a,
        xi: xi.clone(),
        jumps: jumps.clone(),
    };
    let sol = setup(solve_closed_form(&spec, &g.mesh), cfg.problem)?;
    let sim = setup(Simulator::new(g, jumps.clone(), xi), cfg.problem)?;
    let coeffs = MeanVarCoefficients { solution: &sol };
    let optimal = OptimalPortfolio { solution: &sol };
    let ens = sim.run(&coeffs, &optimal)?;
    let rep = verify(&sol, &sim, &ens)?;
    let rows = compare_controls(&sol, &sim)?;
    let stat = stationarity_gap(&sim, &coeffs, &optimal, &ConstantControl(1.0), mc.eps)?;
    let adj = closed_form_adjoint(&sol, &ens)?;
    let candidates: Vec<f64> = (-10..=10).map(|i| i as f64 * 0.5).collect();
    let gap = max_condition_gap(&coeffs, &ens, &adj, &jumps, &candidates, Information::Full)?;
    let dt = g.dt();

    let mut out = Outcome::default();
    let mesh = g.mesh;
    out.files.push((
        "solution.csv".into(),
        csv_bytes(
            &["t", "lambda", "phi", "psi"],
            (0..=mesh.horizon_steps()).map(|k| {
                vec![num(mesh.time(k as isize)), num(sol.lambda()[k]), num(sol.phi()[k]), num(sol.psi()[k])]
            }),
        ),
    ));

    let c = &mut out.checks;
    c.push(Check::below("pi_residual_max", rep.pi_residual, 1e-12));
    c.push(Check::below("p_drift_z", z(rep.p_drift.mean, rep.p_drift.stderr), 3.0));
    c.push(Check::below("lsmc_p0_relative_error", rep.lsmc_relative_error(), mc.lsmc_tolerance));
    c.push(Check::at_least("positive_fraction", rep.positive_fraction, 1.0));
    c.push(Check::above("min_delayed_state", rep.min_delayed, 0.0));
    c.push(Check::below("log_growth_z", z(rep.log_y.mean - rep.log_y_predicted, rep.log_y.stderr), 3.0));
    let ode = sol.ode_residuals().iter().fold(0.0f64, |m, r| m.max(r.abs()));
    c.push(Check::at_most("phi_ode_residual_max", ode, dt * dt));
    c.push(Check::below("stationarity_constant_z", z(stat.mean, stat.stderr), 3.0));
    c.push(Check::at_most("max_condition_gap", gap.gap, 3.0 * gap.stderr + 1e-12));
    for r in rows.iter().skip(1) {
        let zr = if r.advantage.stderr > 0.0 { r.advantage.mean / r.advantage.stderr } else { f64::INFINITY };
        c.push(Check { name: format!("j_{}", r.name), value: zr, condition: ">= -3 paired stderr".into(), pass: r.passes() });
    }

    out.files.push(("verification.csv".into(), checks_csv(&out.checks)));
    out.files.push((
        "j_comparison.csv".into(),
        csv_bytes(
            &["control", "j", "stderr", "advantage", "advantage_stderr", "pass"],
            rows.iter().map(|r| {
                vec![
                    r.name.clone(),
                    num(r.j.mean),
                    num(r.j.stderr),
                    num(r.advantage.mean),
                    num(r.advantage.stderr),
                    r.passes().to_string(),
                ]
            }),
        ),
    ));
    out.files.push((
        "drift.csv".into(),
        csv_bytes(&["t", "drift", "z"], rep.step_drift.iter().map(|&(t, d, zk)| vec![num(t), num(d), num(zk)])),
    ));

    out.scalar("lambda_0", sol.lambda()[0]);
    out.scalar("phi_0", sol.phi()[0]);
    out.scalar("psi_0", sol.psi()[0]);
    out.scalar("j_optimal", rows[0].j.mean);
    out.scalar("j_optimal_stderr", rows[0].j.stderr);
    out.scalar("p0_closed_form", rep.closed_p0);
    out.scalar("p0_lsmc", rep.lsmc_p0);
    out.scalar("p_drift_mean", rep.p_drift.mean);
    out.scalar("p_drift_stderr", rep.p_drift.stderr);
    out.scalar("min_excess", rep.min_excess);
    out.scalar("min_delayed_state", rep.min_delayed);
    out.scalar("stationarity_constant", stat.mean);
    out.scalar("max_condition_gap", gap.gap);
    Ok(out)
}

fn lq(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let lc = cfg.lq.clone().unwrap_or_default();
    let g = grid(cfg)?;
    let xi = initial(cfg, &g)?;
    let jumps = jumps(cfg)?;
    let (k0, k1) = (lc.kernel, lc.kernel_slope);
    let spec = LQSpec::new(move |s| k0 + k1 * s, lc.alpha0, lc.beta0, xi);
    setup(spec.validate(&g), cfg.problem)?;
    let opts = LQOptions { damping: lc.damping, tolerance: lc.tol, max_iter: lc.max_iter };
    let sol = solve_lq(&spec, g, jumps, opts)?;
    let rep = verify_lq(&sol, lc.eps)?;
    let j = sol.performance();

    let mut out = Outcome::default();
    let c = &mut out.checks;
    c.push(Check::flag("converged", sol.report.converged));
    c.push(Check::below("idempotence", rep.idempotence, lc.tol));
    c.push(Check::below("residual_max", rep.residual_max, lc.tol));
    for (name, gap) in &rep.stationarity {
        let ok = gap.mean.abs() <= 3.0 * gap.stderr + 1e-9;
        c.push(Check { name: format!("stationarity_{name}_z"), value: z(gap.mean, gap.stderr), condition: "<= 3 (or |gap| <= 1e-9)".into(), pass: ok });
    }
    for r in &rep.perturbations {
        let zr = if r.advantage.stderr > 0.0 { r.advantage.mean / r.advantage.stderr } else { r.advantage.mean.signum() * f64::INFINITY };
        let ok = r.advantage.mean >= -3.0 * r.advantage.stderr;
        c.push(Check { name: format!("j_shift_{}", r.lambda), value: zr, condition: ">= -3 paired stderr".into(), pass: ok });
    }
    c.push(Check::below("parabola_vertex_abs", rep.vertex().abs(), lc.vertex_tolerance));
    c.push(Check::below("parabola_fit_residual", rep.parabola_residual, 1e-8));
    if let Some(expect) = lc.expect_j {
        c.push(Check::at_most("j_oracle_error", (j.mean - expect).abs(), lc.expect_tolerance));
    }

    out.files.push((
        "convergence.csv".into(),
        csv_bytes(
            &["iteration", "change"],
            sol.report.changes.iter().enumerate().map(|(i, &ch)| vec![(i + 1).to_string(), num(ch)]),
        ),
    ));
    out.files.push((
        "control.csv".into(),
        csv_bytes(&["t", "mean_u", "std_u"], sol.control_summary().into_iter().map(|(t, m, s)| vec![num(t), num(m), num(s)])),
    ));
    out.files.push(("verification.csv".into(), checks_csv(&out.checks)));
    out.files.push((
        "perturbations.csv".into(),
        csv_bytes(
            &["lambda", "j", "stderr", "advantage", "advantage_stderr"],
            rep.perturbations.iter().map(|r| {
                vec![num(r.lambda), num(r.j.mean), num(r.j.stderr), num(r.advantage.mean), num(r.advantage.stderr)]
            }),
        ),
    ));

    out.scalar("J", j.mean);
    out.scalar("J_stderr", j.stderr);
    out.scalar("iterations", sol.report.iterations() as f64);
    out.scalar("u0_mean", sol.control_summary()[0].1);
    out.scalar("vertex", rep.vertex());
    out.scalar("idempotence", rep.idempotence);
    out.scalar("residual_max", rep.residual_max);
    Ok(out)
}
