use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use memfield_cli::config::{locate_key, Problem, RunConfig, SEED_ENV};
use memfield_cli::{init_threads, output, run, selftest, CliError};

#[derive(Parser)]
#[command(name = "memfield", version, about = "Memory mean-field SFDE experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// TOML config; defaults are used for every missing section.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: `out/<problem>`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; overrides the config, 0 for one per core.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a linear memory mean-field SFDE and write law statistics.
    Simulate(RunArgs),
    /// Solve by windowed Picard iteration and compare with direct simulation.
    Picard(RunArgs),
    /// Measure-norm oracles and the coupling bound.
    Norms(RunArgs),
    /// Mean-variance portfolio with delay: closed form and its verification.
    Meanvar(RunArgs),
    /// Linear-quadratic control with distributed delay.
    Lq(RunArgs),
    /// Analytic-oracle suite.
    Selftest {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
        /// Swap in a wrong Lambda formula; the suite must then fail.
        #[arg(long, hide = true)]
        tamper_lambda: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Simulate(a) => experiment(Problem::Simulate, a),
        Command::Picard(a) => experiment(Problem::Picard, a),
        Command::Norms(a) => experiment(Problem::Norms, a),
        Command::Meanvar(a) => experiment(Problem::Meanvar, a),
        Command::Lq(a) => experiment(Problem::Lq, a),
        Command::Selftest { out, threads, tamper_lambda } => self_test(out, threads, tamper_lambda),
    };
    ExitCode::from(code as u8)
}

fn experiment(problem: Problem, args: RunArgs) -> i32 {
    let (mut cfg, text, path) = match &args.config {
        Some(p) => match RunConfig::load(p, problem) {
            Ok(c) => (c, std::fs::read_to_string(p).unwrap_or_default(), p.display().to_string()),
            Err(e) => return report(e),
        },
        None => (RunConfig::defaults(problem), String::new(), "<defaults>".to_string()),
    };
    if let Err(error) = cfg.apply_seed_env() {
        eprintln!("{path}: {error} (from {SEED_ENV})");
        return 2;
    }
    if let Some(t) = args.threads {
        cfg.threads = t;
    }
    init_threads(cfg.threads);
    let out = args
        .out
        .or_else(|| cfg.out.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out").join(problem.name()));

    match run(&cfg, &out) {
        Ok(outcome) => {
            for c in &outcome.checks {
                println!("{} {} = {} ({})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value, c.condition);
            }
            println!("artifacts in {}", out.display());
            if outcome.passed() {
                0
            } else {
                1
            }
        }
        Err(CliError::Config { mut error, .. }) => {
            if error.line.is_none() {
                error.line = locate_key(&text, &error.key);
            }
            report(CliError::Config { path, error })
        }
        Err(e) => report(e),
    }
}

fn report(e: CliError) -> i32 {
    eprintln!("{e}");
    e.exit_code()
}

fn self_test(out: Option<PathBuf>, threads: Option<usize>, tamper: bool) -> i32 {
    init_threads(threads.unwrap_or(0));
    let checks = match selftest::run(tamper) {
        Ok(c) => c,
        Err(e) => return report(CliError::Runtime(e)),
    };
    for c in &checks {
        println!("{} {} = {} ({})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value, c.condition);
    }
    if let Some(dir) = out {
        let written = std::fs::create_dir_all(&dir).and_then(|_| std::fs::write(dir.join("selftest.csv"), output::checks_csv(&checks)));
        if let Err(e) = written {
            return report(CliError::Io(e));
        }
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
    if failed.is_empty() {
        println!("selftest: all {} oracles pass", checks.len());
        0
    } else {
        println!("selftest: {} failing: {}", failed.len(), failed.join(", "));
        1
    }
}
