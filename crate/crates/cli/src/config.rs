//! Run configuration: one TOML file, flat sections per problem. Missing sections take
//! the desk-scale defaults of the selected problem, and the resolved config is echoed
//! verbatim into the output directory so a run can be repeated exactly.

use std::fmt;
use std::path::Path;

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

use crate::CliError;

pub const SEED_ENV: &str = "MEMFIELD_SEED";
const DEFAULT_SEED: u64 = 20_240_101;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Problem {
    Simulate,
    Picard,
    Norms,
    Meanvar,
    Lq,
}

impl Problem {
    pub fn name(self) -> &'static str {
        match self {
            Problem::Simulate => "simulate",
            Problem::Picard => "picard",
            Problem::Norms => "norms",
            Problem::Meanvar => "meanvar",
            Problem::Lq => "lq",
        }
    }
}

/// 64-bit seed. TOML integers are signed, so values above `i64::MAX` are written as strings.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Seed(pub u64);

impl Default for Seed {
    fn default() -> Self {
        Seed(DEFAULT_SEED)
    }
}

impl Serialize for Seed {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match i64::try_from(self.0) {
            Ok(v) => s.serialize_i64(v),
            Err(_) => s.serialize_str(&self.0.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for Seed {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl de::Visitor<'_> for V {
            type Value = Seed;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an unsigned 64-bit integer or its decimal string")
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Seed, E> {
                u64::try_from(v).map(Seed).map_err(|_| E::custom("seed must be non-negative"))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Seed, E> {
                Ok(Seed(v))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Seed, E> {
                v.trim().parse().map(Seed).map_err(|_| E::custom("seed string is not a u64"))
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub horizon: f64,
    pub delta: f64,
    pub dt: f64,
    pub particles: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum MarkConfig {
    Dirac { value: f64 },
    Normal { mean: f64, sd: f64 },
    Uniform { lo: f64, hi: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JumpConfig {
    pub intensity: f64,
    pub marks: MarkConfig,
}

/// `xi(t) = value + slope t` on `[-delta, 0]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub value: f64,
    #[serde(default)]
    pub slope: f64,
}

/// `b = c0 + cx x + clag x(t - delta) + cmean E[X(t)] + cu u`, `sigma = s0 + sx x`, jumps `jump_scale * zeta`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearConfig {
    pub c0: f64,
    pub cx: f64,
    pub clag: f64,
    pub cmean: f64,
    pub cu: f64,
    pub s0: f64,
    pub sx: f64,
    pub jump_scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub coefficients: LinearConfig,
    pub control: f64,
    pub quantiles: Vec<f64>,
    /// Number of sample paths written to `paths.csv`.
    pub paths: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            coefficients: LinearConfig { clag: 0.5, s0: 0.3, ..Default::default() },
            control: 0.0,
            quantiles: vec![0.05, 0.5, 0.95],
            paths: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PicardConfig {
    pub coefficients: LinearConfig,
    pub control: f64,
    /// Window length `t0`.
    pub window: f64,
    /// On the squared iterate distance.
    pub tol: f64,
    pub max_iter: usize,
    /// Also solve with windows of `t0 / 2` and require a smaller contraction ratio.
    pub compare_half_window: bool,
    /// Bound on `sup_t E[(X_picard - X_direct)^2]`.
    pub consistency_tol: f64,
}

impl Default for PicardConfig {
    fn default() -> Self {
        Self {
            coefficients: LinearConfig { cx: 1.0, clag: 0.2, cmean: 0.1, s0: 0.3, sx: 0.1, ..Default::default() },
            control: 0.0,
            window: 0.1,
            tol: 1e-24,
            max_iter: 60,
            compare_half_window: true,
            consistency_tol: 1e-10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormsConfig {
    pub nodes: usize,
    /// Pairs `(a, b)` for the Dirac distance oracle.
    pub dirac_pairs: Vec<[f64; 2]>,
    pub tolerance: f64,
    pub lemma_trials: usize,
    pub lemma_samples: usize,
    pub lemma_slack: f64,
}

impl Default for NormsConfig {
    fn default() -> Self {
        Self {
            nodes: 64,
            dirac_pairs: vec![[0.0, 2.0], [1.0, -0.5], [0.0, 0.001], [-3.0, 3.0], [0.7, 0.7]],
            tolerance: 1e-6,
            lemma_trials: 100,
            lemma_samples: 200,
            lemma_slack: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeanVarConfig {
    pub b0: f64,
    pub sigma0: f64,
    pub a: f64,
    /// Step of the constant perturbation in the stationarity check.
    pub eps: f64,
    pub lsmc_tolerance: f64,
}

impl Default for MeanVarConfig {
    fn default() -> Self {
        Self { b0: 0.1, sigma0: 0.2, a: 1.0, eps: 1e-3, lsmc_tolerance: 0.02 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LqConfig {
    /// Kernel `a(s) = kernel + kernel_slope s` on `[0, delta]`.
    pub kernel: f64,
    pub kernel_slope: f64,
    pub alpha0: f64,
    pub beta0: f64,
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Perturbation size of the central differences.
    pub eps: f64,
    pub vertex_tolerance: f64,
    /// Optional oracle for the optimal value.
    pub expect_j: Option<f64>,
    pub expect_tolerance: f64,
}

impl Default for LqConfig {
    fn default() -> Self {
        Self {
            kernel: 1.0,
            kernel_slope: 0.0,
            alpha0: 0.3,
            beta0: 0.0,
            damping: 0.5,
            tol: 1e-4,
            max_iter: 50,
            eps: 0.1,
            vertex_tolerance: 0.05,
            expect_j: None,
            expect_tolerance: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: Problem,
    #[serde(default)]
    pub seed: Seed,
    /// Worker threads, 0 for one per core.
    #[serde(default)]
    pub threads: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jumps: Option<JumpConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub picard: Option<PicardConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norms: Option<NormsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meanvar: Option<MeanVarConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lq: Option<LqConfig>,
}

/// Same fields with an optional problem, which the subcommand supplies.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    problem: Option<Problem>,
    #[serde(default)]
    seed: Seed,
    #[serde(default)]
    threads: usize,
    out: Option<String>,
    grid: Option<GridConfig>,
    jumps: Option<JumpConfig>,
    initial: Option<InitialConfig>,
    simulate: Option<SimulateConfig>,
    picard: Option<PicardConfig>,
    norms: Option<NormsConfig>,
    meanvar: Option<MeanVarConfig>,
    lq: Option<LqConfig>,
}

/// Invalid configuration, anchored to the offending key.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfigError {
    pub key: String,
    pub message: String,
    pub line: Option<usize>,
}

impl ConfigError {
    pub fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self { key: key.into(), message: message.into(), line: None }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.key.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "`{}`: {}", self.key, self.message)
        }
    }
}

pub fn default_grid(problem: Problem) -> GridConfig {
    let (delta, particles) = match problem {
        Problem::Simulate => (0.1, 10_000),
        Problem::Picard => (0.1, 1_000),
        Problem::Norms => (0.1, 1),
        Problem::Meanvar => (0.1, 100_000),
        Problem::Lq => (0.2, 50_000),
    };
    GridConfig { horizon: 1.0, delta, dt: 0.01, particles }
}

fn default_initial(problem: Problem) -> InitialConfig {
    match problem {
        Problem::Meanvar => InitialConfig { value: 2.0, slope: 0.0 },
        _ => InitialConfig { value: 1.0, slope: 0.0 },
    }
}

impl RunConfig {
    /// Defaults for `problem` with every section filled in.
    pub fn defaults(problem: Problem) -> Self {
        Self::resolve(
            RawConfig {
                problem: Some(problem),
                seed: Seed::default(),
                threads: 0,
                out: None,
                grid: None,
                jumps: None,
                initial: None,
                simulate: None,
                picard: None,
                norms: None,
                meanvar: None,
                lq: None,
            },
            problem,
        )
    }

    fn resolve(raw: RawConfig, problem: Problem) -> Self {
        let mut cfg = RunConfig {
            problem,
            seed: raw.seed,
            threads: raw.threads,
            out: raw.out,
            grid: Some(raw.grid.unwrap_or_else(|| default_grid(problem))),
            jumps: raw.jumps,
            initial: Some(raw.initial.unwrap_or_else(|| default_initial(problem))),
            simulate: None,
            picard: None,
            norms: None,
            meanvar: None,
            lq: None,
        };
        match problem {
            Problem::Simulate => cfg.simulate = Some(raw.simulate.unwrap_or_default()),
            Problem::Picard => cfg.picard = Some(raw.picard.unwrap_or_default()),
            Problem::Norms => {
                cfg.norms = Some(raw.norms.unwrap_or_default());
                cfg.grid = None;
                cfg.initial = None;
            }
            Problem::Meanvar => cfg.meanvar = Some(raw.meanvar.unwrap_or_default()),
            Problem::Lq => cfg.lq = Some(raw.lq.unwrap_or_default()),
        }
        cfg
    }

    /// Parse `text`; `problem` is the subcommand and must agree with the file's `problem` key.
    pub fn parse(text: &str, problem: Problem) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| line_of_offset(text, s.start));
            ConfigError { key: String::new(), message: e.message().to_string(), line }
        })?;
        if let Some(p) = raw.problem {
            if p != problem {
                let mut err = ConfigError::new(
                    "problem",
                    format!("config is for `{}` but the `{}` subcommand was run", p.name(), problem.name()),
                );
                err.line = locate_key(text, "problem");
                return Err(err);
            }
        }
        let cfg = Self::resolve(raw, problem);
        cfg.validate().map_err(|mut e| {
            e.line = locate_key(text, &e.key);
            e
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path, problem: Problem) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config {
            path: path.display().to_string(),
            error: ConfigError::new("", format!("cannot read config: {e}")),
        })?;
        Self::parse(&text, problem).map_err(|error| CliError::Config { path: path.display().to_string(), error })
    }

    /// Seed from the environment override, if set.
    pub fn apply_seed_env(&mut self) -> Result<(), ConfigError> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            let seed = v.trim().parse().map_err(|_| ConfigError::new("seed", format!("{SEED_ENV}={v} is not a u64")))?;
            self.seed = Seed(seed);
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn grid(&self) -> &GridConfig {
        self.grid.as_ref().expect("resolved config has a grid")
    }

    pub fn initial(&self) -> InitialConfig {
        self.initial.expect("resolved config has an initial segment")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let finite = |key: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(ConfigError::new(key, "must be finite"))
            }
        };
        if let Some(g) = &self.grid {
            for (k, v) in [("grid.horizon", g.horizon), ("grid.delta", g.delta), ("grid.dt", g.dt)] {
                finite(k, v)?;
                if v <= 0.0 {
                    return Err(ConfigError::new(k, format!("must be positive, got {v}")));
                }
            }
            for (k, v) in [("grid.delta", g.delta), ("grid.horizon", g.horizon)] {
                if !is_multiple(v, g.dt) {
                    return Err(ConfigError::new(k, format!("{v} is not an integer multiple of dt = {}", g.dt)));
                }
            }
            if g.particles == 0 {
                return Err(ConfigError::new("grid.particles", "need at least one particle"));
            }
        }
        if let Some(j) = &self.jumps {
            finite("jumps.intensity", j.intensity)?;
            if j.intensity < 0.0 {
                return Err(ConfigError::new("jumps.intensity", "must be non-negative"));
            }
            let ok = match j.marks {
                MarkConfig::Dirac { value } => value.is_finite(),
                MarkConfig::Normal { mean, sd } => mean.is_finite() && sd.is_finite() && sd >= 0.0,
                MarkConfig::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo <= hi,
            };
            if !ok {
                return Err(ConfigError::new("jumps.marks", "invalid mark law parameters"));
            }
        }
        if let Some(i) = &self.initial {
            finite("initial.value", i.value)?;
            finite("initial.slope", i.slope)?;
        }
        if let Some(s) = &self.simulate {
            if s.quantiles.iter().any(|q| !(0.0..=1.0).contains(q)) {
                return Err(ConfigError::new("simulate.quantiles", "quantile levels must lie in [0, 1]"));
            }
        }
        if let Some(p) = &self.picard {
            let g = self.grid();
            if !is_multiple(p.window, g.dt) || p.window <= 0.0 {
                return Err(ConfigError::new("picard.window", format!("{} is not a positive multiple of dt", p.window)));
            }
            if !is_multiple(g.horizon, p.window) {
                return Err(ConfigError::new("picard.window", "must divide the horizon"));
            }
            if !(p.tol > 0.0) || p.max_iter == 0 {
                return Err(ConfigError::new("picard.tol", "need a positive tolerance and max_iter >= 1"));
            }
        }
        if let Some(n) = &self.norms {
            if n.nodes < 2 || n.nodes > 256 {
                return Err(ConfigError::new("norms.nodes", "use between 2 and 256 nodes"));
            }
            if n.lemma_samples == 0 {
                return Err(ConfigError::new("norms.lemma_samples", "need at least one sample"));
            }
        }
        if let Some(m) = &self.meanvar {
            for (k, v) in [("meanvar.b0", m.b0), ("meanvar.sigma0", m.sigma0), ("meanvar.a", m.a), ("meanvar.eps", m.eps)] {
                finite(k, v)?;
            }
            if m.b0 == 0.0 {
                return Err(ConfigError::new("meanvar.b0", "must be non-zero"));
            }
            if self.initial().value <= m.a || self.initial().value - self.initial().slope * self.grid().delta <= m.a {
                return Err(ConfigError::new("initial.value", "initial wealth must exceed the target a on [-delta, 0]"));
            }
        }
        if let Some(l) = &self.lq {
            for (k, v) in [("lq.kernel", l.kernel), ("lq.kernel_slope", l.kernel_slope), ("lq.alpha0", l.alpha0), ("lq.beta0", l.beta0)] {
                finite(k, v)?;
            }
            if !(l.damping > 0.0 && l.damping <= 1.0) {
                return Err(ConfigError::new("lq.damping", "must lie in (0, 1]"));
            }
            if !(l.tol > 0.0) || l.max_iter == 0 {
                return Err(ConfigError::new("lq.tol", "need a positive tolerance and max_iter >= 1"));
            }
            if !(l.eps > 0.0) {
                return Err(ConfigError::new("lq.eps", "must be positive"));
            }
        }
        Ok(())
    }
}

fn is_multiple(v: f64, dt: f64) -> bool {
    let r = v / dt;
    (r - r.round()).abs() <= 1e-9 * r.abs().max(1.0)
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// 1-based line of `section.key` (or a top-level `key`) in a TOML text.
pub fn locate_key(text: &str, key: &str) -> Option<usize> {
    let (section, leaf) = match key.rsplit_once('.') {
        Some((s, l)) => (Some(s), l),
        None => (None, key),
    };
    let mut current: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(h) = line.strip_prefix('[') {
            current = Some(h.trim_end_matches(']').trim().to_string());
            continue;
        }
        let Some((k, _)) = line.split_once('=') else { continue };
        let k = k.trim();
        let hit = match (section, current.as_deref()) {
            (None, None) => k == leaf,
            (Some(s), Some(c)) => c == s && k == leaf,
            // dotted key at top level, `grid.dt = ...`
            (Some(s), None) => k == format!("{s}.{leaf}"),
            _ => false,
        };
        if hit {
            return Some(i + 1);
        }
    }
    section.and_then(|s| text.lines().position(|l| l.trim() == format!("[{s}]")).map(|i| i + 1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        for p in [Problem::Simulate, Problem::Picard, Problem::Norms, Problem::Meanvar, Problem::Lq] {
            let cfg = RunConfig::defaults(p);
            cfg.validate().unwrap();
            assert_eq!(RunConfig::parse(&cfg.to_toml(), p).unwrap(), cfg);
        }
    }

    #[test]
    fn delay_off_the_mesh_names_the_field_and_line() {
        let text = "problem = \"meanvar\"\n\n[grid]\nhorizon = 1.0\ndelta = 0.105\ndt = 0.01\nparticles = 10\n";
        let err = RunConfig::parse(text, Problem::Meanvar).unwrap_err();
        assert_eq!(err.key, "grid.delta");
        assert_eq!(err.line, Some(5));
    }

    #[test]
    fn syntax_errors_carry_a_line() {
        let err = RunConfig::parse("problem = \"lq\"\n[lq]\nalpha0 = = 1\n", Problem::Lq).unwrap_err();
        assert_eq!(err.line, Some(3));
        let err = RunConfig::parse("[lq]\nalpha = 1.0\n", Problem::Lq).unwrap_err();
        assert_eq!(err.line, Some(2));
    }

    #[test]
    fn subcommand_must_match_problem() {
        let err = RunConfig::parse("problem = \"lq\"\n", Problem::Meanvar).unwrap_err();
        assert_eq!((err.key.as_str(), err.line), ("problem", Some(1)));
    }

    #[test]
    fn large_seeds_survive_the_echo() {
        let mut cfg = RunConfig::defaults(Problem::Norms);
        cfg.seed = Seed(u64::MAX);
        assert_eq!(RunConfig::parse(&cfg.to_toml(), Problem::Norms).unwrap().seed, Seed(u64::MAX));
    }
}
