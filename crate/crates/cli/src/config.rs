//! Experiment configuration.
//!
//! A config is a TOML document. Top-level keys describe the run, and the
//! `[problem]`, `[init]` and `[algorithm]` sections describe what is run.
//! Any key can be replaced from the command line with a dotted path such as
//! `algorithm.config.alpha=0.02`. The value is parsed as a TOML value and
//! falls back to a plain string.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use zobilevel::problems::{make_hyper_rep, make_quadratic, HyperRepGenerator, QuadraticBilevelSpec, QuadraticFamily};
use zobilevel::rng::sample_gaussian;
use zobilevel::solver_jh::{jh_schedule, run_jh, DeskCaps, JhConfig, JhTuning};
use zobilevel::solver_penalty::{penalty_schedule, run_penalty, PenaltyConfig, PenaltyTuning};
use zobilevel::{BilevelProblem, Point, RngStream, RunOutcome};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Series name in merged tables and plots; defaults to the file stem.
    #[serde(default)]
    pub label: Option<String>,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub init: InitConfig,
    pub algorithm: AlgorithmConfig,
    #[serde(default = "one")]
    pub trials: usize,
    #[serde(default)]
    pub root_seed: u64,
    /// Cap on scaled queries per trial.
    #[serde(default)]
    pub budget: Option<u64>,
    /// Default logging stride for `‖∇ψ‖`; `algorithm.config.log_stride` wins.
    #[serde(default = "one")]
    pub log_stride: usize,
    /// Output prefix. A run writes `<prefix>.trial-NN.csv`,
    /// `<prefix>.aggregate.csv` and, with `svg = true`, `<prefix>.svg`.
    pub output: PathBuf,
    #[serde(default)]
    pub svg: bool,
    /// Upper bound on concurrently running trials.
    #[serde(default)]
    pub workers: Option<usize>,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProblemConfig {
    /// Explicit matrices.
    Quadratic(QuadraticBilevelSpec),
    /// Seeded random instance.
    QuadraticRandom(QuadraticFamily),
    /// Seeded hyper-representation instance.
    HyperRep(HyperRepGenerator),
}

impl ProblemConfig {
    pub fn build(&self) -> Result<BilevelProblem, CliError> {
        Ok(match self {
            ProblemConfig::Quadratic(spec) => make_quadratic(spec)?.0,
            ProblemConfig::QuadraticRandom(family) => make_quadratic(&family.generate()?)?.0,
            ProblemConfig::HyperRep(generator) => make_hyper_rep(&generator.generate()?.0)?.0,
        })
    }
}

/// Trial starting points: `x₀ = x_scale·N(0, I)`, `y₀ = y_scale·N(0, I)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitConfig {
    #[serde(default = "unit")]
    pub x_scale: f64,
    #[serde(default)]
    pub y_scale: f64,
}

fn unit() -> f64 {
    1.0
}

impl Default for InitConfig {
    fn default() -> Self {
        Self { x_scale: 1.0, y_scale: 0.0 }
    }
}

impl InitConfig {
    /// Starting point of `trial`. Depends only on the root seed and the
    /// trial index, so every algorithm sees the same starts.
    pub fn start(&self, n: usize, m: usize, root: &RngStream, trial: usize) -> Result<Point, CliError> {
        let mut rng = root.derive("init", trial as u64).rng();
        let x = sample_gaussian(&mut rng, n)? * self.x_scale;
        let y = sample_gaussian(&mut rng, m)? * self.y_scale;
        Ok(Point::new(x, y)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlgorithmKind {
    Jh,
    Penalty,
}

impl AlgorithmKind {
    pub fn name(self) -> &'static str {
        match self {
            AlgorithmKind::Jh => "jh",
            AlgorithmKind::Penalty => "penalty",
        }
    }
}

/// Solver settings. With `schedule` the plug-in formulas fill every field
/// and `config` patches the result; without it `config` must be complete.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmConfig {
    pub kind: AlgorithmKind,
    #[serde(default)]
    pub schedule: Option<ScheduleConfig>,
    #[serde(default)]
    pub config: Table,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub eps: f64,
    #[serde(default)]
    pub max_inner: Option<usize>,
    #[serde(default)]
    pub max_batch: Option<usize>,
    #[serde(default)]
    pub max_hessinv: Option<usize>,
    #[serde(default)]
    pub max_outer: Option<usize>,
    /// Penalty only: explicit λ.
    #[serde(default)]
    pub lambda: Option<f64>,
    /// Patch over the default tuning constants of the chosen solver.
    #[serde(default)]
    pub tuning: Table,
}

impl ScheduleConfig {
    fn caps(&self) -> DeskCaps {
        DeskCaps {
            inner_iterations: self.max_inner,
            batch_size: self.max_batch,
            hessinv_iterations: self.max_hessinv,
            outer_iterations: self.max_outer,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SolverConfig {
    Jh(JhConfig),
    Penalty(PenaltyConfig),
}

impl SolverConfig {
    /// `(F, G)` evaluations per outer iteration.
    pub fn queries_per_outer_step(&self) -> (u64, u64) {
        match self {
            SolverConfig::Jh(c) => c.queries_per_outer_step(),
            SolverConfig::Penalty(c) => c.queries_per_outer_step(),
        }
    }

    pub fn outer_iterations(&self) -> usize {
        match self {
            SolverConfig::Jh(c) => c.outer_iterations,
            SolverConfig::Penalty(c) => c.outer_iterations,
        }
    }

    fn set_outer_iterations(&mut self, n: usize) {
        match self {
            SolverConfig::Jh(c) => c.outer_iterations = n,
            SolverConfig::Penalty(c) => c.outer_iterations = n,
        }
    }

    pub fn run(&self, problem: &BilevelProblem, start: &Point, stream: &RngStream) -> zobilevel::Result<RunOutcome> {
        match self {
            SolverConfig::Jh(c) => run_jh(problem, c, start, stream),
            SolverConfig::Penalty(c) => run_penalty(problem, c, start, stream),
        }
    }
}

impl ExperimentConfig {
    /// Reads `path`, applies `overrides` and parses. The label defaults to
    /// the file stem.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::parse(&text, overrides)?;
        if cfg.label.is_none() {
            cfg.label = path.file_stem().map(|s| s.to_string_lossy().into_owned());
        }
        Ok(cfg)
    }

    pub fn parse(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut table: Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Self = Value::Table(table).try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.trials == 0 {
            return Err(CliError::Config("trials must be >= 1".into()));
        }
        if self.budget == Some(0) {
            return Err(CliError::Config("budget must be > 0".into()));
        }
        if self.log_stride == 0 {
            return Err(CliError::Config("log_stride must be >= 1".into()));
        }
        if self.workers == Some(0) {
            return Err(CliError::Config("workers must be >= 1".into()));
        }
        if !(self.init.x_scale.is_finite() && self.init.y_scale.is_finite()) {
            return Err(CliError::Config("init scales must be finite".into()));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.algorithm.kind.name().to_string())
    }

    /// Plugs in the schedule, applies the patch and the run-level knobs.
    ///
    /// With a budget and no explicit `outer_iterations`, the iteration count
    /// is the largest one whose query total fits the budget.
    pub fn resolve(&self, problem: &BilevelProblem) -> Result<SolverConfig, CliError> {
        let alg = &self.algorithm;
        let mut patch = alg.config.clone();
        patch
            .entry("log_stride")
            .or_insert(Value::Integer(self.log_stride as i64));
        let raw_budget = self.budget.map(|b| b / problem.query_scale.max(1));
        if let Some(b) = raw_budget {
            if b == 0 {
                return Err(CliError::Config("budget is below one oracle call".into()));
            }
            patch.entry("max_queries").or_insert(Value::Integer(to_i64(b)?));
        }
        let fill_outer = raw_budget.is_some() && !alg.config.contains_key("outer_iterations");
        if fill_outer {
            patch.insert("outer_iterations".into(), Value::Integer(0));
        }

        let (n, m) = (problem.n, problem.m);
        let mut solver = match (alg.kind, &alg.schedule) {
            (AlgorithmKind::Jh, Some(s)) => {
                let consts = problem.constants.as_ref().ok_or_else(|| {
                    CliError::Config(format!("problem `{}` has no known constants; give algorithm.config in full", problem.name))
                })?;
                let tuning: JhTuning = patched(&JhTuning::default(), &s.tuning)?;
                let base = jh_schedule(n, m, s.eps, consts, &tuning, &s.caps())?;
                SolverConfig::Jh(patched(&base, &patch)?)
            }
            (AlgorithmKind::Penalty, Some(s)) => {
                let tuning: PenaltyTuning = patched(&PenaltyTuning::default(), &s.tuning)?;
                let base = penalty_schedule(n, m, s.eps, problem.constants.as_ref(), &tuning, &s.caps(), s.lambda)?;
                SolverConfig::Penalty(patched(&base, &patch)?)
            }
            (AlgorithmKind::Jh, None) => SolverConfig::Jh(from_table(patch)?),
            (AlgorithmKind::Penalty, None) => SolverConfig::Penalty(from_table(patch)?),
        };
        if fill_outer {
            let (a, b) = solver.queries_per_outer_step();
            let per_step = (a + b).max(1);
            let mut outer = (raw_budget.unwrap_or(0) / per_step).max(1) as usize;
            if let Some(cap) = alg.schedule.as_ref().and_then(|s| s.max_outer) {
                outer = outer.min(cap);
            }
            solver.set_outer_iterations(outer);
        }
        match &solver {
            SolverConfig::Jh(c) => c.validate(n)?,
            SolverConfig::Penalty(c) => c.validate(n, problem.constants.as_ref())?,
        }
        Ok(solver)
    }
}

fn to_i64(v: u64) -> Result<i64, CliError> {
    i64::try_from(v).map_err(|_| CliError::Config(format!("{v} does not fit a TOML integer")))
}

fn from_table<T: DeserializeOwned>(t: Table) -> Result<T, CliError> {
    Value::Table(t).try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))
}

/// Serializes `base`, deep-merges `patch` over it and parses the result.
pub fn patched<T: Serialize + DeserializeOwned>(base: &T, patch: &Table) -> Result<T, CliError> {
    let mut t = Table::try_from(base).map_err(|e| CliError::Config(e.to_string()))?;
    merge(&mut t, patch);
    from_table(t)
}

fn merge(base: &mut Table, patch: &Table) {
    for (k, v) in patch {
        match (base.get_mut(k), v) {
            (Some(Value::Table(b)), Value::Table(p)) => merge(b, p),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

/// Applies one `dotted.key=value` override.
pub fn apply_override(table: &mut Table, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{spec}` is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("override `{spec}` has an empty key segment")));
    }
    let value = parse_value(raw.trim());
    let (last, parents) = path.split_last().expect("split yields at least one segment");
    let mut cur = table;
    for p in parents {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => return Err(CliError::Config(format!("override `{spec}`: `{p}` is not a section"))),
        };
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const PEN: &str = r#"
        trials = 2
        root_seed = 7
        output = "out/pen"

        [problem]
        kind = "quadratic-random"
        n = 3
        m = 2
        seed = 1

        [algorithm]
        kind = "penalty"

        [algorithm.schedule]
        eps = 0.1
        max_inner = 20
        max_batch = 10
    "#;

    #[test]
    fn override_parses_typed_values() {
        let mut t = Table::new();
        apply_override(&mut t, "a.b=3").unwrap();
        apply_override(&mut t, "a.c=0.5").unwrap();
        apply_override(&mut t, "a.d=hello").unwrap();
        apply_override(&mut t, "e=[1, 2]").unwrap();
        assert_eq!(t["a"]["b"].as_integer(), Some(3));
        assert_eq!(t["a"]["c"].as_float(), Some(0.5));
        assert_eq!(t["a"]["d"].as_str(), Some("hello"));
        assert_eq!(t["e"].as_array().map(Vec::len), Some(2));
        assert!(apply_override(&mut t, "novalue").is_err());
        assert!(apply_override(&mut t, "a.b.x=1").is_err());
    }

    #[test]
    fn schedule_then_patch_then_budget() {
        let cfg = ExperimentConfig::parse(PEN, &["algorithm.config.alpha=0.05".into(), "budget=10000".into()]).unwrap();
        let problem = cfg.problem.build().unwrap();
        let SolverConfig::Penalty(p) = cfg.resolve(&problem).unwrap() else {
            panic!("expected penalty")
        };
        assert_eq!(p.alpha, zobilevel::StepSchedule::Constant(0.05));
        assert_eq!((p.inner_iterations, p.batch_size), (20, 10));
        // 6t + 6s = 180 queries per step.
        assert_eq!(p.outer_iterations, 10_000 / 180);
        assert_eq!(p.control.max_queries, Some(10_000));
    }

    #[test]
    fn jh_without_constants_needs_explicit_config() {
        let text = r#"
            output = "o"
            [problem]
            kind = "hyper-rep"
            d_in = 2
            d_out = 3
            n1 = 10
            n2 = 10
            gamma = 1e-3
            minibatch_rows = 2
            seed = 0
            [algorithm]
            kind = "jh"
            [algorithm.schedule]
            eps = 0.1
        "#;
        let cfg = ExperimentConfig::parse(text, &[]).unwrap();
        let problem = cfg.problem.build().unwrap();
        assert!(matches!(cfg.resolve(&problem), Err(CliError::Config(_))));
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for o in ["trials=0", "budget=0", "log_stride=0", "unknown_key=1"] {
            let e = ExperimentConfig::parse(PEN, &[o.into()]).unwrap_err();
            assert_eq!(e.exit_code(), 2, "{o}");
        }
        let cfg = ExperimentConfig::parse(PEN, &["algorithm.schedule.lambda=0.5".into()]).unwrap();
        let problem = cfg.problem.build().unwrap();
        assert_eq!(cfg.resolve(&problem).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn starts_depend_only_on_seed_and_trial() {
        let root = RngStream::new(3);
        let init = InitConfig { x_scale: 2.0, y_scale: 1.0 };
        let a = init.start(4, 2, &root, 1).unwrap();
        let b = init.start(4, 2, &root, 1).unwrap();
        let c = init.start(4, 2, &root, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.x, c.x);
    }
}
