//! Multi-trial runs and their CSV artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use zobilevel::{BilevelProblem, RngStream, RunOutcome};

use crate::aggregate::{aggregate, AggregatePoint};
use crate::config::{ExperimentConfig, SolverConfig};
use crate::error::CliError;
use crate::svg::{render, Axes, Series};

/// One row of a trial CSV. Norm cells are empty off the logging grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub trial: usize,
    pub k: usize,
    pub f_evals: u64,
    pub g_evals: u64,
    pub scaled_queries: u64,
    pub hypergrad_norm: Option<f64>,
    pub surrogate_norm: Option<f64>,
}

/// One row of a merged comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergedRow {
    pub algorithm: String,
    pub label: String,
    pub scaled_queries: u64,
    pub mean_norm: f64,
    pub min_norm: f64,
    pub max_norm: f64,
    pub n_trials: usize,
}

#[derive(Debug)]
pub struct TrialResult {
    pub trial: usize,
    pub outcome: RunOutcome,
    pub rows: Vec<TrialRow>,
}

impl TrialResult {
    /// `(scaled_queries, ‖∇ψ‖)` at the logged iterates.
    pub fn curve(&self) -> Vec<(u64, f64)> {
        self.rows
            .iter()
            .filter_map(|r| r.hypergrad_norm.map(|h| (r.scaled_queries, h)))
            .collect()
    }

    pub fn failed(&self) -> bool {
        self.outcome.error.is_some()
    }
}

#[derive(Debug)]
pub struct ExperimentResult {
    pub label: String,
    pub algorithm: &'static str,
    pub solver: SolverConfig,
    pub query_scale: u64,
    pub trials: Vec<TrialResult>,
    pub aggregate: Vec<AggregatePoint>,
}

impl ExperimentResult {
    pub fn merged_rows(&self) -> Vec<MergedRow> {
        self.aggregate
            .iter()
            .map(|p| MergedRow {
                algorithm: self.algorithm.to_string(),
                label: self.label.clone(),
                scaled_queries: p.scaled_queries,
                mean_norm: p.mean_norm,
                min_norm: p.min_norm,
                max_norm: p.max_norm,
                n_trials: p.n_trials,
            })
            .collect()
    }
}

pub fn trial_rows(trial: usize, outcome: &RunOutcome, query_scale: u64) -> Vec<TrialRow> {
    outcome
        .trace
        .records
        .iter()
        .map(|r| TrialRow {
            trial,
            k: r.k,
            f_evals: r.f_evals,
            g_evals: r.g_evals,
            scaled_queries: r.total_evals() * query_scale,
            hypergrad_norm: r.hypergrad_norm,
            surrogate_norm: r.surrogate_norm,
        })
        .collect()
}

/// Runs every trial without touching the file system. Trial `i` starts from
/// `root.derive("init", i)` and drives the solver with `root.derive("solver", i)`.
pub fn run_trials(cfg: &ExperimentConfig) -> Result<ExperimentResult, CliError> {
    let problem = cfg.problem.build()?;
    let solver = cfg.resolve(&problem)?;
    let root = RngStream::new(cfg.root_seed);
    let run_one = |i: usize| run_trial(cfg, &problem, &solver, &root, i);
    let results: Vec<Result<TrialResult, CliError>> = match cfg.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| CliError::Failed(e.to_string()))?
            .install(|| (0..cfg.trials).into_par_iter().map(run_one).collect()),
        None => (0..cfg.trials).into_par_iter().map(run_one).collect(),
    };
    let trials = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let curves: Vec<Vec<(u64, f64)>> = trials.iter().map(TrialResult::curve).collect();
    Ok(ExperimentResult {
        label: cfg.label(),
        algorithm: cfg.algorithm.kind.name(),
        solver,
        query_scale: problem.query_scale,
        aggregate: aggregate(&curves),
        trials,
    })
}

fn run_trial(cfg: &ExperimentConfig, problem: &BilevelProblem, solver: &SolverConfig, root: &RngStream, i: usize) -> Result<TrialResult, CliError> {
    let start = cfg.init.start(problem.n, problem.m, root, i)?;
    let outcome = solver.run(problem, &start, &root.derive("solver", i as u64))?;
    let rows = trial_rows(i, &outcome, problem.query_scale);
    Ok(TrialResult { trial: i, outcome, rows })
}

/// Paths written by [`run_experiment`].
#[derive(Clone, Debug, PartialEq)]
pub struct Artifacts {
    pub trials: Vec<PathBuf>,
    pub aggregate: PathBuf,
    pub svg: Option<PathBuf>,
}

pub fn trial_path(prefix: &Path, trial: usize) -> PathBuf {
    with_suffix(prefix, &format!(".trial-{trial:02}.csv"))
}

pub fn aggregate_path(prefix: &Path) -> PathBuf {
    with_suffix(prefix, ".aggregate.csv")
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Runs the trials and writes the trial, aggregate and optional SVG files.
/// Numeric failures stay per trial; the call fails with
/// [`CliError::AllDiverged`] only when every trial failed, after writing.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(ExperimentResult, Artifacts), CliError> {
    let result = run_trials(cfg)?;
    let artifacts = write_artifacts(cfg, &result)?;
    if result.trials.iter().all(TrialResult::failed) {
        return Err(CliError::AllDiverged(result.trials.len()));
    }
    Ok((result, artifacts))
}

pub fn write_artifacts(cfg: &ExperimentConfig, result: &ExperimentResult) -> Result<Artifacts, CliError> {
    ensure_parent(&cfg.output)?;
    let mut trials = Vec::with_capacity(result.trials.len());
    for t in &result.trials {
        let path = trial_path(&cfg.output, t.trial);
        write_csv(&path, &t.rows)?;
        trials.push(path);
    }
    let aggregate = aggregate_path(&cfg.output);
    write_csv(&aggregate, &result.aggregate)?;
    let svg = if cfg.svg {
        let path = with_suffix(&cfg.output, ".svg");
        let series = [Series {
            label: result.label.clone(),
            points: result.aggregate.clone(),
        }];
        write_text(&path, &render(&series, &Axes::default())?)?;
        Some(path)
    } else {
        None
    };
    Ok(Artifacts { trials, aggregate, svg })
}

pub fn ensure_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e)),
        _ => Ok(()),
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    ensure_parent(path)?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| CliError::csv(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| CliError::csv(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    ensure_parent(path)?;
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Runs several configs over the same problem, init and seed, writing each
/// one's artifacts. Results come back in input order.
pub fn compare(cfgs: &[ExperimentConfig]) -> Result<Vec<ExperimentResult>, CliError> {
    let first = cfgs.first().ok_or_else(|| CliError::Config("compare needs at least one config".into()))?;
    for c in &cfgs[1..] {
        if c.problem != first.problem || c.root_seed != first.root_seed || c.init != first.init {
            return Err(CliError::Config(format!(
                "`{}` does not share problem, init and root_seed with `{}`",
                c.label(),
                first.label()
            )));
        }
    }
    let mut labels: Vec<String> = cfgs.iter().map(ExperimentConfig::label).collect();
    labels.sort();
    if labels.windows(2).any(|w| w[0] == w[1]) {
        return Err(CliError::Config("compared configs need distinct labels".into()));
    }
    let mut out = Vec::with_capacity(cfgs.len());
    for c in cfgs {
        let r = run_trials(c)?;
        write_artifacts(c, &r)?;
        if r.trials.iter().all(TrialResult::failed) {
            eprintln!("warning: every trial of `{}` failed numerically", c.label());
        }
        out.push(r);
    }
    Ok(out)
}

pub fn read_aggregate(path: &Path) -> Result<Vec<AggregatePoint>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::csv(path, e))?;
    r.deserialize().collect::<Result<Vec<_>, _>>().map_err(|e| CliError::csv(path, e))
}

pub fn read_merged(path: &Path) -> Result<Vec<MergedRow>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::csv(path, e))?;
    r.deserialize().collect::<Result<Vec<_>, _>>().map_err(|e| CliError::csv(path, e))
}
