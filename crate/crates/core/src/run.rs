//! Bookkeeping shared by the solvers: trace records, divergence guards and
//! run limits.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hessinv::DIVERGENCE_FACTOR;
use crate::oracle::{QueryCounter, StochasticOracle};
use crate::problems::BilevelProblem;
use crate::trace::{sample_output_index, ConvergenceTrace, RunOutcome, TraceRecord};
use crate::rng::RngStream;
use crate::types::StepSchedule;

/// Logging and stopping options common to both solvers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunControl {
    /// Log `‖∇ψ(x_k)‖` every `log_stride` outer iterations (and at the last).
    #[serde(default = "default_stride")]
    pub log_stride: usize,
    /// Stop after the first outer iteration whose cumulative raw query count
    /// reaches this value.
    #[serde(default)]
    pub max_queries: Option<u64>,
    /// Stop at the first logged iterate with `‖∇ψ(x_k)‖` at or below this
    /// value. Needs ground truth; ignored otherwise.
    #[serde(default)]
    pub stop_below: Option<f64>,
}

fn default_stride() -> usize {
    1
}

impl Default for RunControl {
    fn default() -> Self {
        Self {
            log_stride: 1,
            max_queries: None,
            stop_below: None,
        }
    }
}

impl RunControl {
    pub fn validate(&self) -> Result<()> {
        if self.log_stride == 0 {
            return Err(Error::param("log_stride", "must be >= 1"));
        }
        if self.max_queries == Some(0) {
            return Err(Error::param("max_queries", "must be > 0"));
        }
        if self.stop_below.is_some_and(|v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::param("stop_below", "must be finite and >= 0"));
        }
        Ok(())
    }
}

pub(crate) fn guard(context: &'static str, iteration: u64, v: &DVector<f64>, limit: f64) -> Result<()> {
    let norm = v.norm();
    if !norm.is_finite() {
        return Err(Error::NonFinite { context, index: iteration });
    }
    if norm > limit {
        return Err(Error::Divergence { context, iteration, norm });
    }
    Ok(())
}

pub(crate) fn limit_for(start: &DVector<f64>) -> f64 {
    DIVERGENCE_FACTOR * (1.0 + start.norm())
}

/// Accumulates the trace of one run.
pub(crate) struct Recorder<'a> {
    problem: &'a BilevelProblem,
    control: &'a RunControl,
    outer: usize,
    pub trace: ConvergenceTrace,
}

impl<'a> Recorder<'a> {
    pub fn new(problem: &'a BilevelProblem, control: &'a RunControl, outer: usize) -> Self {
        Self {
            problem,
            control,
            outer,
            trace: ConvergenceTrace::default(),
        }
    }

    /// Appends a record; returns true when the logged norm reached `stop_below`.
    pub fn record(&mut self, k: usize, x: &DVector<f64>, f: &StochasticOracle, g: &StochasticOracle, surrogate: Option<f64>, force: bool) -> bool {
        let q = QueryCounter::of(f, g);
        let log = force || k % self.control.log_stride == 0 || k == self.outer;
        let hypergrad_norm = if log {
            self.problem.analytic.as_ref().map(|t| t.hypergrad(x).norm())
        } else {
            None
        };
        self.trace.records.push(TraceRecord {
            k,
            f_evals: q.f_evals,
            g_evals: q.g_evals,
            hypergrad_norm,
            surrogate_norm: surrogate,
        });
        matches!((hypergrad_norm, self.control.stop_below), (Some(h), Some(t)) if h <= t)
    }

    pub fn budget_spent(&self, f: &StochasticOracle, g: &StochasticOracle) -> bool {
        self.control
            .max_queries
            .is_some_and(|b| QueryCounter::of(f, g).total() >= b)
    }

    /// Draws the output index over the completed steps.
    pub fn finish(mut self, alpha: &StepSchedule, stream: &RngStream, x: DVector<f64>, error: Option<Error>) -> RunOutcome {
        let steps = self.trace.records.len().saturating_sub(1);
        let alphas: Vec<f64> = (0..steps).map(|k| alpha.at(k)).collect();
        self.trace.chosen_index = sample_output_index(&alphas, &stream.derive("output_index", 0));
        RunOutcome {
            trace: self.trace,
            x_final: x,
            error,
        }
    }
}
