//! Bilevel problem instances with counting oracles and, where available,
//! analytic ground truth.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::oracle::{NoisyFunction, StochasticOracle};
use crate::types::ProblemConstants;

mod hyper_rep;
mod quadratic;

pub use hyper_rep::{make_hyper_rep, Activation, HyperRep, HyperRepGenerator, HyperRepSpec};
pub use quadratic::{make_quadratic, QuadraticBilevel, QuadraticBilevelSpec, QuadraticFamily};

/// Deterministic reference quantities of a problem. Calls never touch query
/// counters.
pub trait GroundTruth: Send + Sync {
    /// Lower-level minimizer `y*(x)`.
    fn y_star(&self, x: &DVector<f64>) -> DVector<f64>;
    /// `∇ψ(x)`.
    fn hypergrad(&self, x: &DVector<f64>) -> DVector<f64>;
    /// `ψ(x) = f(x, y*(x))`.
    fn psi(&self, x: &DVector<f64>) -> f64;
    /// Noiseless lower objective; used to check stationarity of `y_star`.
    fn g(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64;
}

#[derive(Clone)]
pub struct BilevelProblem {
    pub name: String,
    pub n: usize,
    pub m: usize,
    pub f: Arc<dyn NoisyFunction>,
    pub g: Arc<dyn NoisyFunction>,
    pub analytic: Option<Arc<dyn GroundTruth>>,
    pub constants: Option<ProblemConstants>,
    /// Multiplier turning oracle calls into reported queries (rows per call
    /// for minibatch oracles, 1 otherwise).
    pub query_scale: u64,
}

impl fmt::Debug for BilevelProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BilevelProblem")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("m", &self.m)
            .field("analytic", &self.analytic.is_some())
            .field("constants", &self.constants)
            .field("query_scale", &self.query_scale)
            .finish()
    }
}

impl BilevelProblem {
    /// Fresh counting oracles `(F, G)`; counts start at zero.
    pub fn oracles(&self) -> (StochasticOracle, StochasticOracle) {
        (StochasticOracle::new(self.f.clone()), StochasticOracle::new(self.g.clone()))
    }

    pub fn true_hypergrad(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        true_hypergrad(self, x)
    }
}

pub fn true_hypergrad(problem: &BilevelProblem, x: &DVector<f64>) -> Result<DVector<f64>> {
    let truth = problem
        .analytic
        .as_ref()
        .ok_or(Error::Unsupported("problem has no analytic record"))?;
    if x.len() != problem.n {
        return Err(Error::param("x", format!("length must be {}", problem.n)));
    }
    Ok(truth.hypergrad(x))
}
