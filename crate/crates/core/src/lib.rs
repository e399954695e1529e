//! Zeroth-order stochastic bilevel optimization.

pub mod error;
pub mod hessinv;
pub mod oracle;
pub mod problems;
pub mod projection;
pub mod rng;
pub mod run;
pub mod smoothing;
pub mod solver_jh;
pub mod solver_penalty;
pub mod trace;
pub mod types;
pub mod validation;

pub use error::{Error, Result};
pub use oracle::{NoisyFunction, QueryCounter, StochasticOracle};
pub use problems::{BilevelProblem, GroundTruth};
pub use projection::ProjectionSpec;
pub use rng::{RngStream, StreamRng};
pub use trace::{ConvergenceTrace, RunOutcome, TraceRecord};
pub use run::RunControl;
pub use types::{Point, ProblemConstants, SmoothingParams, StepSchedule};
