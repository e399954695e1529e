use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::rng::RngStream;

/// One outer iterate `x_k` and the cost spent to reach it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub k: usize,
    pub f_evals: u64,
    pub g_evals: u64,
    /// ‖∇ψ(x_k)‖ when the problem exposes ground truth and `k` is on the
    /// logging grid.
    pub hypergrad_norm: Option<f64>,
    /// Norm of the estimated direction that produced `x_k`; absent at k = 0.
    pub surrogate_norm: Option<f64>,
}

impl TraceRecord {
    pub fn total_evals(&self) -> u64 {
        self.f_evals + self.g_evals
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    pub records: Vec<TraceRecord>,
    /// Randomized output index, drawn after the run.
    pub chosen_index: Option<usize>,
}

impl ConvergenceTrace {
    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    pub fn initial_hypergrad_norm(&self) -> Option<f64> {
        self.records.first().and_then(|r| r.hypergrad_norm)
    }

    pub fn final_hypergrad_norm(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| r.hypergrad_norm)
    }

    /// First total query count at which the logged hypergradient norm is at
    /// most `threshold`.
    pub fn queries_to_norm(&self, threshold: f64) -> Option<u64> {
        self.records
            .iter()
            .find(|r| r.hypergrad_norm.is_some_and(|v| v <= threshold))
            .map(TraceRecord::total_evals)
    }
}

/// Draws the output index `R ∈ {0, …, N−1}` with `P(R = k) ∝ α_k`.
pub fn sample_output_index(alphas: &[f64], stream: &RngStream) -> Option<usize> {
    let total: f64 = alphas.iter().sum();
    if alphas.is_empty() || !(total > 0.0) {
        return None;
    }
    let mut target = stream.rng().random::<f64>() * total;
    for (k, a) in alphas.iter().enumerate() {
        if target < *a {
            return Some(k);
        }
        target -= a;
    }
    Some(alphas.len() - 1)
}

/// Outcome of a solver run. On failure the trace holds every record written
/// before the error.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub trace: ConvergenceTrace,
    pub x_final: nalgebra::DVector<f64>,
    pub error: Option<Error>,
}

impl RunOutcome {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}
