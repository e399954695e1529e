//! Feasible sets for the outer variable and their proximal steps.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProjectionSpec {
    #[default]
    AllSpace,
    Box {
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
    Ball {
        center: Vec<f64>,
        radius: f64,
    },
}

impl ProjectionSpec {
    pub fn validate(&self, n: usize) -> Result<()> {
        match self {
            ProjectionSpec::AllSpace => Ok(()),
            ProjectionSpec::Box { lower, upper } => {
                if lower.len() != n || upper.len() != n {
                    return Err(Error::param("projection", format!("box bounds must have length {n}")));
                }
                if lower.iter().zip(upper).any(|(l, u)| l.is_nan() || u.is_nan() || l > u) {
                    return Err(Error::param("projection", "box requires lower <= upper"));
                }
                Ok(())
            }
            ProjectionSpec::Ball { center, radius } => {
                if center.len() != n {
                    return Err(Error::param("projection", format!("ball center must have length {n}")));
                }
                if !(radius.is_finite() && *radius > 0.0) {
                    return Err(Error::param("projection", "ball radius must be > 0"));
                }
                Ok(())
            }
        }
    }

    /// Euclidean projection onto the set.
    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            ProjectionSpec::AllSpace => x.clone(),
            ProjectionSpec::Box { lower, upper } => {
                DVector::from_fn(x.len(), |i, _| x[i].clamp(lower[i], upper[i]))
            }
            ProjectionSpec::Ball { center, radius } => {
                let c = DVector::from_column_slice(center);
                let d = x - &c;
                let norm = d.norm();
                if norm <= *radius {
                    x.clone()
                } else {
                    c + d * (*radius / norm)
                }
            }
        }
    }

    /// `argmin_{x ∈ X} ⟨d, x − x_k⟩ + ‖x − x_k‖²/(2α)`, i.e. the projection of
    /// `x_k − α d`.
    pub fn prox_step(&self, xk: &DVector<f64>, d: &DVector<f64>, alpha: f64) -> DVector<f64> {
        let mut trial = xk.clone();
        trial.axpy(-alpha, d, 1.0);
        match self {
            ProjectionSpec::AllSpace => trial,
            _ => self.project(&trial),
        }
    }
}
