use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A pair of upper (`x`, length n) and lower (`y`, length m) variables.
#[derive(Clone, Debug, PartialEq)]
pub struct Point {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
}

impl Point {
    pub fn new(x: DVector<f64>, y: DVector<f64>) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::InvalidDimension(0));
        }
        if y.is_empty() {
            return Err(Error::InvalidDimension(0));
        }
        if !x.iter().chain(y.iter()).all(|v| v.is_finite()) {
            return Err(Error::param("point", "entries must be finite"));
        }
        Ok(Self { x, y })
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn m(&self) -> usize {
        self.y.len()
    }
}

/// Gaussian smoothing radii. `eta*` act on the x-block, `mu*` on the y-block;
/// index 1 is the upper function, index 2 the lower one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothingParams {
    pub eta1: f64,
    pub mu1: f64,
    pub eta2: f64,
    pub mu2: f64,
}

impl SmoothingParams {
    /// Same radius everywhere.
    pub fn uniform(r: f64) -> Self {
        Self {
            eta1: r,
            mu1: r,
            eta2: r,
            mu2: r,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.eta1, self.mu1, self.eta2, self.mu2];
        if !all.iter().all(|v| v.is_finite()) {
            return Err(Error::param("smoothing", "radii must be finite"));
        }
        if self.eta1 <= 0.0 {
            return Err(Error::param("eta1", "must be > 0"));
        }
        if self.mu1 <= 0.0 {
            return Err(Error::param("mu1", "must be > 0"));
        }
        if self.eta2 < 0.0 {
            return Err(Error::param("eta2", "must be >= 0"));
        }
        if self.mu2 <= 0.0 {
            return Err(Error::param("mu2", "must be > 0"));
        }
        Ok(())
    }
}

/// Regularity constants of a bilevel instance, when known.
///
/// `l0f`, `l1f`: Lipschitz constants of f and its gradient; `l1g`, `l2g`:
/// of the gradient and Hessian of g; `lam_g`: strong convexity of g in y;
/// `sig*`: derivative noise variances; `l1psi`: smoothness of the
/// hyper-objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants {
    pub l0f: f64,
    pub l1f: f64,
    pub l1g: f64,
    pub l2g: f64,
    pub lam_g: f64,
    pub sig1f2: f64,
    pub sig1g2: f64,
    pub sig2g2: f64,
    pub l1psi: f64,
}

impl ProblemConstants {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("l0f", self.l0f),
            ("l1f", self.l1f),
            ("l1g", self.l1g),
            ("l2g", self.l2g),
            ("sig1f2", self.sig1f2),
            ("sig1g2", self.sig1g2),
            ("sig2g2", self.sig2g2),
        ];
        for (name, v) in nonneg {
            if v.is_nan() || v < 0.0 {
                return Err(Error::param(name, "must be non-negative"));
            }
        }
        if self.lam_g.is_nan() || self.lam_g <= 0.0 {
            return Err(Error::param("lam_g", "must be > 0"));
        }
        if self.l1psi.is_nan() || self.l1psi <= 0.0 {
            return Err(Error::param("l1psi", "must be > 0"));
        }
        if self.lam_g > self.l1g {
            return Err(Error::param("lam_g", "must not exceed l1g"));
        }
        Ok(())
    }

    /// Smallest penalty weight for which the penalty surrogate is well posed.
    pub fn penalty_threshold(&self) -> f64 {
        4.0 * self.l1f / self.lam_g
    }
}

/// Outer step sizes `α_k`: one constant, or one value per iteration (the
/// last value repeats past the end of the list).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepSchedule {
    Constant(f64),
    PerIteration(Vec<f64>),
}

impl StepSchedule {
    pub fn at(&self, k: usize) -> f64 {
        match self {
            StepSchedule::Constant(a) => *a,
            StepSchedule::PerIteration(v) => v.get(k).or(v.last()).copied().unwrap_or(f64::NAN),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |a: &f64| a.is_finite() && *a > 0.0;
        let valid = match self {
            StepSchedule::Constant(a) => ok(a),
            StepSchedule::PerIteration(v) => !v.is_empty() && v.iter().all(ok),
        };
        if valid {
            Ok(())
        } else {
            Err(Error::param("alpha", "step sizes must be finite and > 0"))
        }
    }
}
