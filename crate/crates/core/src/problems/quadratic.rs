//! `g = ½ yᵀBy − yᵀCx`, `f = ½‖y − t‖² + ρ/2 ‖x‖²`, with additive Gaussian
//! value noise on both oracles.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{BilevelProblem, GroundTruth};
use crate::error::{Error, Result};
use crate::oracle::NoisyFunction;
use crate::rng::RngStream;
use crate::types::ProblemConstants;

/// Explicit quadratic instance. Matrices are stored row by row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticBilevelSpec {
    /// m×m, symmetric positive definite.
    pub b: Vec<Vec<f64>>,
    /// m×n coupling.
    pub c: Vec<Vec<f64>>,
    pub y_tgt: Vec<f64>,
    pub rho: f64,
    #[serde(default)]
    pub noise_sigma_f: f64,
    #[serde(default)]
    pub noise_sigma_g: f64,
}

fn rows_to_matrix(rows: &[Vec<f64>], name: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 {
        return Err(Error::Construction(format!("{name} must be non-empty")));
    }
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::Construction(format!("{name} has ragged rows")));
    }
    let m = DMatrix::from_fn(r, c, |i, j| rows[i][j]);
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::Construction(format!("{name} has non-finite entries")));
    }
    Ok(m)
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Validated instance with the factorizations needed for ground truth.
#[derive(Clone, Debug)]
pub struct QuadraticBilevel {
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub y_tgt: DVector<f64>,
    pub rho: f64,
    pub noise_sigma_f: f64,
    pub noise_sigma_g: f64,
    chol: Cholesky<f64, Dyn>,
    /// Smallest eigenvalue of `B`.
    pub lam_g: f64,
    lam_max: f64,
}

impl QuadraticBilevel {
    pub fn new(spec: &QuadraticBilevelSpec) -> Result<Self> {
        let b = rows_to_matrix(&spec.b, "B")?;
        let c = rows_to_matrix(&spec.c, "C")?;
        let m = b.nrows();
        if b.ncols() != m {
            return Err(Error::Construction("B must be square".into()));
        }
        if c.nrows() != m {
            return Err(Error::Construction(format!("C must have {m} rows")));
        }
        if spec.y_tgt.len() != m {
            return Err(Error::Construction(format!("y_tgt must have length {m}")));
        }
        let asym = (&b - b.transpose()).amax();
        if asym > 1e-12 * (1.0 + b.amax()) {
            return Err(Error::Construction("B must be symmetric".into()));
        }
        if !(spec.rho.is_finite() && spec.rho > 0.0) {
            return Err(Error::Construction("rho must be > 0".into()));
        }
        for (name, s) in [("noise_sigma_f", spec.noise_sigma_f), ("noise_sigma_g", spec.noise_sigma_g)] {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::Construction(format!("{name} must be >= 0")));
            }
        }
        let eig = b.clone().symmetric_eigen().eigenvalues;
        let lam_g = eig.min();
        if !(lam_g > 0.0) {
            return Err(Error::Construction("B must be positive definite".into()));
        }
        let chol = Cholesky::new(b.clone()).ok_or_else(|| Error::Construction("B must be positive definite".into()))?;
        Ok(Self {
            lam_max: eig.max(),
            b,
            c,
            y_tgt: DVector::from_column_slice(&spec.y_tgt),
            rho: spec.rho,
            noise_sigma_f: spec.noise_sigma_f,
            noise_sigma_g: spec.noise_sigma_g,
            chol,
            lam_g,
        })
    }

    pub fn n(&self) -> usize {
        self.c.ncols()
    }

    pub fn m(&self) -> usize {
        self.b.nrows()
    }

    pub fn spec(&self) -> QuadraticBilevelSpec {
        QuadraticBilevelSpec {
            b: matrix_to_rows(&self.b),
            c: matrix_to_rows(&self.c),
            y_tgt: self.y_tgt.iter().copied().collect(),
            rho: self.rho,
            noise_sigma_f: self.noise_sigma_f,
            noise_sigma_g: self.noise_sigma_g,
        }
    }

    pub fn f_value(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        0.5 * (y - &self.y_tgt).norm_squared() + 0.5 * self.rho * x.norm_squared()
    }

    pub fn g_value(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        0.5 * y.dot(&(&self.b * y)) - y.dot(&(&self.c * x))
    }

    /// `∇_y g = By − Cx`.
    pub fn grad_y_g(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        &self.b * y - &self.c * x
    }

    /// `y*(x) = B⁻¹Cx`.
    pub fn y_star(&self, x: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(&(&self.c * x))
    }

    /// `∇ψ(x) = ρx + CᵀB⁻¹(y*(x) − t)`.
    pub fn hypergrad(&self, x: &DVector<f64>) -> DVector<f64> {
        let r = self.y_star(x) - &self.y_tgt;
        self.c.tr_mul(&self.chol.solve(&r)) + x * self.rho
    }

    pub fn psi(&self, x: &DVector<f64>) -> f64 {
        self.f_value(x, &self.y_star(x))
    }

    /// Minimizers `(y*_λ, z*)` of `λ⁻¹f + g` and of `g` over `y`.
    pub fn penalty_minimizers(&self, x: &DVector<f64>, lambda: f64) -> (DVector<f64>, DVector<f64>) {
        let m = self.m();
        let shifted = &self.b + DMatrix::identity(m, m) / lambda;
        let rhs = &self.c * x + &self.y_tgt / lambda;
        let y = Cholesky::new(shifted).expect("B + I/λ is positive definite").solve(&rhs);
        (y, self.y_star(x))
    }

    /// Gradient of the penalty surrogate `L*(x) = f(x, y_λ) + λ(g(x, y_λ) − g(x, z*))`:
    /// `ρx − λCᵀ(y_λ − z*)`.
    pub fn penalty_hypergrad(&self, x: &DVector<f64>, lambda: f64) -> DVector<f64> {
        let (y, z) = self.penalty_minimizers(x, lambda);
        x * self.rho - self.c.tr_mul(&(y - z)) * lambda
    }

    /// Regularity constants. `l0f` bounds `‖∇f‖` at the lower minimizers
    /// and penalty minimizers (λ ≥ 1) for `‖x‖ ≤ radius`.
    pub fn constants(&self, radius: f64) -> ProblemConstants {
        let (n, m) = (self.n(), self.m());
        let mut joint = DMatrix::zeros(n + m, n + m);
        joint.view_mut((n, n), (m, m)).copy_from(&self.b);
        joint.view_mut((n, 0), (m, n)).copy_from(&(-&self.c));
        joint.view_mut((0, n), (n, m)).copy_from(&(-self.c.transpose()));
        let l1g = joint.symmetric_eigen().eigenvalues.amax().max(self.lam_max);
        let binv_c = self.chol.solve(&self.c);
        let psi_hess = binv_c.tr_mul(&binv_c) + DMatrix::identity(n, n) * self.rho;
        let l1psi = psi_hess.symmetric_eigen().eigenvalues.max();
        let c_norm = self.c.norm().max(f64::MIN_POSITIVE);
        let t = self.y_tgt.norm();
        ProblemConstants {
            l0f: self.rho * radius + (c_norm * radius + t) / self.lam_g + t,
            l1f: self.rho.max(1.0),
            l1g,
            l2g: 0.0,
            lam_g: self.lam_g,
            sig1f2: 0.0,
            sig1g2: 0.0,
            sig2g2: 0.0,
            l1psi,
        }
    }
}

impl GroundTruth for QuadraticBilevel {
    fn y_star(&self, x: &DVector<f64>) -> DVector<f64> {
        QuadraticBilevel::y_star(self, x)
    }

    fn hypergrad(&self, x: &DVector<f64>) -> DVector<f64> {
        QuadraticBilevel::hypergrad(self, x)
    }

    fn psi(&self, x: &DVector<f64>) -> f64 {
        QuadraticBilevel::psi(self, x)
    }

    fn g(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        self.g_value(x, y)
    }
}

fn value_noise(sigma: f64, noise: &RngStream) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    let z: f64 = noise.rng().sample(StandardNormal);
    sigma * z
}

struct Upper(Arc<QuadraticBilevel>);
struct Lower(Arc<QuadraticBilevel>);

impl NoisyFunction for Upper {
    fn dim_x(&self) -> usize {
        self.0.n()
    }
    fn dim_y(&self) -> usize {
        self.0.m()
    }
    fn evaluate(&self, x: &DVector<f64>, y: &DVector<f64>, noise: &RngStream) -> f64 {
        self.0.f_value(x, y) + value_noise(self.0.noise_sigma_f, noise)
    }
}

impl NoisyFunction for Lower {
    fn dim_x(&self) -> usize {
        self.0.n()
    }
    fn dim_y(&self) -> usize {
        self.0.m()
    }
    fn evaluate(&self, x: &DVector<f64>, y: &DVector<f64>, noise: &RngStream) -> f64 {
        self.0.g_value(x, y) + value_noise(self.0.noise_sigma_g, noise)
    }
}

/// Radius of the ball on which [`make_quadratic`] evaluates `l0f`.
pub const CONSTANTS_RADIUS: f64 = 10.0;

/// Builds the problem. The oracles draw their value noise from the stream
/// passed to each call, so the instance itself needs no seed.
pub fn make_quadratic(spec: &QuadraticBilevelSpec) -> Result<(BilevelProblem, Arc<QuadraticBilevel>)> {
    let q = Arc::new(QuadraticBilevel::new(spec)?);
    let problem = BilevelProblem {
        name: "quadratic".into(),
        n: q.n(),
        m: q.m(),
        f: Arc::new(Upper(q.clone())),
        g: Arc::new(Lower(q.clone())),
        analytic: Some(q.clone()),
        constants: Some(q.constants(CONSTANTS_RADIUS)),
        query_scale: 1,
    };
    Ok((problem, q))
}

/// Random quadratic instances: `B = Q diag(λ) Qᵀ` with eigenvalues evenly
/// spaced in `[eig_min, eig_max]` and Haar-like `Q`, `C` Gaussian with
/// entries of variance `coupling²/n`, `t` Gaussian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticFamily {
    pub n: usize,
    pub m: usize,
    #[serde(default = "one")]
    pub eig_min: f64,
    #[serde(default = "two")]
    pub eig_max: f64,
    #[serde(default = "one")]
    pub coupling: f64,
    #[serde(default = "half")]
    pub rho: f64,
    #[serde(default = "one")]
    pub target_scale: f64,
    #[serde(default)]
    pub noise_sigma_f: f64,
    #[serde(default)]
    pub noise_sigma_g: f64,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}
fn two() -> f64 {
    2.0
}
fn half() -> f64 {
    0.5
}

impl QuadraticFamily {
    pub fn new(n: usize, m: usize, seed: u64) -> Self {
        Self {
            n,
            m,
            eig_min: 1.0,
            eig_max: 2.0,
            coupling: 1.0,
            rho: 0.5,
            target_scale: 1.0,
            noise_sigma_f: 0.0,
            noise_sigma_g: 0.0,
            seed,
        }
    }

    pub fn with_noise(mut self, sigma: f64) -> Self {
        self.noise_sigma_f = sigma;
        self.noise_sigma_g = sigma;
        self
    }

    pub fn generate(&self) -> Result<QuadraticBilevelSpec> {
        let (n, m) = (self.n, self.m);
        if n == 0 || m == 0 {
            return Err(Error::InvalidDimension(0));
        }
        if !(self.eig_min > 0.0 && self.eig_max >= self.eig_min && self.eig_max.is_finite()) {
            return Err(Error::Construction("need 0 < eig_min <= eig_max".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut gauss = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal));
        let q = gauss(m, m).qr().q();
        let eigs = DVector::from_fn(m, |i, _| {
            if m == 1 {
                self.eig_min
            } else {
                self.eig_min + (self.eig_max - self.eig_min) * i as f64 / (m - 1) as f64
            }
        });
        let mut b = &q * DMatrix::from_diagonal(&eigs) * q.transpose();
        b = (&b + b.transpose()) * 0.5;
        let c = gauss(m, n) * (self.coupling / (n as f64).sqrt());
        let t = gauss(m, 1) * self.target_scale;
        Ok(QuadraticBilevelSpec {
            b: matrix_to_rows(&b),
            c: matrix_to_rows(&c),
            y_tgt: t.iter().copied().collect(),
            rho: self.rho,
            noise_sigma_f: self.noise_sigma_f,
            noise_sigma_g: self.noise_sigma_g,
        })
    }
}
