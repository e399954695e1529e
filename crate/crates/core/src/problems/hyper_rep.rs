//! Hyper-representation: the outer variable parameterizes a feature map
//! `T(χ; x) = σ(χ X)` (`X` is `x` reshaped row-major to `d_in × d_out`),
//! the inner problem is ridge regression on those features.
//!
//! `f = 1/(2n₁) ‖T(χ₁; x) y − b₁‖² + γ/2 ‖x‖²`,
//! `g = 1/(2n₂) ‖T(χ₂; x) y − b₂‖² + γ/2 ‖y‖²`.
//! Each oracle call evaluates the loss on `minibatch_rows` rows drawn
//! without replacement from the call's noise stream.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{BilevelProblem, GroundTruth};
use crate::error::{Error, Result};
use crate::oracle::NoisyFunction;
use crate::rng::RngStream;
use crate::validation::fd_grad;

/// Step of the central differences behind the reference hypergradient.
pub const HYPERGRAD_FD_STEP: f64 = 1e-5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Tanh,
    Linear,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Linear => v,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperRepSpec {
    pub d_in: usize,
    pub d_out: usize,
    pub gamma: f64,
    pub minibatch_rows: usize,
    #[serde(default)]
    pub activation: Activation,
    /// `n₁ × d_in`, row by row.
    pub chi1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    /// `n₂ × d_in`, row by row.
    pub chi2: Vec<Vec<f64>>,
    pub b2: Vec<f64>,
}

/// Synthetic data from a planted `(x₀, y₀)`: χ entries standard normal,
/// `b = T(χ; x₀) y₀ + label_noise · N(0, 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperRepGenerator {
    pub d_in: usize,
    pub d_out: usize,
    pub n1: usize,
    pub n2: usize,
    pub gamma: f64,
    pub minibatch_rows: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub label_noise: f64,
    #[serde(default)]
    pub seed: u64,
}

impl HyperRepGenerator {
    /// The desk-scale instance: 8×16 features, 100 + 100 rows, γ = 1e-6,
    /// 5-row minibatches.
    pub fn desk(seed: u64) -> Self {
        Self {
            d_in: 8,
            d_out: 16,
            n1: 100,
            n2: 100,
            gamma: 1e-6,
            minibatch_rows: 5,
            activation: Activation::Tanh,
            label_noise: 0.0,
            seed,
        }
    }

    /// Returns the spec and the planted `(x₀, y₀)`.
    pub fn generate(&self) -> Result<(HyperRepSpec, DVector<f64>, DVector<f64>)> {
        if self.d_in == 0 || self.d_out == 0 || self.n1 == 0 || self.n2 == 0 {
            return Err(Error::InvalidDimension(0));
        }
        if !(self.label_noise.is_finite() && self.label_noise >= 0.0) {
            return Err(Error::Construction("label_noise must be >= 0".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut normal = move || -> f64 { rng.sample(StandardNormal) };
        let chi1 = DMatrix::from_fn(self.n1, self.d_in, |_, _| normal());
        let chi2 = DMatrix::from_fn(self.n2, self.d_in, |_, _| normal());
        let scale = 1.0 / (self.d_in as f64).sqrt();
        let x0 = DVector::from_fn(self.d_in * self.d_out, |_, _| scale * normal());
        let y0 = DVector::from_fn(self.d_out, |_, _| normal());
        let xm = reshape(&x0, self.d_in, self.d_out);
        let b1 = features(&chi1, &xm, self.activation) * &y0 + DVector::from_fn(self.n1, |_, _| self.label_noise * normal());
        let b2 = features(&chi2, &xm, self.activation) * &y0 + DVector::from_fn(self.n2, |_, _| self.label_noise * normal());
        let rows = |m: &DMatrix<f64>| (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
        let spec = HyperRepSpec {
            d_in: self.d_in,
            d_out: self.d_out,
            gamma: self.gamma,
            minibatch_rows: self.minibatch_rows,
            activation: self.activation,
            chi1: rows(&chi1),
            b1: b1.iter().copied().collect(),
            chi2: rows(&chi2),
            b2: b2.iter().copied().collect(),
        };
        Ok((spec, x0, y0))
    }
}

fn reshape(x: &DVector<f64>, d_in: usize, d_out: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(d_in, d_out, x.as_slice())
}

fn features(chi: &DMatrix<f64>, xm: &DMatrix<f64>, act: Activation) -> DMatrix<f64> {
    (chi * xm).map(|v| act.apply(v))
}

#[derive(Clone, Debug)]
pub struct HyperRep {
    pub d_in: usize,
    pub d_out: usize,
    pub gamma: f64,
    pub minibatch_rows: usize,
    pub activation: Activation,
    chi1: DMatrix<f64>,
    b1: DVector<f64>,
    chi2: DMatrix<f64>,
    b2: DVector<f64>,
}

impl HyperRep {
    pub fn new(spec: &HyperRepSpec) -> Result<Self> {
        let to_matrix = |rows: &[Vec<f64>], name: &str| -> Result<DMatrix<f64>> {
            if rows.is_empty() {
                return Err(Error::Construction(format!("{name} must have rows")));
            }
            if rows.iter().any(|r| r.len() != spec.d_in) {
                return Err(Error::Construction(format!("{name} rows must have length d_in = {}", spec.d_in)));
            }
            Ok(DMatrix::from_fn(rows.len(), spec.d_in, |i, j| rows[i][j]))
        };
        if spec.d_in == 0 || spec.d_out == 0 {
            return Err(Error::InvalidDimension(0));
        }
        let chi1 = to_matrix(&spec.chi1, "chi1")?;
        let chi2 = to_matrix(&spec.chi2, "chi2")?;
        if spec.b1.len() != chi1.nrows() || spec.b2.len() != chi2.nrows() {
            return Err(Error::Construction("responses must match the row counts".into()));
        }
        if !(spec.gamma.is_finite() && spec.gamma > 0.0) {
            return Err(Error::Construction("gamma must be > 0".into()));
        }
        let rows = chi1.nrows().min(chi2.nrows());
        if spec.minibatch_rows == 0 || spec.minibatch_rows > rows {
            return Err(Error::Construction(format!("minibatch_rows must lie in 1..={rows}")));
        }
        let finite = chi1.iter().chain(chi2.iter()).chain(&spec.b1).chain(&spec.b2).all(|v| v.is_finite());
        if !finite {
            return Err(Error::Construction("data must be finite".into()));
        }
        Ok(Self {
            d_in: spec.d_in,
            d_out: spec.d_out,
            gamma: spec.gamma,
            minibatch_rows: spec.minibatch_rows,
            activation: spec.activation,
            chi1,
            b1: DVector::from_column_slice(&spec.b1),
            chi2,
            b2: DVector::from_column_slice(&spec.b2),
        })
    }

    pub fn n(&self) -> usize {
        self.d_in * self.d_out
    }

    pub fn m(&self) -> usize {
        self.d_out
    }

    /// Half mean squared residual over `rows` (ascending).
    fn partial_loss(&self, chi: &DMatrix<f64>, b: &DVector<f64>, xm: &DMatrix<f64>, y: &DVector<f64>, rows: &[usize]) -> f64 {
        let mut acc = 0.0;
        for &i in rows {
            let h = chi.row(i) * xm;
            let pred: f64 = h.iter().zip(y.iter()).map(|(a, w)| self.activation.apply(*a) * w).sum();
            acc += (pred - b[i]).powi(2);
        }
        acc / (2.0 * rows.len() as f64)
    }

    fn sample_rows(&self, total: usize, noise: &RngStream) -> Vec<usize> {
        let mut rows = rand::seq::index::sample(&mut noise.rng(), total, self.minibatch_rows).into_vec();
        rows.sort_unstable();
        rows
    }

    pub fn f_value(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let all: Vec<usize> = (0..self.chi1.nrows()).collect();
        let xm = reshape(x, self.d_in, self.d_out);
        self.partial_loss(&self.chi1, &self.b1, &xm, y, &all) + 0.5 * self.gamma * x.norm_squared()
    }

    pub fn g_value(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let all: Vec<usize> = (0..self.chi2.nrows()).collect();
        let xm = reshape(x, self.d_in, self.d_out);
        self.partial_loss(&self.chi2, &self.b2, &xm, y, &all) + 0.5 * self.gamma * y.norm_squared()
    }

    /// Ridge solution `(AᵀA/n₂ + γI)⁻¹ Aᵀb₂/n₂` with `A = T(χ₂; x)`.
    pub fn y_star(&self, x: &DVector<f64>) -> DVector<f64> {
        let a = features(&self.chi2, &reshape(x, self.d_in, self.d_out), self.activation);
        let n2 = a.nrows() as f64;
        let mut gram = a.tr_mul(&a) / n2;
        for i in 0..self.d_out {
            gram[(i, i)] += self.gamma;
        }
        let rhs = a.tr_mul(&self.b2) / n2;
        Cholesky::new(gram).expect("ridge Gram matrix is positive definite").solve(&rhs)
    }

    pub fn psi(&self, x: &DVector<f64>) -> f64 {
        self.f_value(x, &self.y_star(x))
    }

    pub fn hypergrad(&self, x: &DVector<f64>) -> DVector<f64> {
        fd_grad(|x| self.psi(x), x, HYPERGRAD_FD_STEP)
    }
}

impl GroundTruth for HyperRep {
    fn y_star(&self, x: &DVector<f64>) -> DVector<f64> {
        HyperRep::y_star(self, x)
    }

    fn hypergrad(&self, x: &DVector<f64>) -> DVector<f64> {
        HyperRep::hypergrad(self, x)
    }

    fn psi(&self, x: &DVector<f64>) -> f64 {
        HyperRep::psi(self, x)
    }

    fn g(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        self.g_value(x, y)
    }
}

struct Upper(Arc<HyperRep>);
struct Lower(Arc<HyperRep>);

impl NoisyFunction for Upper {
    fn dim_x(&self) -> usize {
        self.0.n()
    }
    fn dim_y(&self) -> usize {
        self.0.m()
    }
    fn evaluate(&self, x: &DVector<f64>, y: &DVector<f64>, noise: &RngStream) -> f64 {
        let p = &*self.0;
        let rows = p.sample_rows(p.chi1.nrows(), noise);
        let xm = reshape(x, p.d_in, p.d_out);
        p.partial_loss(&p.chi1, &p.b1, &xm, y, &rows) + 0.5 * p.gamma * x.norm_squared()
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
        let p = &*self.0;
        let rows = p.sample_rows(p.chi2.nrows(), noise);
        let xm = reshape(x, p.d_in, p.d_out);
        p.partial_loss(&p.chi2, &p.b2, &xm, y, &rows) + 0.5 * p.gamma * y.norm_squared()
    }
}

/// Builds the problem. Constants are unknown for this instance; the query
/// scale is `minibatch_rows`.
pub fn make_hyper_rep(spec: &HyperRepSpec) -> Result<(BilevelProblem, Arc<HyperRep>)> {
    let h = Arc::new(HyperRep::new(spec)?);
    let problem = BilevelProblem {
        name: "hyper-rep".into(),
        n: h.n(),
        m: h.m(),
        f: Arc::new(Upper(h.clone())),
        g: Arc::new(Lower(h.clone())),
        analytic: Some(h.clone()),
        constants: None,
        query_scale: h.minibatch_rows as u64,
    };
    Ok((problem, h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::sample_gaussian;

    fn small(seed: u64) -> HyperRepGenerator {
        HyperRepGenerator {
            d_in: 3,
            d_out: 4,
            n1: 40,
            n2: 40,
            gamma: 1e-6,
            minibatch_rows: 5,
            activation: Activation::Tanh,
            label_noise: 0.0,
            seed,
        }
    }

    #[test]
    fn planted_point_is_nearly_stationary() {
        let (spec, x0, y0) = small(1).generate().unwrap();
        let h = HyperRep::new(&spec).unwrap();
        let ys = h.y_star(&x0);
        assert!((&ys - &y0).norm() <= 1e-3 * (1.0 + y0.norm()), "{ys} vs {y0}");
        let gnorm = h.hypergrad(&x0).norm();
        assert!(gnorm <= h.gamma * (x0.norm() + 1.0) + 1e-3, "{gnorm}");
    }

    #[test]
    fn full_batch_oracle_is_exact() {
        let mut gen = small(2);
        gen.minibatch_rows = 40;
        let (spec, x0, _) = gen.generate().unwrap();
        let (p, h) = make_hyper_rep(&spec).unwrap();
        let (f, g) = p.oracles();
        let y = sample_gaussian(&mut RngStream::new(3).rng(), 4).unwrap();
        for r in 0..5 {
            let s = RngStream::new(9).derive("r", r);
            assert_eq!(g.evaluate(&x0, &y, &s), h.g_value(&x0, &y));
            assert_eq!(f.evaluate(&x0, &y, &s), h.f_value(&x0, &y));
        }
    }

    #[test]
    fn ridge_dominated_limit() {
        let mut gen = small(4);
        gen.gamma = 1e3;
        let (spec, _, _) = gen.generate().unwrap();
        let h = HyperRep::new(&spec).unwrap();
        let x = sample_gaussian(&mut RngStream::new(5).rng(), 12).unwrap();
        assert!(h.y_star(&x).norm() < 1e-3);
        let base = h.b1.norm_squared() / (2.0 * 40.0) + 0.5 * 1e3 * x.norm_squared();
        assert!((h.psi(&x) - base).abs() <= 1e-3 * base);
        let hg = h.hypergrad(&x);
        let expect = &x * 1e3;
        assert!((&hg - &expect).norm() <= 0.01 * expect.norm());
    }

    #[test]
    fn y_star_is_stationary() {
        let (spec, _, _) = small(6).generate().unwrap();
        let h = HyperRep::new(&spec).unwrap();
        let x = sample_gaussian(&mut RngStream::new(7).rng(), 12).unwrap();
        let ys = h.y_star(&x);
        let grad = fd_grad(|y| h.g_value(&x, y), &ys, 1e-5);
        assert!(grad.norm() < 1e-8, "{}", grad.norm());
    }

    #[test]
    fn minibatch_oracle_is_unbiased() {
        let (spec, x0, y0) = small(8).generate().unwrap();
        let (p, h) = make_hyper_rep(&spec).unwrap();
        let (f, _) = p.oracles();
        let y = y0 * 0.5;
        let reps = 100_000u64;
        let root = RngStream::new(10);
        let (mut sum, mut sq) = (0.0, 0.0);
        for r in 0..reps {
            let v = f.evaluate(&x0, &y, &root.derive("r", r));
            sum += v;
            sq += v * v;
        }
        let mean = sum / reps as f64;
        let se = ((sq / reps as f64 - mean * mean) / reps as f64).sqrt();
        assert!((mean - h.f_value(&x0, &y)).abs() <= 5.0 * se, "{mean} vs {}", h.f_value(&x0, &y));
        assert_eq!(p.query_scale, 5);
    }

    #[test]
    fn construction_errors() {
        let (mut spec, _, _) = small(0).generate().unwrap();
        spec.minibatch_rows = 41;
        assert!(matches!(make_hyper_rep(&spec), Err(Error::Construction(_))));
        spec.minibatch_rows = 5;
        spec.gamma = 0.0;
        assert!(make_hyper_rep(&spec).is_err());
        spec.gamma = 1.0;
        spec.b1.pop();
        assert!(make_hyper_rep(&spec).is_err());
    }

    #[test]
    fn linear_activation_reshapes_row_major() {
        let spec = HyperRepSpec {
            d_in: 2,
            d_out: 2,
            gamma: 1.0,
            minibatch_rows: 1,
            activation: Activation::Linear,
            chi1: vec![vec![1.0, 0.0]],
            b1: vec![0.0],
            chi2: vec![vec![1.0, 0.0]],
            b2: vec![0.0],
        };
        let h = HyperRep::new(&spec).unwrap();
        // X = [[1, 2], [3, 4]], χ = e₁ ⇒ features (1, 2); y = (1, 1) ⇒ pred 3
        let x = DVector::from_column_slice(&[1.0, 2.0, 3.0, 4.0]);
        let y = DVector::from_column_slice(&[1.0, 1.0]);
        assert_eq!(h.g_value(&x, &y), 0.5 * 9.0 + 0.5 * 2.0);
    }
}
