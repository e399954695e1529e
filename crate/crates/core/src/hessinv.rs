//! Zeroth-order approximation of `[∇²_yy g]⁻¹ ∇_y f` by SGD on
//! `J(z) = ½ zᵀ ∇²_yy g z − zᵀ ∇_y f`.
//!
//! Iteration `τ` reads from `stream/("iter", τ)`: directions from `dir`
//! (`u` when `eta2 > 0`, then `v`, then `v'`), lower noise from `g_noise`,
//! upper noise from `f_noise`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::StochasticOracle;
use crate::rng::{sample_gaussian, RngStream};
use crate::smoothing::{forward_difference, hess_yy_apply_sample, Directions};
use crate::types::SmoothingParams;

/// Iterates whose norm exceeds `DIVERGENCE_FACTOR · (1 + ‖start‖)` abort the loop.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HessInvConfig {
    pub beta: f64,
    pub iterations: usize,
    pub smoothing: SmoothingParams,
    /// Starting point; zero when absent.
    #[serde(default)]
    pub z0: Option<Vec<f64>>,
}

impl HessInvConfig {
    pub fn validate(&self, m: usize) -> Result<()> {
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::param("beta", "must be finite and >= 0"));
        }
        if self.iterations == 0 {
            return Err(Error::param("iterations", "must be >= 1"));
        }
        if !(self.beta * self.iterations as f64).is_finite() {
            return Err(Error::param("beta", "beta * iterations must be finite"));
        }
        if !(self.smoothing.mu1 > 0.0 && self.smoothing.mu2 > 0.0 && self.smoothing.eta2 >= 0.0) {
            return Err(Error::param("smoothing", "requires mu1, mu2 > 0 and eta2 >= 0"));
        }
        if let Some(z0) = &self.z0 {
            if z0.len() != m {
                return Err(Error::param("z0", format!("length must be {m}")));
            }
        }
        Ok(())
    }
}

/// Constants multiplying the O(·) terms of [`hessinv_schedule`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HessInvTuning {
    pub c_gamma: f64,
    pub c_t: f64,
    pub c_mu: f64,
}

impl Default for HessInvTuning {
    fn default() -> Self {
        Self {
            c_gamma: 1.0,
            c_t: 1.0,
            c_mu: 1.0,
        }
    }
}

/// One stochastic gradient of `J` at `z`: 3 lower and 2 upper evaluations.
#[allow(clippy::too_many_arguments)]
pub fn grad_j_sample(
    f: &StochasticOracle,
    g: &StochasticOracle,
    xbar: &DVector<f64>,
    ybar: &DVector<f64>,
    z: &DVector<f64>,
    params: &SmoothingParams,
    stream: &RngStream,
    iteration: u64,
) -> Result<DVector<f64>> {
    let (n, m) = (xbar.len(), ybar.len());
    let mut rng = stream.derive("dir", 0).rng();
    let u = if params.eta2 > 0.0 {
        Some(sample_gaussian(&mut rng, n)?)
    } else {
        None
    };
    let v = sample_gaussian(&mut rng, m)?;
    let v_prime = sample_gaussian(&mut rng, m)?;
    let dirs = Directions::fixed(u, Some(v));

    let curvature = hess_yy_apply_sample(
        g,
        xbar,
        ybar,
        params.eta2,
        params.mu2,
        &dirs,
        z,
        &stream.derive("g_noise", 0),
        iteration,
    )?;
    let fdiff = forward_difference(
        f,
        xbar,
        ybar,
        0.0,
        None,
        params.mu1,
        Some(&v_prime),
        &stream.derive("f_noise", 0),
    );
    if !fdiff.is_finite() {
        return Err(Error::NonFinite {
            context: "grad_j_sample",
            index: iteration,
        });
    }
    let mut out = curvature;
    out.axpy(-fdiff / params.mu1, &v_prime, 1.0);
    Ok(out)
}

/// Runs `T` SGD steps on `J` and returns `z_T`. Costs `3T` lower and `2T`
/// upper evaluations.
pub fn approx_hess_inv_vec(
    f: &StochasticOracle,
    g: &StochasticOracle,
    xbar: &DVector<f64>,
    ybar: &DVector<f64>,
    cfg: &HessInvConfig,
    stream: &RngStream,
) -> Result<DVector<f64>> {
    let m = ybar.len();
    cfg.validate(m)?;
    let mut z = match &cfg.z0 {
        Some(z0) => DVector::from_column_slice(z0),
        None => DVector::zeros(m),
    };
    let limit = DIVERGENCE_FACTOR * (1.0 + z.norm());
    for tau in 0..cfg.iterations as u64 {
        let grad = grad_j_sample(f, g, xbar, ybar, &z, &cfg.smoothing, &stream.derive("iter", tau), tau)?;
        z.axpy(-cfg.beta, &grad, 1.0);
        let norm = z.norm();
        if !(norm <= limit) {
            return Err(Error::Divergence {
                context: "approx_hess_inv_vec",
                iteration: tau,
                norm,
            });
        }
    }
    Ok(z)
}

/// Plug-in schedule: step `c_γ ε/(m(m+n)²)`, `T = ⌈c_T m(m+n)²/ε · ln(1/ε)⌉`,
/// `μ₁ = min(c_μ, 1/m)`, `η₂ = μ₂ = min(c_μ, 1/√(m+n))`.
pub fn hessinv_schedule(n: usize, m: usize, eps: f64, tuning: &HessInvTuning) -> Result<HessInvConfig> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::param("eps", "must lie in (0, 1)"));
    }
    if n == 0 || m == 0 {
        return Err(Error::InvalidDimension(0));
    }
    let (nf, mf) = (n as f64, m as f64);
    let scale = mf * (mf + nf).powi(2);
    let beta = tuning.c_gamma * eps / scale;
    let iterations = ((tuning.c_t * scale / eps * (1.0 / eps).ln()).ceil() as usize).max(1);
    let mu1 = tuning.c_mu.min(1.0 / mf);
    let r2 = tuning.c_mu.min(1.0 / (mf + nf).sqrt());
    Ok(HessInvConfig {
        beta,
        iterations,
        smoothing: SmoothingParams {
            eta1: mu1,
            mu1,
            eta2: r2,
            mu2: r2,
        },
        z0: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    fn diag_problem(b: DVector<f64>, lin: DVector<f64>, scale: f64) -> (StochasticOracle, StochasticOracle) {
        let m = b.len();
        let g = StochasticOracle::from_fn(1, m, move |_, y, _| 0.5 * y.component_mul(y).dot(&b));
        let f = StochasticOracle::from_fn(1, m, move |_, y, _| scale * lin.dot(y));
        (f, g)
    }

    #[test]
    fn constant_functions_give_zero() {
        let f = StochasticOracle::from_fn(2, 3, |_, _, _| 1.0);
        let g = StochasticOracle::from_fn(2, 3, |_, _, _| -2.0);
        let p = SmoothingParams::uniform(0.1);
        let out = grad_j_sample(&f, &g, &dv(&[0.0, 1.0]), &dv(&[1.0, 2.0, 3.0]), &dv(&[1.0, 1.0, 1.0]), &p, &RngStream::new(1), 0)
            .unwrap();
        assert_eq!(out, DVector::zeros(3));
        assert_eq!((f.evals(), g.evals()), (2, 3));
    }

    #[test]
    fn zero_z_leaves_only_the_upper_term() {
        // G = ½‖y‖², F = ⟨b, y⟩, z = 0: output is −v'⟨b, v'⟩.
        let b = dv(&[1.0, -2.0, 0.5]);
        let (f, g) = diag_problem(DVector::from_element(3, 1.0), b.clone(), 1.0);
        let p = SmoothingParams::uniform(1e-3);
        let stream = RngStream::new(4);
        let out = grad_j_sample(&f, &g, &dv(&[0.0]), &dv(&[0.3, 0.1, -0.2]), &DVector::zeros(3), &p, &stream, 0).unwrap();
        // replay the draws
        let mut rng = stream.derive("dir", 0).rng();
        let _u = sample_gaussian(&mut rng, 1).unwrap();
        let _v = sample_gaussian(&mut rng, 3).unwrap();
        let vp = sample_gaussian(&mut rng, 3).unwrap();
        let expected = -&vp * b.dot(&vp);
        assert!((&out - &expected).norm() <= 1e-9 * (1.0 + expected.norm()), "{out} vs {expected}");
    }

    #[test]
    fn grad_j_is_unbiased_on_quadratic() {
        let bdiag = dv(&[1.0, 2.0, 3.0]);
        let lin = dv(&[0.5, -1.0, 2.0]);
        let (f, g) = diag_problem(bdiag.clone(), lin.clone(), 1.0);
        let z0 = dv(&[1.0, 0.5, -0.5]);
        let p = SmoothingParams {
            eta1: 1e-3,
            mu1: 1e-3,
            eta2: 0.0,
            mu2: 1e-3,
        };
        let reps = 100_000;
        let root = RngStream::new(21);
        let mut sum = DVector::zeros(3);
        let mut sumsq = DVector::zeros(3);
        let (x, y) = (dv(&[0.0]), dv(&[0.2, -0.1, 0.4]));
        for r in 0..reps {
            let s = grad_j_sample(&f, &g, &x, &y, &z0, &p, &root.derive("r", r), r).unwrap();
            sumsq += s.component_mul(&s);
            sum += s;
        }
        let mean = &sum / reps as f64;
        let var = sumsq / reps as f64 - mean.component_mul(&mean);
        let se = (var.sum() / reps as f64).sqrt();
        let target = bdiag.component_mul(&z0) - lin;
        assert!((&mean - &target).norm() <= 5.0 * se, "{} > 5·{se}", (&mean - &target).norm());
    }

    // The Hessian-vector estimate has heavy-tailed multiplicative noise, so
    // the stationary error scales with beta; these step sizes keep it small.
    #[test]
    fn converges_to_b_on_identity_hessian() {
        let b = dv(&[1.0, -0.5]);
        let (f, g) = diag_problem(DVector::from_element(2, 1.0), b.clone(), 1.0);
        let cfg = HessInvConfig {
            beta: 2e-4,
            iterations: 30_000,
            smoothing: SmoothingParams::uniform(1e-4),
            z0: None,
        };
        let mut errs: Vec<f64> = (0..20)
            .map(|s| {
                let z = approx_hess_inv_vec(&f, &g, &dv(&[0.0]), &DVector::zeros(2), &cfg, &RngStream::new(s)).unwrap();
                (z - &b).norm()
            })
            .collect();
        errs.sort_by(f64::total_cmp);
        assert!(errs[10] <= 0.05 * (1.0 + b.norm()), "median error {}", errs[10]);
    }

    #[test]
    fn converges_on_diag_two() {
        let (f, g) = diag_problem(dv(&[1.0, 2.0]), dv(&[1.0, 1.0]), 1.0);
        let cfg = HessInvConfig {
            beta: 1e-4,
            iterations: 60_000,
            smoothing: SmoothingParams::uniform(1e-4),
            z0: None,
        };
        let mut errs: Vec<f64> = (0..20)
            .map(|s| {
                let z = approx_hess_inv_vec(&f, &g, &dv(&[0.0]), &DVector::zeros(2), &cfg, &RngStream::new(100 + s)).unwrap();
                (z[0] - 1.0).abs().max((z[1] - 0.5).abs())
            })
            .collect();
        errs.sort_by(f64::total_cmp);
        assert!(errs[10] <= 0.05, "median max-coordinate error {}", errs[10]);
    }

    #[test]
    fn error_shrinks_with_more_iterations() {
        let (f, g) = diag_problem(dv(&[1.0, 2.0]), dv(&[1.0, 1.0]), 1.0);
        let target = dv(&[1.0, 0.5]);
        let median_sq = |iterations| {
            let cfg = HessInvConfig {
                beta: 2e-4,
                iterations,
                smoothing: SmoothingParams::uniform(1e-4),
                z0: None,
            };
            let mut errs: Vec<f64> = (0..20)
                .map(|s| {
                    let z = approx_hess_inv_vec(&f, &g, &dv(&[0.0]), &DVector::zeros(2), &cfg, &RngStream::new(500 + s)).unwrap();
                    (z - &target).norm_squared()
                })
                .collect();
            errs.sort_by(f64::total_cmp);
            errs[10]
        };
        let (a, b, c) = (median_sq(1_000), median_sq(5_000), median_sq(20_000));
        assert!(a > b && b > c, "{a} {b} {c}");
    }

    #[test]
    fn zero_step_returns_start_and_counts() {
        let (f, g) = diag_problem(dv(&[1.0, 2.0]), dv(&[1.0, 1.0]), 1.0);
        let cfg = HessInvConfig {
            beta: 0.0,
            iterations: 1,
            smoothing: SmoothingParams::uniform(1e-3),
            z0: Some(vec![0.7, -0.3]),
        };
        let z = approx_hess_inv_vec(&f, &g, &dv(&[0.0]), &DVector::zeros(2), &cfg, &RngStream::new(0)).unwrap();
        assert_eq!(z, dv(&[0.7, -0.3]));
        let cfg = HessInvConfig { iterations: 7, ..cfg };
        approx_hess_inv_vec(&f, &g, &dv(&[0.0]), &DVector::zeros(2), &cfg, &RngStream::new(0)).unwrap();
        assert_eq!((f.evals(), g.evals()), (2 * 8, 3 * 8));
        let bad = HessInvConfig { iterations: 0, ..cfg };
        assert!(approx_hess_inv_vec(&f, &g, &dv(&[0.0]), &DVector::zeros(2), &bad, &RngStream::new(0)).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let (f, g) = diag_problem(dv(&[50.0, 80.0]), dv(&[1.0, 1.0]), 1.0);
        let cfg = HessInvConfig {
            beta: 1.0,
            iterations: 1000,
            smoothing: SmoothingParams::uniform(1e-3),
            z0: None,
        };
        let err = approx_hess_inv_vec(&f, &g, &dv(&[0.0]), &DVector::zeros(2), &cfg, &RngStream::new(0)).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err:?}");
    }

    #[test]
    fn upper_scaling_scales_iterates_exactly() {
        // Linear in F: scaling F by a power of two scales every iterate by it.
        let cfg = HessInvConfig {
            beta: 1e-3,
            iterations: 300,
            smoothing: SmoothingParams::uniform(1e-3),
            z0: None,
        };
        let lin = dv(&[1.0, -0.5, 0.75]);
        let (f1, g1) = diag_problem(dv(&[1.0, 2.0, 3.0]), lin.clone(), 1.0);
        let (f4, g4) = diag_problem(dv(&[1.0, 2.0, 3.0]), lin, 4.0);
        let x = dv(&[0.0]);
        let y = dv(&[0.5, 0.25, -1.0]);
        for iters in [1usize, 10, 300] {
            let cfg = HessInvConfig { iterations: iters, ..cfg.clone() };
            let z1 = approx_hess_inv_vec(&f1, &g1, &x, &y, &cfg, &RngStream::new(9)).unwrap();
            let z4 = approx_hess_inv_vec(&f4, &g4, &x, &y, &cfg, &RngStream::new(9)).unwrap();
            assert_eq!(z4, z1 * 4.0);
        }
    }

    #[test]
    fn schedule_plug_in_values() {
        let cfg = hessinv_schedule(4, 4, 0.1, &HessInvTuning::default()).unwrap();
        assert_eq!(cfg.iterations, 5895);
        assert!(cfg.smoothing.mu1 <= 0.25);
        assert!((cfg.smoothing.mu2 - 1.0 / 8f64.sqrt()).abs() < 1e-12);
        assert_eq!(cfg.smoothing.eta2, cfg.smoothing.mu2);
        assert!((cfg.beta - 0.1 / 256.0).abs() < 1e-15);

        let near_one = hessinv_schedule(4, 4, 0.999_999, &HessInvTuning::default()).unwrap();
        assert!(near_one.iterations >= 1 && near_one.iterations < 10);

        for eps in [0.0, 1.0, -0.5, 2.0, f64::NAN] {
            assert!(hessinv_schedule(4, 4, eps, &HessInvTuning::default()).is_err());
        }
    }

    #[test]
    fn schedule_grows_quadratically_in_total_dimension() {
        let t = |n, m| hessinv_schedule(n, m, 0.1, &HessInvTuning::default()).unwrap().iterations as f64;
        let ratio = t(12, 4) / t(4, 4);
        assert!((3.5..=4.5).contains(&ratio), "{ratio}");
    }
}
