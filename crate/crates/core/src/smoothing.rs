//! Gaussian-smoothing derivative estimators built from function values only.
//!
//! Each estimator averages `N` independent samples. Sample `i` reads its
//! directions from `stream/("sample", i)/("dir", 0)` and its oracle noise from
//! `stream/("sample", i)/("noise", 0)`; every evaluation inside one sample
//! shares that noise substream (common random numbers). Samples are reduced
//! in ascending index order.
//!
//! A zero radius switches off the perturbation of its block: no direction is
//! drawn for it and the block is passed through unchanged.

use std::borrow::Cow;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::oracle::StochasticOracle;
use crate::rng::{sample_gaussian, RngStream};

/// Averaged vector estimate together with its cost.
#[derive(Clone, Debug, PartialEq)]
pub struct GradEstimate {
    pub value: DVector<f64>,
    pub samples: usize,
    pub evals: u64,
}

/// Averaged matrix estimate together with its cost.
#[derive(Clone, Debug, PartialEq)]
pub struct HessEstimate {
    pub value: DMatrix<f64>,
    pub samples: usize,
    pub evals: u64,
}

/// Gaussian directions of one sample; `None` for an unperturbed block.
#[derive(Clone, Debug, PartialEq)]
pub struct Directions {
    pub u: Option<DVector<f64>>,
    pub v: Option<DVector<f64>>,
}

impl Directions {
    /// Draws `u` (length `n`) then `v` (length `m`) from `stream`, skipping
    /// the blocks whose length is `None`.
    pub fn draw(stream: &RngStream, n: Option<usize>, m: Option<usize>) -> Result<Self> {
        let mut rng = stream.rng();
        let u = n.map(|n| sample_gaussian(&mut rng, n)).transpose()?;
        let v = m.map(|m| sample_gaussian(&mut rng, m)).transpose()?;
        Ok(Self { u, v })
    }

    pub fn fixed(u: Option<DVector<f64>>, v: Option<DVector<f64>>) -> Self {
        Self { u, v }
    }
}

/// Substreams of sample `i`: (directions, noise).
pub fn sample_streams(stream: &RngStream, i: u64) -> (RngStream, RngStream) {
    let s = stream.derive("sample", i);
    (s.derive("dir", 0), s.derive("noise", 0))
}

fn shifted<'a>(base: &'a DVector<f64>, dir: Option<&DVector<f64>>, scale: f64) -> Cow<'a, DVector<f64>> {
    match dir {
        Some(d) if scale != 0.0 => {
            let mut p = base.clone();
            p.axpy(scale, d, 1.0);
            Cow::Owned(p)
        }
        _ => Cow::Borrowed(base),
    }
}

/// `Q(x + ηu, y + μv, ζ) − Q(x, y, ζ)`; two evaluations sharing `noise`.
#[allow(clippy::too_many_arguments)]
pub fn forward_difference(
    q: &StochasticOracle,
    x: &DVector<f64>,
    y: &DVector<f64>,
    eta: f64,
    u: Option<&DVector<f64>>,
    mu: f64,
    v: Option<&DVector<f64>>,
    noise: &RngStream,
) -> f64 {
    let xp = shifted(x, u, eta);
    let yp = shifted(y, v, mu);
    q.evaluate(&xp, &yp, noise) - q.evaluate(x, y, noise)
}

/// `Q(x + ηu, y + μv, ζ) + Q(x − ηu, y − μv, ζ) − 2Q(x, y, ζ)`; three
/// evaluations sharing `noise`.
#[allow(clippy::too_many_arguments)]
pub fn central_difference(
    q: &StochasticOracle,
    x: &DVector<f64>,
    y: &DVector<f64>,
    eta: f64,
    u: Option<&DVector<f64>>,
    mu: f64,
    v: Option<&DVector<f64>>,
    noise: &RngStream,
) -> f64 {
    let plus = q.evaluate(&shifted(x, u, eta), &shifted(y, v, mu), noise);
    let minus = q.evaluate(&shifted(x, u, -eta), &shifted(y, v, -mu), noise);
    let center = q.evaluate(x, y, noise);
    plus + minus - 2.0 * center
}

fn check_dims(q: &StochasticOracle, x: &DVector<f64>, y: &DVector<f64>) -> Result<()> {
    if x.len() != q.dim_x() || x.is_empty() {
        return Err(Error::param("x", format!("length {} != oracle dim {}", x.len(), q.dim_x())));
    }
    if y.len() != q.dim_y() || y.is_empty() {
        return Err(Error::param("y", format!("length {} != oracle dim {}", y.len(), q.dim_y())));
    }
    Ok(())
}

fn check_radius(name: &'static str, r: f64, strict: bool) -> Result<()> {
    let ok = r.is_finite() && if strict { r > 0.0 } else { r >= 0.0 };
    if ok {
        Ok(())
    } else {
        Err(Error::param(name, if strict { "must be finite and > 0" } else { "must be finite and >= 0" }))
    }
}

fn check_batch(n: usize) -> Result<()> {
    if n == 0 {
        Err(Error::param("batch", "at least one sample is required"))
    } else {
        Ok(())
    }
}

fn finite(value: f64, context: &'static str, index: u64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite { context, index })
    }
}

fn need<'a>(d: &'a Option<DVector<f64>>, what: &'static str) -> Result<&'a DVector<f64>> {
    d.as_ref().ok_or(Error::param(what, "direction required for a perturbed block"))
}

fn active(r: f64, dim: usize) -> Option<usize> {
    (r > 0.0).then_some(dim)
}

// ---------------------------------------------------------------------------
// single-sample kernels

/// One sample of the x-gradient estimator: `[Q(x+ηu, y+μv) − Q(x, y)]/η · u`.
#[allow(clippy::too_many_arguments)]
pub fn grad_x_sample(
    q: &StochasticOracle,
    x: &DVector<f64>,
    y: &DVector<f64>,
    eta: f64,
    mu: f64,
    dirs: &Directions,
    noise: &RngStream,
    index: u64,
) -> Result<DVector<f64>> {
    let u = need(&dirs.u, "u")?;
    let d = forward_difference(q, x, y, eta, Some(u), mu, dirs.v.as_ref(), noise);
    Ok(u * (finite(d, "zo_grad_x", index)? / eta))
}

/// One sample of the y-gradient estimator: `[Q(x+ηu, y+μv) − Q(x, y)]/μ · v`.
#[allow(clippy::too_many_arguments)]
pub fn grad_y_sample(
    q: &StochasticOracle,
    x: &DVector<f64>,
    y: &DVector<f64>,
    eta: f64,
    mu: f64,
    dirs: &Directions,
    noise: &RngStream,
    index: u64,
) -> Result<DVector<f64>> {
    let v = need(&dirs.v, "v")?;
    let d = forward_difference(q, x, y, eta, dirs.u.as_ref(), mu, Some(v), noise);
    Ok(v * (finite(d, "zo_grad_y", index)? / mu))
}

/// One sample of the mixed Hessian estimator: `u vᵀ · Δ²Q / (2ημ)`.
#[allow(clippy::too_many_arguments)]
pub fn hess_xy_sample(
    q: &StochasticOracle,
    x: &DVector<f64>,
    y: &DVector<f64>,
    eta: f64,
    mu: f64,
    dirs: &Directions,
    noise: &RngStream,
    index: u64,
) -> Result<DMatrix<f64>> {
    let u = need(&dirs.u, "u")?;
    let v = need(&dirs.v, "v")?;
    let c = central_difference(q, x, y, eta, Some(u), mu, Some(v), noise);
    let c = finite(c, "zo_hess_xy", index)? / (2.0 * eta * mu);
    Ok(u * v.transpose() * c)
}

/// One sample of the x-block Hessian estimator: `(u uᵀ − I) · Δ²Q / (2η²)`.
#[allow(clippy::too_many_arguments)]
pub fn hess_xx_sample(
    q: &StochasticOracle,
    x: &DVector<f64>,
    y: &DVector<f64>,
    eta: f64,
    mu: f64,
    dirs: &Directions,
    noise: &RngStream,
    index: u64,
) -> Result<DMatrix<f64>> {
    let u = need(&dirs.u, "u")?;
    let c = central_difference(q, x, y, eta, Some(u), mu, dirs.v.as_ref(), noise);
    let c = finite(c, "zo_hess_xx", index)? / (2.0 * eta * eta);
    let mut h = u * u.transpose();
    for i in 0..h.nrows() {
        h[(i, i)] -= 1.0;
    }
    Ok(h * c)
}

/// `(v vᵀ − I) · Δ²Q / (2μ²) · z` without forming the matrix.
///
/// The central difference is taken at `(x ± ηu, y ± μv)`; `u` may be absent
/// when `eta == 0`.
#[allow(clippy::too_many_arguments)]
pub fn hess_yy_apply_sample(
    q: &StochasticOracle,
    x: &DVector<f64>,
    y: &DVector<f64>,
    eta: f64,
    mu: f64,
    dirs: &Directions,
    z: &DVector<f64>,
    noise: &RngStream,
    index: u64,
) -> Result<DVector<f64>> {
    let v = need(&dirs.v, "v")?;
    let c = central_difference(q, x, y, eta, dirs.u.as_ref(), mu, Some(v), noise);
    let c = finite(c, "zo_hess_yy_apply", index)? / (2.0 * mu * mu);
    let vz = v.dot(z);
    let mut out = v * (c * vz);
    out.axpy(-c, z, 1.0);
    Ok(out)
}

// ---------------------------------------------------------------------------
// minibatch estimators

/// x-gradient estimator averaged over `n_samples`; costs `2N` evaluations.
pub fn zo_grad_x(
    q: &StochasticOracle,
    x: &DVector<f64>,
    y: &DVector<f64>,
    eta: f64,
    mu: f64,
    n_samples: usize,
    stream: &RngStream,
) -> Result<GradEstimate> {
    check_dims(q, x, y)?;
    check_radius("eta", eta, true)?;
    check_radius("mu", mu, false)?;
    check_batch(n_samples)?;
    let mut acc = DVector::zeros(x.len());
    for i in 0..n_samples as u64 {
        let (ds, ns) = sample_streams(stream, i);
        let dirs = Directions::draw(&ds, Some(x.len()), active(mu, y.len()))?;
        acc += grad_x_sample(q, x, y, eta, mu, &dirs, &ns, i)?;
    }
    Ok(GradEstimate {
        value: acc / n_samples as f64,
        samples: n_samples,
        evals: 2 * n_samples as u64,
    })
}

/// y-gradient estimator averaged over `n_samples`; costs `2N` evaluations.
/// With `eta == 0` the x-block is left unperturbed.
pub fn zo_grad_y(
    q: &StochasticOracle,
    x: &DVector<f64>,
    y: &DVector<f64>,
    eta: f64,
    mu: f64,
    n_samples: usize,
    stream: &RngStream,
) -> Result<GradEstimate> {
    check_dims(q, x, y)?;
    check_radius("eta", eta, false)?;
    check_radius("mu", mu, true)?;
    check_batch(n_samples)?;
    let mut acc = DVector::zeros(y.len());
    for i in 0..n_samples as u64 {
        let (ds, ns) = sample_streams(stream, i);
        let dirs = Directions::draw(&ds, active(eta, x.len()), Some(y.len()))?;
        acc += grad_y_sample(q, x, y, eta, mu, &dirs, &ns, i)?;
    }
    Ok(GradEstimate {
        value: acc / n_samples as f64,
        samples: n_samples,
        evals: 2 * n_samples as u64,
    })
}

/// Mixed Hessian estimator (n×m); costs `3N` evaluations.
pub fn zo_hess_xy(
    q: &StochasticOracle,
    x: &DVector<f64>,
    y: &DVector<f64>,
    eta: f64,
    mu: f64,
    n_samples: usize,
    stream: &RngStream,
) -> Result<HessEstimate> {
    check_dims(q, x, y)?;
    check_radius("eta", eta, true)?;
    check_radius("mu", mu, true)?;
    check_batch(n_samples)?;
    let mut acc = DMatrix::zeros(x.len(), y.len());
    for i in 0..n_samples as u64 {
        let (ds, ns) = sample_streams(stream, i);
        let dirs = Directions::draw(&ds, Some(x.len()), Some(y.len()))?;
        let u = need(&dirs.u, "u")?;
        let v = need(&dirs.v, "v")?;
        let c = central_difference(q, x, y, eta, Some(u), mu, Some(v), &ns);
        let c = finite(c, "zo_hess_xy", i)? / (2.0 * eta * mu);
        acc.ger(c, u, v, 1.0);
    }
    Ok(HessEstimate {
        value: acc / n_samples as f64,
        samples: n_samples,
        evals: 3 * n_samples as u64,
    })
}

/// x-block Hessian estimator (n×n); costs `3N` evaluations.
pub fn zo_hess_xx(
    q: &StochasticOracle,
    x: &DVector<f64>,
    y: &DVector<f64>,
    eta: f64,
    mu: f64,
    n_samples: usize,
    stream: &RngStream,
) -> Result<HessEstimate> {
    check_dims(q, x, y)?;
    check_radius("eta", eta, true)?;
    check_radius("mu", mu, false)?;
    check_batch(n_samples)?;
    let mut acc = DMatrix::zeros(x.len(), x.len());
    for i in 0..n_samples as u64 {
        let (ds, ns) = sample_streams(stream, i);
        let dirs = Directions::draw(&ds, Some(x.len()), active(mu, y.len()))?;
        acc += hess_xx_sample(q, x, y, eta, mu, &dirs, &ns, i)?;
    }
    Ok(HessEstimate {
        value: acc / n_samples as f64,
        samples: n_samples,
        evals: 3 * n_samples as u64,
    })
}

/// Single-sample y-block Hessian estimate applied to `z`; costs 3
/// evaluations and O(n + m) arithmetic.
#[allow(clippy::too_many_arguments)]
pub fn zo_hess_yy_apply(
    q: &StochasticOracle,
    x: &DVector<f64>,
    y: &DVector<f64>,
    eta: f64,
    mu: f64,
    z: &DVector<f64>,
    stream: &RngStream,
) -> Result<GradEstimate> {
    check_dims(q, x, y)?;
    check_radius("eta2", eta, false)?;
    check_radius("mu2", mu, true)?;
    if z.len() != y.len() {
        return Err(Error::param("z", "length must match y"));
    }
    let (ds, ns) = sample_streams(stream, 0);
    let dirs = Directions::draw(&ds, active(eta, x.len()), Some(y.len()))?;
    let value = hess_yy_apply_sample(q, x, y, eta, mu, &dirs, z, &ns, 0)?;
    Ok(GradEstimate {
        value,
        samples: 1,
        evals: 3,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::{Arc, Mutex};

    use super::*;
    use crate::oracle::NoisyFunction;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    fn e(i: usize, n: usize) -> DVector<f64> {
        let mut v = DVector::zeros(n);
        v[i] = 1.0;
        v
    }

    fn rel_close(a: &DVector<f64>, b: &DVector<f64>, tol: f64) -> bool {
        (a - b).norm() <= tol * (1.0 + b.norm())
    }

    #[test]
    fn constant_oracle_gives_zero_everywhere() {
        let q = StochasticOracle::from_fn(3, 2, |_, _, _| 4.25);
        let x = dv(&[0.3, -1.0, 2.0]);
        let y = dv(&[1.0, 1.5]);
        let s = RngStream::new(5);
        assert_eq!(zo_grad_x(&q, &x, &y, 0.1, 0.2, 7, &s).unwrap().value, DVector::zeros(3));
        assert_eq!(zo_grad_y(&q, &x, &y, 0.1, 0.2, 7, &s).unwrap().value, DVector::zeros(2));
        assert_eq!(zo_hess_xy(&q, &x, &y, 0.1, 0.2, 7, &s).unwrap().value, DMatrix::zeros(3, 2));
        assert_eq!(zo_hess_xx(&q, &x, &y, 0.1, 0.2, 7, &s).unwrap().value, DMatrix::zeros(3, 3));
        let z = dv(&[1.0, -2.0]);
        assert_eq!(zo_hess_yy_apply(&q, &x, &y, 0.1, 0.2, &z, &s).unwrap().value, DVector::zeros(2));
    }

    #[test]
    fn eval_counts_are_exact() {
        let q = StochasticOracle::from_fn(2, 3, |x, y, _| x.norm_squared() + y.sum());
        let x = dv(&[0.1, 0.2]);
        let y = dv(&[1.0, 2.0, 3.0]);
        let s = RngStream::new(1);
        let mut expected = 0;
        let est = zo_grad_x(&q, &x, &y, 0.1, 0.0, 5, &s).unwrap();
        expected += 10;
        assert_eq!((est.evals, q.evals()), (10, expected));
        let est = zo_grad_y(&q, &x, &y, 0.0, 0.1, 4, &s).unwrap();
        expected += 8;
        assert_eq!((est.evals, q.evals()), (8, expected));
        let est = zo_hess_xy(&q, &x, &y, 0.1, 0.1, 3, &s).unwrap();
        expected += 9;
        assert_eq!((est.evals, q.evals()), (9, expected));
        let est = zo_hess_xx(&q, &x, &y, 0.1, 0.1, 6, &s).unwrap();
        expected += 18;
        assert_eq!((est.evals, q.evals()), (18, expected));
        let est = zo_hess_yy_apply(&q, &x, &y, 0.1, 0.1, &y, &s).unwrap();
        expected += 3;
        assert_eq!((est.evals, q.evals()), (3, expected));
    }

    #[test]
    fn forward_difference_exact_on_linear() {
        let a = dv(&[2.0, -3.0, 0.5]);
        let b = dv(&[1.0, 4.0]);
        let (a2, b2) = (a.clone(), b.clone());
        let q = StochasticOracle::from_fn(3, 2, move |x, y, _| a2.dot(x) + b2.dot(y));
        let x = dv(&[0.4, 0.1, -0.7]);
        let y = dv(&[0.2, 0.9]);
        let noise = RngStream::new(0);

        // stub u = e1: a1·e1
        let dirs = Directions::fixed(Some(e(0, 3)), None);
        let g = grad_x_sample(&q, &x, &y, 1e-3, 0.0, &dirs, &noise, 0).unwrap();
        assert!(rel_close(&g, &(e(0, 3) * a[0]), 1e-10), "{g}");

        // stub v = e2 with eta = 0: b2·e2
        let dirs = Directions::fixed(None, Some(e(1, 2)));
        let g = grad_y_sample(&q, &x, &y, 0.0, 1e-3, &dirs, &noise, 0).unwrap();
        assert!(rel_close(&g, &(e(1, 2) * b[1]), 1e-10), "{g}");

        // drawn u: <a,u> u
        let (ds, ns) = sample_streams(&RngStream::new(3), 0);
        let dirs = Directions::draw(&ds, Some(3), None).unwrap();
        let u = dirs.u.clone().unwrap();
        let g = grad_x_sample(&q, &x, &y, 0.37, 0.0, &dirs, &ns, 0).unwrap();
        assert!(rel_close(&g, &(&u * a.dot(&u)), 1e-10));
    }

    #[test]
    fn central_difference_exact_on_bilinear_and_quadratic() {
        // Q = xᵀ A y with A = I: stub u = v = e1 gives e1 e1ᵀ.
        let q = StochasticOracle::from_fn(2, 2, |x, y, _| x.dot(y));
        let x = dv(&[0.3, -0.2]);
        let y = dv(&[1.1, 0.4]);
        let noise = RngStream::new(0);
        let dirs = Directions::fixed(Some(e(0, 2)), Some(e(0, 2)));
        let h = hess_xy_sample(&q, &x, &y, 0.3, 0.7, &dirs, &noise, 0).unwrap();
        let mut expected = DMatrix::zeros(2, 2);
        expected[(0, 0)] = 1.0;
        assert!((h - expected).norm() < 1e-10);

        // Q = ½ xᵀ H x: per-sample (uuᵀ − I)(uᵀHu)/2.
        let hdiag = dv(&[1.0, 2.0, 3.0]);
        let hd = hdiag.clone();
        let q = StochasticOracle::from_fn(3, 1, move |x, _, _| 0.5 * x.component_mul(x).dot(&hd));
        let x = dv(&[0.5, -1.0, 0.25]);
        let y = dv(&[0.0]);
        let u = dv(&[0.3, -1.2, 2.0]);
        let dirs = Directions::fixed(Some(u.clone()), None);
        let h = hess_xx_sample(&q, &x, &y, 0.05, 0.0, &dirs, &noise, 0).unwrap();
        let quad = u.component_mul(&u).dot(&hdiag);
        let expected = (&u * u.transpose() - DMatrix::identity(3, 3)) * (quad / 2.0);
        assert!((&h - &expected).norm() <= 1e-9 * expected.norm(), "{h} vs {expected}");
    }

    #[test]
    fn hess_yy_apply_matches_dense() {
        // Q = ½ yᵀy; compare the matrix-free product with a dense evaluation.
        let q = StochasticOracle::from_fn(2, 4, |_, y, _| 0.5 * y.norm_squared());
        let x = dv(&[0.0, 0.0]);
        let y = dv(&[0.5, 1.0, -0.5, 2.0]);
        let z = dv(&[1.0, -1.0, 0.5, 0.25]);
        let (ds, ns) = sample_streams(&RngStream::new(11), 0);
        let dirs = Directions::draw(&ds, None, Some(4)).unwrap();
        let v = dirs.v.clone().unwrap();
        let mu = 1e-2;
        let out = hess_yy_apply_sample(&q, &x, &y, 0.0, mu, &dirs, &z, &ns, 0).unwrap();
        let c = central_difference(&q, &x, &y, 0.0, None, mu, Some(&v), &ns) / (2.0 * mu * mu);
        let dense = (&v * v.transpose() - DMatrix::identity(4, 4)) * c * &z;
        assert!((&out - &dense).norm() <= 1e-12 * (1.0 + dense.norm()));
        // and the scalar equals ‖v‖²/2 up to rounding
        assert!((c - v.norm_squared() / 2.0).abs() < 1e-8);
    }

    #[test]
    fn invalid_parameters_rejected() {
        let q = StochasticOracle::from_fn(1, 1, |x, _, _| x[0]);
        let x = dv(&[0.0]);
        let s = RngStream::new(0);
        assert!(matches!(zo_grad_x(&q, &x, &x, 0.0, 0.1, 1, &s), Err(Error::InvalidParameter { .. })));
        assert!(matches!(zo_grad_x(&q, &x, &x, -1.0, 0.1, 1, &s), Err(Error::InvalidParameter { .. })));
        assert!(zo_grad_x(&q, &x, &x, 0.1, -0.1, 1, &s).is_err());
        assert!(zo_grad_x(&q, &x, &x, 0.1, 0.1, 0, &s).is_err());
        assert!(zo_grad_y(&q, &x, &x, 0.1, 0.0, 1, &s).is_err());
        assert!(zo_hess_xy(&q, &x, &x, 0.1, 0.0, 1, &s).is_err());
        assert!(zo_hess_xx(&q, &x, &x, 0.0, 0.1, 1, &s).is_err());
        assert!(zo_hess_yy_apply(&q, &x, &x, 0.1, 0.0, &x, &s).is_err());
        assert!(zo_grad_x(&q, &dv(&[0.0, 1.0]), &x, 0.1, 0.1, 1, &s).is_err());
        assert_eq!(q.evals(), 0);
    }

    #[test]
    fn non_finite_output_reports_sample() {
        let q = StochasticOracle::from_fn(1, 1, |x, _, _| if x[0] > 0.0 { f64::NAN } else { 0.0 });
        let x = dv(&[0.0]);
        let err = zo_grad_x(&q, &x, &x, 0.1, 0.0, 50, &RngStream::new(3)).unwrap_err();
        match err {
            Error::NonFinite { context, index } => {
                assert_eq!(context, "zo_grad_x");
                assert!(index < 50);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_mu_skips_direction_draw() {
        // With mu = 0 the y-block must be passed through untouched.
        let q = StochasticOracle::from_fn(2, 2, |_, y, _| {
            assert_eq!(y.as_slice(), &[1.0, 2.0]);
            0.0
        });
        let y = dv(&[1.0, 2.0]);
        zo_grad_x(&q, &dv(&[0.0, 0.0]), &y, 0.1, 0.0, 3, &RngStream::new(0)).unwrap();
        zo_hess_xx(&q, &dv(&[0.0, 0.0]), &y, 0.1, 0.0, 3, &RngStream::new(0)).unwrap();
    }

    struct Recorder {
        seen: Mutex<Vec<Vec<(String, u64)>>>,
    }

    impl NoisyFunction for Recorder {
        fn dim_x(&self) -> usize {
            2
        }
        fn dim_y(&self) -> usize {
            2
        }
        fn evaluate(&self, x: &DVector<f64>, _: &DVector<f64>, noise: &RngStream) -> f64 {
            let path = noise.path().iter().map(|(l, i)| (l.to_string(), *i)).collect();
            self.seen.lock().unwrap().push(path);
            x.sum()
        }
    }

    #[test]
    fn one_noise_substream_per_sample() {
        let rec = Arc::new(Recorder { seen: Mutex::new(Vec::new()) });
        let q = StochasticOracle::new(rec.clone());
        let x = dv(&[0.0, 0.0]);
        let stream = RngStream::new(1).derive("hess", 9);
        zo_hess_xy(&q, &x, &x, 0.1, 0.1, 4, &stream).unwrap();
        let seen = rec.seen.lock().unwrap();
        assert_eq!(seen.len(), 12);
        for (i, chunk) in seen.chunks(3).enumerate() {
            assert!(chunk.iter().all(|p| p == &chunk[0]));
            let expected = vec![
                ("hess".to_string(), 9),
                ("sample".to_string(), i as u64),
                ("noise".to_string(), 0),
            ];
            assert_eq!(chunk[0], expected);
        }
    }

    #[test]
    fn grad_x_monte_carlo_half_norm() {
        // ½‖x‖², noiseless, N = 1e5, eta = 1e-3.
        let n = 5;
        let q = StochasticOracle::from_fn(n, 1, |x, _, _| 0.5 * x.norm_squared());
        let x0 = dv(&[1.0, -0.5, 0.25, 2.0, -1.5]);
        let est = zo_grad_x(&q, &x0, &dv(&[0.0]), 1e-3, 0.0, 100_000, &RngStream::new(77)).unwrap();
        let tol = 0.05 * (x0.norm() + 1.0) * (n as f64).sqrt();
        assert!((&est.value - &x0).norm() <= tol, "{}", (&est.value - &x0).norm());
    }

    #[test]
    fn grad_y_monte_carlo_diag_quadratic() {
        let m = 4;
        let b = dv(&[1.0, 2.0, 3.0, 4.0]);
        let bb = b.clone();
        let q = StochasticOracle::from_fn(1, m, move |_, y, _| 0.5 * y.component_mul(y).dot(&bb));
        let y0 = DVector::from_element(m, 1.0);
        let est = zo_grad_y(&q, &dv(&[0.0]), &y0, 0.0, 1e-3, 100_000, &RngStream::new(78)).unwrap();
        let target = b.component_mul(&y0);
        let tol = 0.05 * target.norm() * (m as f64).sqrt();
        assert!((&est.value - &target).norm() <= tol);
    }

    #[test]
    fn hess_xy_monte_carlo_random_bilinear() {
        let a = DMatrix::from_row_slice(4, 3, &[
            0.5, -1.0, 0.3, 1.2, 0.0, -0.7, 0.25, 0.8, 1.0, -0.4, 0.6, 0.1,
        ]);
        let aa = a.clone();
        let q = StochasticOracle::from_fn(4, 3, move |x, y, _| (x.transpose() * &aa * y)[0]);
        let x = dv(&[0.1, 0.2, -0.3, 0.4]);
        let y = dv(&[1.0, -1.0, 0.5]);
        let est = zo_hess_xy(&q, &x, &y, 1e-2, 1e-2, 200_000, &RngStream::new(79)).unwrap();
        let tol = 0.05 * (1.0 + a.norm()) * 12f64.sqrt();
        assert!((&est.value - &a).norm() <= tol, "{}", (&est.value - &a).norm());
    }

    #[test]
    fn hess_xx_monte_carlo_diag() {
        let h = dv(&[1.0, 2.0, 3.0]);
        let hh = h.clone();
        let q = StochasticOracle::from_fn(3, 1, move |x, _, _| 0.5 * x.component_mul(x).dot(&hh));
        let x = dv(&[0.2, -0.1, 0.3]);
        let est = zo_hess_xx(&q, &x, &dv(&[0.0]), 1e-2, 0.0, 500_000, &RngStream::new(80)).unwrap();
        let target = DMatrix::from_diagonal(&h);
        assert!((&est.value - &target).norm() <= 0.1 * target.norm() * 3.0);
    }

    #[test]
    fn hess_yy_apply_monte_carlo() {
        let b = dv(&[1.0, 2.0, 3.0]);
        let bb = b.clone();
        let q = StochasticOracle::from_fn(1, 3, move |_, y, _| 0.5 * y.component_mul(y).dot(&bb));
        let x = dv(&[0.0]);
        let y = dv(&[0.1, 0.2, 0.3]);
        let z = dv(&[1.0, -0.5, 0.25]);
        let root = RngStream::new(81);
        let samples = 200_000;
        let mut acc = DVector::zeros(3);
        for i in 0..samples {
            acc += zo_hess_yy_apply(&q, &x, &y, 0.0, 1e-2, &z, &root.derive("rep", i)).unwrap().value;
        }
        let mean = acc / samples as f64;
        let target = b.component_mul(&z);
        assert!((&mean - &target).norm() <= 0.05 * target.norm() * 3.0);
    }
}
