//! Independent reference checks: finite differences, Monte-Carlo means,
//! closed-form moment bounds and the smoothed-minimizer gap.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::{make_quadratic, QuadraticBilevel, QuadraticFamily};
use crate::rng::{sample_gaussian, RngStream};
use crate::smoothing::{zo_grad_x, zo_grad_y, zo_hess_xx, zo_hess_xy, zo_hess_yy_apply};
use crate::oracle::StochasticOracle;

/// Default statistical gate, in standard errors.
pub const DEFAULT_Z: f64 = 5.0;
/// Relative slack granted to measured moments against theoretical bounds.
pub const BOUND_SLACK: f64 = 0.2;

/// Central differences per coordinate.
pub fn fd_grad(func: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>, h: f64) -> DVector<f64> {
    let mut probe = x.clone();
    DVector::from_fn(x.len(), |i, _| {
        let xi = probe[i];
        probe[i] = xi + h;
        let plus = func(&probe);
        probe[i] = xi - h;
        let minus = func(&probe);
        probe[i] = xi;
        (plus - minus) / (2.0 * h)
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub samples: usize,
    pub mean: Vec<f64>,
    /// `‖mean − target‖`.
    pub error: f64,
    /// Norm of the per-coordinate standard errors.
    pub std_error: f64,
    /// Mean of `‖draw‖²`.
    pub second_moment: f64,
    pub z: f64,
    pub pass: bool,
}

/// Draws `samples` estimates (`estimator(i)` for `i = 0..M`) and tests
/// `‖mean − target‖ ≤ z · SE`.
pub fn mc_mean_check(
    mut estimator: impl FnMut(u64) -> Result<DVector<f64>>,
    target: &DVector<f64>,
    samples: usize,
    z: f64,
) -> Result<McReport> {
    if samples < 100 {
        return Err(Error::param("samples", "must be >= 100"));
    }
    let d = target.len();
    let mut sum = DVector::zeros(d);
    let mut sumsq = DVector::zeros(d);
    let mut second = 0.0;
    for i in 0..samples as u64 {
        let e = estimator(i)?;
        if e.len() != d {
            return Err(Error::param("estimator", format!("draw length {} != {d}", e.len())));
        }
        second += e.norm_squared();
        sumsq += e.component_mul(&e);
        sum += e;
    }
    let mf = samples as f64;
    let mean = &sum / mf;
    let var = (sumsq / mf - mean.component_mul(&mean)).map(|v| v.max(0.0) * mf / (mf - 1.0));
    let std_error = (var.sum() / mf).sqrt();
    let error = (&mean - target).norm();
    // a deterministic estimator has zero spread; allow rounding only
    let tol = (z * std_error).max(1e-12 * (1.0 + target.norm()));
    Ok(McReport {
        samples,
        mean: mean.iter().copied().collect(),
        error,
        std_error,
        second_moment: second / mf,
        z,
        pass: error <= tol,
    })
}

/// Inputs of the first-order moment bounds. `sigma2` is the derivative
/// noise variance, the norms are of the true partial gradients.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradBoundInputs {
    pub n: usize,
    pub m: usize,
    pub eta: f64,
    pub mu: f64,
    pub batch: usize,
    pub l1: f64,
    pub sigma2: f64,
    pub grad_x_sq: f64,
    pub grad_y_sq: f64,
}

/// Bound on `E‖∇̃_x Q‖²` for the x-gradient estimator.
pub fn grad_x_bound(p: &GradBoundInputs) -> f64 {
    let (n, m) = (p.n as f64, p.m as f64);
    let smooth = p.l1.powi(2) * (p.eta.powi(2) * (n + 6.0).powi(3) + p.mu.powi(4) / p.eta.powi(2) * n * (m + 4.0).powi(2));
    let direct = 4.0 * (n + 2.0) * (p.sigma2 + p.grad_x_sq);
    let cross = 4.0 * p.mu.powi(2) / p.eta.powi(2) * n * (p.sigma2 + p.grad_y_sq);
    (smooth + direct + cross) / p.batch as f64
}

/// Bound on `E‖∇̃_y Q‖²`, the mirror image of [`grad_x_bound`].
pub fn grad_y_bound(p: &GradBoundInputs) -> f64 {
    let (n, m) = (p.n as f64, p.m as f64);
    let smooth = if p.eta == 0.0 {
        p.l1.powi(2) * p.mu.powi(2) * (m + 6.0).powi(3)
    } else {
        p.l1.powi(2) * (p.mu.powi(2) * (m + 6.0).powi(3) + p.eta.powi(4) / p.mu.powi(2) * m * (n + 4.0).powi(2))
    };
    let cross = 4.0 * p.eta.powi(2) / p.mu.powi(2) * m * (p.sigma2 + p.grad_x_sq);
    let direct = 4.0 * (m + 2.0) * (p.sigma2 + p.grad_y_sq);
    (smooth + cross + direct) / p.batch as f64
}

/// Inputs of the second-order bounds: Frobenius norms squared of the true
/// Hessian blocks, the Hessian Lipschitz constant and the noise variance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HessBoundInputs {
    pub n: usize,
    pub m: usize,
    pub eta: f64,
    pub mu: f64,
    pub batch: usize,
    pub l2: f64,
    pub sigma2: f64,
    pub hxx_sq: f64,
    pub hxy_sq: f64,
    pub hyy_sq: f64,
    pub theta_sq: f64,
}

/// Bound on `E‖(∇̃²_xy Q − ∇²_xy q_{η,μ}) θ‖²`.
pub fn hess_xy_bound(p: &HessBoundInputs) -> f64 {
    let (n, m) = (p.n as f64, p.m as f64);
    let (e, u) = (p.eta, p.mu);
    let smooth = 8.0 * p.l2.powi(2) * (e.powi(4) / u.powi(2) * (n + 8.0).powi(4) + 2.0 * u.powi(4) / e.powi(2) * n * (m + 12.0).powi(3));
    let blocks = 6.0 * e.powi(2) / u.powi(2) * (n + 4.0) * (n + 2.0) * (p.sigma2 + p.hxx_sq)
        + 36.0 * (n + 2.0) * (p.sigma2 + p.hxy_sq)
        + 30.0 * u.powi(2) / e.powi(2) * n * (m + 2.0) * (p.sigma2 + p.hyy_sq);
    (smooth + blocks) * p.theta_sq / p.batch as f64
}

/// Bound on `E‖∇̃²_xx Q θ‖²`; noise enters each block like in
/// [`hess_xy_bound`].
pub fn hess_xx_bound(p: &HessBoundInputs) -> f64 {
    let (n, m) = (p.n as f64, p.m as f64);
    let (e, u) = (p.eta, p.mu);
    let smooth = 2.0 * p.l2.powi(2) * (2.0 * e.powi(2) * (n + 16.0).powi(4) + u.powi(6) / e.powi(4) * (m + 6.0).powi(3) * (n + 3.0));
    let blocks = 7.5 * (n + 6.0).powi(2) * (p.sigma2 + p.hxx_sq)
        + 3.0 * u.powi(2) / e.powi(2) * (3.0 * n + 13.0) * (p.sigma2 + p.hxy_sq)
        + 1.5 * u.powi(4) / e.powi(4) * (m + 2.0) * (n + 3.0) * (p.sigma2 + p.hyy_sq);
    (smooth + blocks) * p.theta_sq / p.batch as f64
}

/// Bound on `E‖∇̃²_yy Q θ‖²`: [`hess_xx_bound`] with the blocks swapped.
/// Terms carrying `η` vanish when the x-block is unperturbed.
pub fn hess_yy_bound(p: &HessBoundInputs) -> f64 {
    let swapped = HessBoundInputs {
        n: p.m,
        m: p.n,
        eta: p.mu,
        mu: p.eta,
        hxx_sq: p.hyy_sq,
        hyy_sq: p.hxx_sq,
        ..*p
    };
    if p.eta == 0.0 {
        let m = p.m as f64;
        let smooth = 4.0 * p.l2.powi(2) * p.mu.powi(2) * (m + 16.0).powi(4);
        let block = 7.5 * (m + 6.0).powi(2) * (p.sigma2 + p.hyy_sq);
        return (smooth + block) * p.theta_sq / p.batch as f64;
    }
    hess_xx_bound(&swapped)
}

/// One line of a validation report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub name: String,
    pub measured: f64,
    pub target: f64,
    pub pass: bool,
}

/// `measured ≤ (1 + BOUND_SLACK) · bound`; a non-finite bound fails, which
/// flags a degenerate parameter regime.
pub fn bound_audit(name: &str, measured: f64, bound: f64) -> CheckRecord {
    CheckRecord {
        name: name.to_string(),
        measured,
        target: bound,
        pass: bound.is_finite() && measured.is_finite() && measured <= (1.0 + BOUND_SLACK) * bound,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    /// Largest `‖y*_{η,μ}(x) − y*(x)‖²` over the probes.
    pub gap_sq: f64,
    /// `(2 L₁g/λ_g)(η² n + μ² m)`.
    pub bound: f64,
    pub pass: bool,
}

/// `(2 L₁g/λ_g)(η² n + μ² m)`.
pub fn smoothed_gap_bound(l1g: f64, lam_g: f64, eta: f64, mu: f64, n: usize, m: usize) -> f64 {
    2.0 * l1g / lam_g * (eta * eta * n as f64 + mu * mu * m as f64)
}

/// Expectation of `q(x + ηu, y + μv)` by symmetric sigma points, exact for
/// quadratics.
fn smoothed_value(q: &QuadraticBilevel, x: &DVector<f64>, y: &DVector<f64>, eta: f64, mu: f64) -> f64 {
    let (n, m) = (x.len(), y.len());
    let d = (n + m) as f64;
    let r = d.sqrt();
    let mut acc = 0.0;
    let (mut xp, mut yp) = (x.clone(), y.clone());
    for i in 0..n + m {
        for s in [1.0, -1.0] {
            if i < n {
                xp[i] = x[i] + s * r * eta;
            } else {
                yp[i - n] = y[i - n] + s * r * mu;
            }
            acc += q.g_value(&xp, &yp);
            if i < n {
                xp[i] = x[i];
            } else {
                yp[i - n] = y[i - n];
            }
        }
    }
    acc / (2.0 * d)
}

/// Minimizes the smoothed lower objective by gradient descent on central
/// differences and compares with `y*(x)` at each probe.
pub fn smoothed_gap_check(q: &QuadraticBilevel, eta: f64, mu: f64, probes: &[DVector<f64>]) -> GapReport {
    let consts = q.constants(1.0);
    let step = 1.0 / consts.l1g;
    let mut gap_sq: f64 = 0.0;
    for x in probes {
        let mut y = DVector::zeros(q.m());
        for _ in 0..100_000 {
            let grad = fd_grad(|y| smoothed_value(q, x, y, eta, mu), &y, 1e-3);
            if grad.norm() < 1e-11 {
                break;
            }
            y.axpy(-step, &grad, 1.0);
        }
        gap_sq = gap_sq.max((y - q.y_star(x)).norm_squared());
    }
    let bound = smoothed_gap_bound(consts.l1g, consts.lam_g, eta, mu, q.n(), q.m());
    GapReport {
        gap_sq,
        bound,
        pass: gap_sq <= 1e-12 && gap_sq <= bound.max(1e-12),
    }
}

fn flat(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Quadratic test oracle `q(x, y) = ½xᵀAx + xᵀBy + ½yᵀCy + aᵀx + bᵀy`.
struct QuadOracle {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    ga: DVector<f64>,
    gb: DVector<f64>,
}

impl QuadOracle {
    fn random(n: usize, m: usize, stream: &RngStream) -> Result<Self> {
        let mut rng = stream.rng();
        let mut mat = |r: usize, c: usize| -> Result<DMatrix<f64>> {
            let v = sample_gaussian(&mut rng, r * c)?;
            Ok(DMatrix::from_column_slice(r, c, v.as_slice()) * 0.5)
        };
        let a = mat(n, n)?;
        let c = mat(m, m)?;
        Ok(Self {
            a: (&a + a.transpose()) * 0.5,
            b: mat(n, m)?,
            c: (&c + c.transpose()) * 0.5,
            ga: DVector::from_column_slice(mat(n, 1)?.as_slice()),
            gb: DVector::from_column_slice(mat(m, 1)?.as_slice()),
        })
    }

    fn oracle(&self) -> StochasticOracle {
        let (a, b, c, ga, gb) = (self.a.clone(), self.b.clone(), self.c.clone(), self.ga.clone(), self.gb.clone());
        let (n, m) = (a.nrows(), c.nrows());
        StochasticOracle::from_fn(n, m, move |x, y, _| {
            0.5 * x.dot(&(&a * x)) + x.dot(&(&b * y)) + 0.5 * y.dot(&(&c * y)) + ga.dot(x) + gb.dot(y)
        })
    }

    fn grad_x(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * y + &self.ga
    }

    fn grad_y(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        self.b.tr_mul(x) + &self.c * y + &self.gb
    }
}

/// Monte-Carlo mean and second-moment checks of every estimator on a
/// random quadratic with `n = m = dim`, `samples` draws each.
pub fn estimator_suite(dim: usize, samples: usize, seed: u64) -> Result<Vec<CheckRecord>> {
    let root = RngStream::new(seed);
    let quad = QuadOracle::random(dim, dim, &root.derive("instance", 0))?;
    let q = quad.oracle();
    let mut rng = root.derive("point", 0).rng();
    let x = sample_gaussian(&mut rng, dim)?;
    let y = sample_gaussian(&mut rng, dim)?;
    let theta = sample_gaussian(&mut rng, dim)?;
    let (eta, mu) = (1e-2, 1e-2);
    let gx = quad.grad_x(&x, &y);
    let gy = quad.grad_y(&x, &y);
    let gb = GradBoundInputs {
        n: dim,
        m: dim,
        eta,
        mu,
        batch: 1,
        l1: 0.0,
        sigma2: 0.0,
        grad_x_sq: gx.norm_squared(),
        grad_y_sq: gy.norm_squared(),
    };
    let hb = HessBoundInputs {
        n: dim,
        m: dim,
        eta,
        mu,
        batch: 1,
        l2: 0.0,
        sigma2: 0.0,
        hxx_sq: quad.a.norm_squared(),
        hxy_sq: quad.b.norm_squared(),
        hyy_sq: quad.c.norm_squared(),
        theta_sq: theta.norm_squared(),
    };
    // quadratic: smoothing leaves gradients and Hessians unchanged
    let mut out = Vec::new();
    let push_mc = |name: &str, rep: McReport, bound: f64, out: &mut Vec<CheckRecord>| {
        out.push(CheckRecord {
            name: format!("{name}.mean"),
            measured: rep.error,
            target: rep.z * rep.std_error,
            pass: rep.pass,
        });
        out.push(bound_audit(&format!("{name}.second_moment"), rep.second_moment, bound));
    };

    let s = root.derive("grad_x", 0);
    let rep = mc_mean_check(|i| Ok(zo_grad_x(&q, &x, &y, eta, mu, 1, &s.derive("d", i))?.value), &gx, samples, DEFAULT_Z)?;
    push_mc("zo_grad_x", rep, grad_x_bound(&gb), &mut out);

    let s = root.derive("grad_y", 0);
    let rep = mc_mean_check(|i| Ok(zo_grad_y(&q, &x, &y, eta, mu, 1, &s.derive("d", i))?.value), &gy, samples, DEFAULT_Z)?;
    push_mc("zo_grad_y", rep, grad_y_bound(&gb), &mut out);

    let s = root.derive("hess_xy", 0);
    let target = &quad.b * &theta;
    let rep = mc_mean_check(
        |i| Ok(zo_hess_xy(&q, &x, &y, eta, mu, 1, &s.derive("d", i))?.value * &theta),
        &target,
        samples,
        DEFAULT_Z,
    )?;
    // the bound is on the centered second moment
    let centered = rep.second_moment - target.norm_squared();
    push_mc("zo_hess_xy", McReport { second_moment: centered, ..rep }, hess_xy_bound(&hb), &mut out);

    let s = root.derive("hess_xx", 0);
    let target = &quad.a * &theta;
    let rep = mc_mean_check(
        |i| Ok(zo_hess_xx(&q, &x, &y, eta, mu, 1, &s.derive("d", i))?.value * &theta),
        &target,
        samples,
        DEFAULT_Z,
    )?;
    push_mc("zo_hess_xx", rep, hess_xx_bound(&hb), &mut out);

    let s = root.derive("hess_yy", 0);
    let target = &quad.c * &theta;
    let rep = mc_mean_check(
        |i| Ok(zo_hess_yy_apply(&q, &x, &y, eta, mu, &theta, &s.derive("d", i))?.value),
        &target,
        samples,
        DEFAULT_Z,
    )?;
    push_mc("zo_hess_yy_apply", rep, hess_yy_bound(&hb), &mut out);

    let s = root.derive("hess_xy_flat", 0);
    let rep = mc_mean_check(
        |i| Ok(flat(&zo_hess_xy(&q, &x, &y, eta, mu, 1, &s.derive("d", i))?.value)),
        &flat(&quad.b),
        samples,
        DEFAULT_Z,
    )?;
    out.push(CheckRecord {
        name: "zo_hess_xy.matrix_mean".into(),
        measured: rep.error,
        target: rep.z * rep.std_error,
        pass: rep.pass,
    });
    Ok(out)
}

/// The checks behind `zobilevel validate`; small enough to finish in
/// seconds.
pub fn default_suite(seed: u64) -> Result<Vec<CheckRecord>> {
    let mut out = Vec::new();

    let x0 = DVector::from_column_slice(&[0.3, -1.2, 2.0]);
    let fd = fd_grad(|x| 0.5 * x.norm_squared(), &x0, 1e-4);
    let err = (fd - &x0).norm();
    out.push(CheckRecord {
        name: "fd_grad.quadratic".into(),
        measured: err,
        target: 1e-8,
        pass: err <= 1e-8,
    });
    let fd = fd_grad(|x| x.iter().map(|v| v.sin()).sum(), &DVector::zeros(3), 1e-4);
    let err = (fd - DVector::from_element(3, 1.0)).norm();
    out.push(CheckRecord {
        name: "fd_grad.sin".into(),
        measured: err,
        target: 1e-6,
        pass: err <= 1e-6,
    });

    out.extend(estimator_suite(4, 20_000, seed)?);

    let spec = QuadraticFamily::new(5, 5, seed).generate()?;
    let (problem, quad) = make_quadratic(&spec)?;
    let mut rng = RngStream::new(seed).derive("probe", 0).rng();
    let probes: Vec<DVector<f64>> = (0..3).map(|_| sample_gaussian(&mut rng, 5)).collect::<Result<_>>()?;
    for x in &probes {
        let exact = problem.true_hypergrad(x)?;
        let err = (fd_grad(|x| quad.psi(x), x, 1e-5) - &exact).norm() / exact.norm().max(1e-12);
        out.push(CheckRecord {
            name: "quadratic.hypergrad_vs_fd".into(),
            measured: err,
            target: 1e-4,
            pass: err <= 1e-4,
        });
    }
    let gap = smoothed_gap_check(&quad, 0.1, 0.1, &probes[..1]);
    out.push(CheckRecord {
        name: "quadratic.smoothed_gap".into(),
        measured: gap.gap_sq,
        target: gap.bound,
        pass: gap.pass,
    });
    Ok(out)
}
