//! Double-loop zeroth-order bilevel method with an SGD-based Hessian-inverse
//! product.
//!
//! Outer iteration `k`: `t` inner SGD steps on `y` (stream
//! `jh.inner/k/t/τ`), then the hypergradient estimate
//! `∇̃_x F − ∇̃²_xy G · H̃` (stream `jh.outer/k` with children `grad_fx`,
//! `hess_xy`, `hessinv`) and a projected step on `x`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hessinv::{approx_hess_inv_vec, hessinv_schedule, HessInvConfig, HessInvTuning};
use crate::oracle::StochasticOracle;
use crate::problems::BilevelProblem;
use crate::projection::ProjectionSpec;
use crate::rng::RngStream;
use crate::run::{guard, limit_for, Recorder, RunControl};
use crate::smoothing::{zo_grad_x, zo_grad_y, zo_hess_xy};
use crate::trace::RunOutcome;
use crate::types::{Point, ProblemConstants, SmoothingParams, StepSchedule};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JhConfig {
    pub outer_iterations: usize,
    pub alpha: StepSchedule,
    /// Inner SGD step on `y`.
    pub beta: f64,
    pub inner_iterations: usize,
    /// Minibatch of the gradient and mixed-Hessian estimates.
    pub batch_size: usize,
    /// Iterations of the Hessian-inverse SGD per outer step.
    pub hessinv_iterations: usize,
    pub hessinv_beta: f64,
    pub smoothing: SmoothingParams,
    #[serde(default)]
    pub projection: ProjectionSpec,
    /// Start each inner loop at the previous `ȳ` rather than at `y₀`.
    #[serde(default = "yes")]
    pub warm_start_inner: bool,
    /// Start each Hessian-inverse run at the previous `H̃`. With the small
    /// `β` of the Hessian-inverse schedule a cold start at zero barely moves
    /// within a capped `T`, so this defaults to on.
    #[serde(default = "yes")]
    pub hessinv_warm_start: bool,
    #[serde(default, flatten)]
    pub control: RunControl,
}

fn yes() -> bool {
    true
}

impl JhConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        self.alpha.validate()?;
        for (name, v) in [
            ("inner_iterations", self.inner_iterations),
            ("batch_size", self.batch_size),
            ("hessinv_iterations", self.hessinv_iterations),
        ] {
            if v == 0 {
                return Err(Error::param(name, "must be >= 1"));
            }
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::param("beta", "must be finite and >= 0"));
        }
        if !(self.hessinv_beta.is_finite() && self.hessinv_beta >= 0.0) {
            return Err(Error::param("hessinv_beta", "must be finite and >= 0"));
        }
        self.smoothing.validate()?;
        if self.smoothing.eta2 <= 0.0 {
            return Err(Error::param("eta2", "the mixed Hessian estimate needs eta2 > 0"));
        }
        self.projection.validate(n)?;
        self.control.validate()
    }

    /// `(F, G)` evaluations of one outer iteration.
    pub fn queries_per_outer_step(&self) -> (u64, u64) {
        let (t, s, b) = (self.inner_iterations as u64, self.batch_size as u64, self.hessinv_iterations as u64);
        (2 * s + 2 * b, 2 * t + 3 * s + 3 * b)
    }
}

/// `t` single-sample SGD steps on `y ↦ G(x, y)`, perturbing `y` only; step
/// `τ` reads `stream/("t", τ)`. Costs `2t` lower evaluations.
#[allow(clippy::too_many_arguments)]
pub fn inner_loop_y(
    g: &StochasticOracle,
    x: &DVector<f64>,
    y_init: &DVector<f64>,
    beta: f64,
    iterations: usize,
    mu2: f64,
    stream: &RngStream,
) -> Result<DVector<f64>> {
    if iterations == 0 {
        return Err(Error::param("inner_iterations", "must be >= 1"));
    }
    let limit = limit_for(y_init);
    let mut y = y_init.clone();
    for t in 0..iterations as u64 {
        let est = zo_grad_y(g, x, &y, 0.0, mu2, 1, &stream.derive("t", t))?;
        y.axpy(-beta, &est.value, 1.0);
        guard("inner_loop_y", t, &y, limit)?;
    }
    Ok(y)
}

/// Result of one outer update.
#[derive(Clone, Debug, PartialEq)]
pub struct OuterStep {
    pub x_next: DVector<f64>,
    /// The hypergradient estimate that produced `x_next`.
    pub direction: DVector<f64>,
    /// Hessian-inverse product `H̃`, when the method forms one.
    pub hinv: Option<DVector<f64>>,
}

/// Assembles `∇̃ψ = ∇̃_x F(x, ȳ) − ∇̃²_xy G(x, ȳ) H̃` and takes the prox step
/// with step `alpha`. The x-gradient perturbs `x` only.
#[allow(clippy::too_many_arguments)]
pub fn outer_step_jh(
    f: &StochasticOracle,
    g: &StochasticOracle,
    x: &DVector<f64>,
    ybar: &DVector<f64>,
    cfg: &JhConfig,
    alpha: f64,
    hinv_start: Option<&DVector<f64>>,
    stream: &RngStream,
) -> Result<OuterStep> {
    let sp = &cfg.smoothing;
    let gfx = zo_grad_x(f, x, ybar, sp.eta1, 0.0, cfg.batch_size, &stream.derive("grad_fx", 0))?;
    let hxy = zo_hess_xy(g, x, ybar, sp.eta2, sp.mu2, cfg.batch_size, &stream.derive("hess_xy", 0))?;
    let hcfg = HessInvConfig {
        beta: cfg.hessinv_beta,
        iterations: cfg.hessinv_iterations,
        smoothing: *sp,
        z0: hinv_start.map(|z| z.iter().copied().collect()),
    };
    let hinv = approx_hess_inv_vec(f, g, x, ybar, &hcfg, &stream.derive("hessinv", 0))?;
    let mut direction = gfx.value;
    direction.gemv(-1.0, &hxy.value, &hinv, 1.0);
    let x_next = cfg.projection.prox_step(x, &direction, alpha);
    Ok(OuterStep {
        x_next,
        direction,
        hinv: Some(hinv),
    })
}

/// Runs the method from `start`. The returned trace has one record per
/// completed outer iteration plus the initial one; on failure it holds
/// everything recorded before the error.
pub fn run_jh(problem: &BilevelProblem, cfg: &JhConfig, start: &Point, stream: &RngStream) -> Result<RunOutcome> {
    if start.n() != problem.n || start.m() != problem.m {
        return Err(Error::param("start", format!("expected dimensions ({}, {})", problem.n, problem.m)));
    }
    cfg.validate(problem.n)?;
    let (f, g) = problem.oracles();
    let mut rec = Recorder::new(problem, &cfg.control, cfg.outer_iterations);
    let mut x = cfg.projection.project(&start.x);
    let mut y = start.y.clone();
    let mut hinv: Option<DVector<f64>> = None;
    let limit = limit_for(&x);
    if rec.record(0, &x, &f, &g, None, true) {
        return Ok(rec.finish(&cfg.alpha, stream, x, None));
    }

    let mut error = None;
    for k in 0..cfg.outer_iterations {
        let step = (|| -> Result<OuterStep> {
            let y_init = if cfg.warm_start_inner { &y } else { &start.y };
            let ybar = inner_loop_y(&g, &x, y_init, cfg.beta, cfg.inner_iterations, cfg.smoothing.mu2, &stream.derive("jh.inner", k as u64))?;
            let warm = if cfg.hessinv_warm_start { hinv.as_ref() } else { None };
            let step = outer_step_jh(&f, &g, &x, &ybar, cfg, cfg.alpha.at(k), warm, &stream.derive("jh.outer", k as u64))?;
            guard("run_jh", k as u64, &step.x_next, limit)?;
            y = ybar;
            Ok(step)
        })();
        match step {
            Ok(step) => {
                x = step.x_next;
                hinv = step.hinv;
                let spent = rec.budget_spent(&f, &g);
                let reached = rec.record(k + 1, &x, &f, &g, Some(step.direction.norm()), spent);
                if spent || reached {
                    break;
                }
            }
            Err(e) => {
                error = Some(e);
                break;
            }
        }
    }
    Ok(rec.finish(&cfg.alpha, stream, x, error))
}

/// Constants multiplying the O(·) terms of [`jh_schedule`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JhTuning {
    pub c_s: f64,
    pub c_t: f64,
    pub c_beta: f64,
    pub c_n: f64,
    pub hessinv: HessInvTuning,
}

impl Default for JhTuning {
    fn default() -> Self {
        Self {
            c_s: 1.0,
            c_t: 1.0,
            c_beta: 1.0,
            c_n: 1.0,
            hessinv: HessInvTuning::default(),
        }
    }
}

/// Upper limits replacing the ε-scaled loop counts at desk scale.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DeskCaps {
    pub inner_iterations: Option<usize>,
    pub batch_size: Option<usize>,
    pub hessinv_iterations: Option<usize>,
    pub outer_iterations: Option<usize>,
}

impl DeskCaps {
    /// `t ≤ 512`, `s ≤ 100`, `T ≤ 1000`.
    pub fn desk() -> Self {
        Self {
            inner_iterations: Some(512),
            batch_size: Some(100),
            hessinv_iterations: Some(1000),
            outer_iterations: None,
        }
    }
}

fn capped(v: usize, cap: Option<usize>) -> usize {
    cap.map_or(v, |c| v.min(c)).max(1)
}

pub(crate) fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps < 1.0 {
        Ok(())
    } else {
        Err(Error::param("eps", "must lie in (0, 1)"))
    }
}

/// Plug-in schedule:
/// `s = ⌈c_s max(24(n+2), √(nm))/ε⌉`, `η₁ = μ₁ = min(1/(n+m)², √(ε/(n+m)³))`,
/// `η₂ = μ₂ = min(1/(n+m), √(ε/(n+m)))`, `β = c_β ε/m`,
/// `t = ⌈c_t (m/ε) ln(m/ε)⌉`, `α = 1/(5 L₁ψ)`, `N = ⌈c_N/ε⌉`, and the
/// Hessian-inverse step and length of [`hessinv_schedule`].
pub fn jh_schedule(n: usize, m: usize, eps: f64, consts: &ProblemConstants, tuning: &JhTuning, caps: &DeskCaps) -> Result<JhConfig> {
    check_eps(eps)?;
    if n == 0 || m == 0 {
        return Err(Error::InvalidDimension(0));
    }
    if !(consts.l1psi > 0.0 && consts.l1psi.is_finite()) {
        return Err(Error::param("l1psi", "must be > 0"));
    }
    let (nf, mf) = (n as f64, m as f64);
    let d = nf + mf;
    let s = (tuning.c_s * (24.0 * (nf + 2.0)).max((nf * mf).sqrt()) / eps).ceil() as usize;
    let r1 = (1.0 / (d * d)).min((eps / d.powi(3)).sqrt());
    let r2 = (1.0 / d).min((eps / d).sqrt());
    let t = (tuning.c_t * mf / eps * (mf / eps).ln()).ceil().max(1.0) as usize;
    let outer = (tuning.c_n / eps).ceil() as usize;
    let h = hessinv_schedule(n, m, eps, &tuning.hessinv)?;
    Ok(JhConfig {
        outer_iterations: caps.outer_iterations.map_or(outer, |c| outer.min(c)),
        alpha: StepSchedule::Constant(1.0 / (5.0 * consts.l1psi)),
        beta: tuning.c_beta * eps / mf,
        inner_iterations: capped(t, caps.inner_iterations),
        batch_size: capped(s, caps.batch_size),
        hessinv_iterations: capped(h.iterations, caps.hessinv_iterations),
        hessinv_beta: h.beta,
        smoothing: SmoothingParams {
            eta1: r1,
            mu1: r1,
            eta2: r2,
            mu2: r2,
        },
        projection: ProjectionSpec::AllSpace,
        warm_start_inner: true,
        hessinv_warm_start: true,
        control: RunControl::default(),
    })
}
