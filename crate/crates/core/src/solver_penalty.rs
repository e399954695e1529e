//! Penalty-based fully zeroth-order bilevel method.
//!
//! The inner loop runs SGD on `λ⁻¹f + g` (iterate `y`) and on `g` (iterate
//! `z`) with common random numbers: both lower differences of step `t`
//! share one direction and one noise draw (stream `pen.inner/k/t`). The
//! outer step estimates `∇L*(x) = ∇_x f(x, y) + λ(∇_x g(x, y) − ∇_x g(x, z))`
//! with one direction and one lower noise draw per sample shared between
//! the two lower differences (stream `pen.outer/k/sample/i`).

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::StochasticOracle;
use crate::problems::BilevelProblem;
use crate::projection::ProjectionSpec;
use crate::rng::{sample_gaussian, RngStream};
use crate::run::{guard, limit_for, Recorder, RunControl};
use crate::smoothing::forward_difference;
use crate::solver_jh::{check_eps, DeskCaps, OuterStep};
use crate::trace::RunOutcome;
use crate::types::{Point, ProblemConstants, StepSchedule};

/// Step size used when the smoothness of the hyper-objective is unknown.
pub const DEFAULT_ALPHA: f64 = 0.01;

/// Where the inner upper difference is evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FDifferenceAt {
    /// At `y_t`, the iterate the difference updates.
    #[default]
    Y,
    /// At `z_t`.
    Z,
}

/// Assembly of the outer estimate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OuterForm {
    /// `∇̃_x F(x, ȳ) + λ(∇̃_x G(x, ȳ) − ∇̃_x G(x, z̄))`, the gradient of the
    /// surrogate.
    #[default]
    Surrogate,
    /// `∇̃_x F(x, z̄) + λ(∇̃_x G(x, z̄) − ∇̃_x G(x, ȳ))`.
    Swapped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub outer_iterations: usize,
    pub alpha: StepSchedule,
    pub beta: f64,
    pub inner_iterations: usize,
    pub batch_size: usize,
    /// Penalty weight; `inf` disables the upper term in the inner loop.
    pub lambda: f64,
    /// Smoothing radius of the x-block.
    pub eta: f64,
    /// Smoothing radius of the y-block.
    pub mu: f64,
    #[serde(default)]
    pub projection: ProjectionSpec,
    /// Start each inner loop at the previous `(ȳ, z̄)` rather than at `(y₀, z₀)`.
    #[serde(default = "yes")]
    pub warm_start: bool,
    #[serde(default)]
    pub f_difference_at: FDifferenceAt,
    #[serde(default)]
    pub outer_form: OuterForm,
    #[serde(default, flatten)]
    pub control: RunControl,
}

fn yes() -> bool {
    true
}

impl PenaltyConfig {
    pub fn validate(&self, n: usize, consts: Option<&ProblemConstants>) -> Result<()> {
        self.alpha.validate()?;
        if self.inner_iterations == 0 {
            return Err(Error::param("inner_iterations", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch_size", "must be >= 1"));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::param("beta", "must be finite and >= 0"));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::param("lambda", "must be > 0"));
        }
        if let Some(c) = consts {
            if self.lambda < c.penalty_threshold() {
                return Err(Error::Config(format!(
                    "lambda = {} is below the threshold 4·l1f/lam_g = {}",
                    self.lambda,
                    c.penalty_threshold()
                )));
            }
        }
        for (name, r) in [("eta", self.eta), ("mu", self.mu)] {
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::param(name, "must be finite and > 0"));
            }
        }
        self.projection.validate(n)?;
        self.control.validate()
    }

    /// `(F, G)` evaluations of one outer iteration.
    pub fn queries_per_outer_step(&self) -> (u64, u64) {
        let (t, s) = (self.inner_iterations as u64, self.batch_size as u64);
        (2 * t + 2 * s, 4 * t + 4 * s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InnerPairState {
    pub y: DVector<f64>,
    pub z: DVector<f64>,
}

fn checked(d: f64, context: &'static str, index: u64) -> Result<f64> {
    if d.is_finite() {
        Ok(d)
    } else {
        Err(Error::NonFinite { context, index })
    }
}

/// One joint step. Direction from `stream/dir`, lower noise from
/// `stream/g_noise` (shared by both lower differences), upper noise from
/// `stream/f_noise`. Costs 4 lower and 2 upper evaluations.
#[allow(clippy::too_many_arguments)]
pub fn inner_step_pair(
    f: &StochasticOracle,
    g: &StochasticOracle,
    x: &DVector<f64>,
    state: &InnerPairState,
    beta: f64,
    lambda: f64,
    mu: f64,
    f_at: FDifferenceAt,
    stream: &RngStream,
    index: u64,
) -> Result<InnerPairState> {
    let v = sample_gaussian(&mut stream.derive("dir", 0).rng(), state.y.len())?;
    let zeta = stream.derive("g_noise", 0);
    let xi = stream.derive("f_noise", 0);
    let gy = checked(forward_difference(g, x, &state.y, 0.0, None, mu, Some(&v), &zeta), "inner_step_pair", index)? / mu;
    let gz = checked(forward_difference(g, x, &state.z, 0.0, None, mu, Some(&v), &zeta), "inner_step_pair", index)? / mu;
    let at = match f_at {
        FDifferenceAt::Y => &state.y,
        FDifferenceAt::Z => &state.z,
    };
    let fd = checked(forward_difference(f, x, at, 0.0, None, mu, Some(&v), &xi), "inner_step_pair", index)? / mu;
    let mut z = state.z.clone();
    z.axpy(-beta * gz, &v, 1.0);
    let mut y = state.y.clone();
    y.axpy(-beta * (fd / lambda + gy), &v, 1.0);
    Ok(InnerPairState { y, z })
}

/// `t` joint steps; step `τ` reads `stream/("t", τ)`.
#[allow(clippy::too_many_arguments)]
pub fn inner_loop_pair(
    f: &StochasticOracle,
    g: &StochasticOracle,
    x: &DVector<f64>,
    start: &InnerPairState,
    beta: f64,
    lambda: f64,
    mu: f64,
    iterations: usize,
    f_at: FDifferenceAt,
    stream: &RngStream,
) -> Result<InnerPairState> {
    let limit = limit_for(&start.y).max(limit_for(&start.z));
    let mut state = start.clone();
    for t in 0..iterations as u64 {
        state = inner_step_pair(f, g, x, &state, beta, lambda, mu, f_at, &stream.derive("t", t), t)?;
        guard("inner_loop_pair", t, &state.y, limit)?;
        guard("inner_loop_pair", t, &state.z, limit)?;
    }
    Ok(state)
}

/// Surrogate-gradient estimate at `x` with batch `cfg.batch_size`, then
/// the prox step with step `alpha`. Costs `2s` upper and `4s` lower
/// evaluations.
#[allow(clippy::too_many_arguments)]
pub fn outer_step_penalty(
    f: &StochasticOracle,
    g: &StochasticOracle,
    x: &DVector<f64>,
    ybar: &DVector<f64>,
    zbar: &DVector<f64>,
    cfg: &PenaltyConfig,
    alpha: f64,
    stream: &RngStream,
) -> Result<OuterStep> {
    let (at_f, plus, minus) = match cfg.outer_form {
        OuterForm::Surrogate => (ybar, ybar, zbar),
        OuterForm::Swapped => (zbar, zbar, ybar),
    };
    let eta = cfg.eta;
    let mut acc_f = DVector::zeros(x.len());
    let mut acc_g = DVector::zeros(x.len());
    for i in 0..cfg.batch_size as u64 {
        let s = stream.derive("sample", i);
        let u = sample_gaussian(&mut s.derive("dir", 0).rng(), x.len())?;
        let zeta = s.derive("g_noise", 0);
        let df = forward_difference(f, x, at_f, eta, Some(&u), 0.0, None, &s.derive("f_noise", 0));
        let dp = forward_difference(g, x, plus, eta, Some(&u), 0.0, None, &zeta);
        let dm = forward_difference(g, x, minus, eta, Some(&u), 0.0, None, &zeta);
        let df = checked(df, "outer_step_penalty", i)?;
        let dg = checked(dp, "outer_step_penalty", i)? - checked(dm, "outer_step_penalty", i)?;
        acc_f.axpy(df / eta, &u, 1.0);
        acc_g.axpy(dg / eta, &u, 1.0);
    }
    let s = cfg.batch_size as f64;
    let mut direction = acc_f / s;
    direction.axpy(cfg.lambda / s, &acc_g, 1.0);
    if !direction.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite {
            context: "outer_step_penalty",
            index: 0,
        });
    }
    let x_next = cfg.projection.prox_step(x, &direction, alpha);
    Ok(OuterStep {
        x_next,
        direction,
        hinv: None,
    })
}

/// Runs the method from `start`; `z₀ = y₀`.
pub fn run_penalty(problem: &BilevelProblem, cfg: &PenaltyConfig, start: &Point, stream: &RngStream) -> Result<RunOutcome> {
    if start.n() != problem.n || start.m() != problem.m {
        return Err(Error::param("start", format!("expected dimensions ({}, {})", problem.n, problem.m)));
    }
    cfg.validate(problem.n, problem.constants.as_ref())?;
    let (f, g) = problem.oracles();
    let mut rec = Recorder::new(problem, &cfg.control, cfg.outer_iterations);
    let mut x = cfg.projection.project(&start.x);
    let initial = InnerPairState {
        y: start.y.clone(),
        z: start.y.clone(),
    };
    let mut pair = initial.clone();
    let limit = limit_for(&x);
    if rec.record(0, &x, &f, &g, None, true) {
        return Ok(rec.finish(&cfg.alpha, stream, x, None));
    }

    let mut error = None;
    for k in 0..cfg.outer_iterations {
        let step = (|| -> Result<OuterStep> {
            let from = if cfg.warm_start { &pair } else { &initial };
            let inner = inner_loop_pair(
                &f,
                &g,
                &x,
                from,
                cfg.beta,
                cfg.lambda,
                cfg.mu,
                cfg.inner_iterations,
                cfg.f_difference_at,
                &stream.derive("pen.inner", k as u64),
            )?;
            let step = outer_step_penalty(&f, &g, &x, &inner.y, &inner.z, cfg, cfg.alpha.at(k), &stream.derive("pen.outer", k as u64))?;
            guard("run_penalty", k as u64, &step.x_next, limit)?;
            pair = inner;
            Ok(step)
        })();
        match step {
            Ok(step) => {
                x = step.x_next;
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

/// Constants multiplying the O(·) and Ω(·) terms of [`penalty_schedule`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenaltyTuning {
    pub c_lambda: f64,
    pub c_s: f64,
    pub c_t: f64,
    pub c_beta: f64,
    pub c_eta: f64,
    pub c_mu: f64,
    pub c_n: f64,
}

impl Default for PenaltyTuning {
    fn default() -> Self {
        Self {
            c_lambda: 1.0,
            c_s: 1.0,
            c_t: 1.0,
            c_beta: 1.0,
            c_eta: 1.0,
            c_mu: 1.0,
            c_n: 1.0,
        }
    }
}

/// Plug-in schedule: `λ = max(4 L₁f/λ_g, c_λ ε^{-1/2})` (the threshold only
/// when constants are known), `s = ⌈c_s n/ε⌉`, `t = ⌈c_t m/ε⌉`,
/// `β = c_β ε/m`, `η = c_η √min(1/(λ² n³), ε/n³)`, `μ = c_μ √(ε/m³)`,
/// `α = 1/(5 L₁ψ)` (or [`DEFAULT_ALPHA`]), `N = ⌈c_N/ε⌉`.
///
/// An explicit `lambda` below the threshold is a configuration error.
pub fn penalty_schedule(
    n: usize,
    m: usize,
    eps: f64,
    consts: Option<&ProblemConstants>,
    tuning: &PenaltyTuning,
    caps: &DeskCaps,
    lambda: Option<f64>,
) -> Result<PenaltyConfig> {
    check_eps(eps)?;
    if n == 0 || m == 0 {
        return Err(Error::InvalidDimension(0));
    }
    let (nf, mf) = (n as f64, m as f64);
    let threshold = consts.map_or(0.0, ProblemConstants::penalty_threshold);
    let lambda = match lambda {
        Some(l) if l < threshold => {
            return Err(Error::Config(format!("lambda = {l} is below the threshold 4·l1f/lam_g = {threshold}")));
        }
        Some(l) => l,
        None => threshold.max(tuning.c_lambda / eps.sqrt()),
    };
    let s = (tuning.c_s * nf / eps).ceil() as usize;
    let t = (tuning.c_t * mf / eps).ceil() as usize;
    let eta = tuning.c_eta * (1.0 / (lambda * lambda * nf.powi(3))).min(eps / nf.powi(3)).sqrt();
    let mu = tuning.c_mu * (eps / mf.powi(3)).sqrt();
    let alpha = match consts {
        Some(c) if c.l1psi > 0.0 && c.l1psi.is_finite() => 1.0 / (5.0 * c.l1psi),
        _ => DEFAULT_ALPHA,
    };
    let outer = (tuning.c_n / eps).ceil() as usize;
    Ok(PenaltyConfig {
        outer_iterations: caps.outer_iterations.map_or(outer, |c| outer.min(c)),
        alpha: StepSchedule::Constant(alpha),
        beta: tuning.c_beta * eps / mf,
        inner_iterations: caps.inner_iterations.map_or(t, |c| t.min(c)).max(1),
        batch_size: caps.batch_size.map_or(s, |c| s.min(c)).max(1),
        lambda,
        eta,
        mu,
        projection: ProjectionSpec::AllSpace,
        warm_start: true,
        f_difference_at: FDifferenceAt::Y,
        outer_form: OuterForm::Surrogate,
        control: RunControl::default(),
    })
}
