//! Zeroth-order oracle access with exact query accounting.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::rng::RngStream;

/// A stochastic scalar function `Q(x, y, ζ)`.
///
/// The noise sample `ζ` is fully determined by `noise`: calling `evaluate`
/// twice with the same stream must return the same value.
pub trait NoisyFunction: Send + Sync {
    fn dim_x(&self) -> usize;
    fn dim_y(&self) -> usize;
    fn evaluate(&self, x: &DVector<f64>, y: &DVector<f64>, noise: &RngStream) -> f64;
}

/// Counting wrapper around a [`NoisyFunction`]. Every call to
/// [`evaluate`](Self::evaluate) is one query.
pub struct StochasticOracle {
    func: Arc<dyn NoisyFunction>,
    evals: AtomicU64,
}

impl StochasticOracle {
    pub fn new(func: Arc<dyn NoisyFunction>) -> Self {
        Self {
            func,
            evals: AtomicU64::new(0),
        }
    }

    pub fn from_fn<F>(dim_x: usize, dim_y: usize, f: F) -> Self
    where
        F: Fn(&DVector<f64>, &DVector<f64>, &RngStream) -> f64 + Send + Sync + 'static,
    {
        Self::new(Arc::new(ClosureFunction::new(dim_x, dim_y, f)))
    }

    #[inline]
    pub fn evaluate(&self, x: &DVector<f64>, y: &DVector<f64>, noise: &RngStream) -> f64 {
        self.evals.fetch_add(1, Ordering::Relaxed);
        self.func.evaluate(x, y, noise)
    }

    pub fn evals(&self) -> u64 {
        self.evals.load(Ordering::Relaxed)
    }

    pub fn dim_x(&self) -> usize {
        self.func.dim_x()
    }

    pub fn dim_y(&self) -> usize {
        self.func.dim_y()
    }

    pub fn function(&self) -> &Arc<dyn NoisyFunction> {
        &self.func
    }
}

impl fmt::Debug for StochasticOracle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StochasticOracle")
            .field("dim_x", &self.dim_x())
            .field("dim_y", &self.dim_y())
            .field("evals", &self.evals())
            .finish()
    }
}

/// Adapter turning a closure into a [`NoisyFunction`].
pub struct ClosureFunction<F> {
    dim_x: usize,
    dim_y: usize,
    f: F,
}

impl<F> ClosureFunction<F> {
    pub fn new(dim_x: usize, dim_y: usize, f: F) -> Self {
        Self { dim_x, dim_y, f }
    }
}

impl<F> NoisyFunction for ClosureFunction<F>
where
    F: Fn(&DVector<f64>, &DVector<f64>, &RngStream) -> f64 + Send + Sync,
{
    fn dim_x(&self) -> usize {
        self.dim_x
    }

    fn dim_y(&self) -> usize {
        self.dim_y
    }

    fn evaluate(&self, x: &DVector<f64>, y: &DVector<f64>, noise: &RngStream) -> f64 {
        (self.f)(x, y, noise)
    }
}

/// Snapshot of the upper (`F`) and lower (`G`) query counts of a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryCounter {
    pub f_evals: u64,
    pub g_evals: u64,
}

impl QueryCounter {
    pub fn of(f: &StochasticOracle, g: &StochasticOracle) -> Self {
        Self {
            f_evals: f.evals(),
            g_evals: g.evals(),
        }
    }

    pub fn total(&self) -> u64 {
        self.f_evals + self.g_evals
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_every_call() {
        let q = StochasticOracle::from_fn(2, 3, |x, y, _| x.sum() + y.sum());
        let x = DVector::from_element(2, 1.0);
        let y = DVector::from_element(3, 2.0);
        let s = RngStream::new(1);
        assert_eq!(q.evals(), 0);
        for _ in 0..7 {
            assert_eq!(q.evaluate(&x, &y, &s), 8.0);
        }
        assert_eq!(q.evals(), 7);
        assert_eq!((q.dim_x(), q.dim_y()), (2, 3));
    }

    #[test]
    fn counting_is_race_free() {
        let q = Arc::new(StochasticOracle::from_fn(1, 1, |x, _, _| x[0]));
        std::thread::scope(|scope| {
            for _ in 0..4 {
                let q = Arc::clone(&q);
                scope.spawn(move || {
                    let x = DVector::from_element(1, 0.0);
                    let s = RngStream::new(0);
                    for _ in 0..1000 {
                        q.evaluate(&x, &x, &s);
                    }
                });
            }
        });
        assert_eq!(q.evals(), 4000);
    }
}
