//! Vector-valued test functions used as right-hand sides and transform inputs.

use std::fmt;
use std::sync::Arc;

use crate::linalg::{Mat, Vect, C64};

pub type VecEval = Arc<dyn Fn(f64) -> Vect + Send + Sync>;

/// A `ℂⁿ`-valued function with compact support and known discontinuities.
/// Evaluation at a discontinuity must return the balanced value.
#[derive(Clone)]
pub struct PiecewiseFn {
    pub dim: usize,
    pub support: (f64, f64),
    pub breaks: Vec<f64>,
    eval: VecEval,
}

impl fmt::Debug for PiecewiseFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PiecewiseFn")
            .field("dim", &self.dim)
            .field("support", &self.support)
            .field("breaks", &self.breaks)
            .finish()
    }
}

impl PiecewiseFn {
    pub fn new(dim: usize, support: (f64, f64), breaks: Vec<f64>, eval: VecEval) -> Self {
        PiecewiseFn {
            dim,
            support,
            breaks,
            eval,
        }
    }

    pub fn from_fn<F>(dim: usize, support: (f64, f64), f: F) -> Self
    where
        F: Fn(f64) -> Vect + Send + Sync + 'static,
    {
        PiecewiseFn::new(dim, support, vec![], Arc::new(f))
    }

    /// Constant vector on `[lo, hi]`, balanced at both support edges.
    pub fn constant(value: Vect, lo: f64, hi: f64) -> Self {
        let dim = value.len();
        PiecewiseFn::new(
            dim,
            (lo, hi),
            vec![lo, hi],
            Arc::new(move |x| {
                if x > lo && x < hi {
                    value.clone()
                } else if x == lo || x == hi {
                    value.clone() * C64::new(0.5, 0.0)
                } else {
                    Vect::zeros(value.len())
                }
            }),
        )
    }

    pub fn zero(dim: usize) -> Self {
        PiecewiseFn::new(dim, (0.0, 0.0), vec![], Arc::new(move |_| Vect::zeros(dim)))
    }

    /// Value at `x`; zero outside the support.
    pub fn eval(&self, x: f64) -> Vect {
        if x < self.support.0 || x > self.support.1 {
            Vect::zeros(self.dim)
        } else {
            (self.eval)(x)
        }
    }

    /// Value as an `n × 1` matrix.
    pub fn eval_mat(&self, x: f64) -> Mat {
        let v = self.eval(x);
        Mat::from_column_slice(v.len(), 1, v.as_slice())
    }

    pub fn scaled(&self, s: C64) -> PiecewiseFn {
        let inner = self.clone();
        PiecewiseFn::new(
            self.dim,
            self.support,
            self.breaks.clone(),
            Arc::new(move |x| inner.eval(x) * s),
        )
    }

    /// `self + s·other`
    pub fn add_scaled(&self, other: &PiecewiseFn, s: C64) -> PiecewiseFn {
        let (a, b) = (self.clone(), other.clone());
        let support = (self.support.0.min(other.support.0), self.support.1.max(other.support.1));
        let mut breaks = self.breaks.clone();
        breaks.extend(other.breaks.iter().copied());
        PiecewiseFn::new(self.dim, support, breaks, Arc::new(move |x| a.eval(x) + b.eval(x) * s))
    }
}
