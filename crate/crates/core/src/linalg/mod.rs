//! Sparse matrices, direct factorization, and the Krylov solvers used
//! throughout the solver: plain PCG, a semidefinite-tolerant variant,
//! and two saddle-point CG methods (Schöberl–Zulehner and
//! Bramble–Pasciak) that work with inexact SPD preconditioner blocks.

mod calibrate;
mod cg;
mod cholesky;
mod matrix_market;
mod saddle;
mod sparse;

pub use calibrate::{calibrate_spd_order, OrderDirection};
pub use cg::{pcg, semidefinite_pcg};
pub use cholesky::BandedCholesky;
pub use matrix_market::{read_matrix_market, write_matrix_market};
pub use saddle::{bpcg, sz_pcg, SaddleSolution, SzPreconditioner};
pub use sparse::SparseMatrix;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinAlgError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not positive definite (pivot {index} = {value:.3e})")]
    NotSpd { index: usize, value: f64 },
    #[error("right-hand side has a component of size {component:.3e} in the operator kernel")]
    InconsistentRhs { component: f64 },
    #[error("preconditioner ordering violated: {0}")]
    OrderViolation(String),
    #[error("iteration breakdown: {0}")]
    Breakdown(String),
    #[error("invalid matrix entry: {0}")]
    InvalidEntry(String),
    #[error("matrix market parse error: {0}")]
    ParseError(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Abstract action y = A x. Implemented by sparse matrices, multigrid
/// preconditioners, and composed operators alike.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;
    fn apply_into(&self, x: &[f64], y: &mut [f64]);

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        self.apply_into(x, &mut y);
        y
    }
}

impl<T: LinearOperator + ?Sized> LinearOperator for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        (**self).apply_into(x, y)
    }
}

/// Operator given by a closure; mainly used to wrap composed actions.
pub struct FnOperator<F: Fn(&[f64], &mut [f64]) + Sync> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64], &mut [f64]) + Sync> FnOperator<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&[f64], &mut [f64]) + Sync> LinearOperator for FnOperator<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        (self.f)(x, y)
    }
}

/// Operator scaled by a constant factor.
pub struct ScaledOperator<A: LinearOperator> {
    pub inner: A,
    pub scale: f64,
}

impl<A: LinearOperator> LinearOperator for ScaledOperator<A> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        self.inner.apply_into(x, y);
        for v in y.iter_mut() {
            *v *= self.scale;
        }
    }
}

/// Identity action, handy as a "no preconditioner" placeholder.
pub struct IdentityOperator(pub usize);

impl LinearOperator for IdentityOperator {
    fn dim(&self) -> usize {
        self.0
    }
    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(x);
    }
}

/// Why an iterative solve stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    MaxIterations,
    ZeroRhs,
    /// The recursion hit a rounding-level zero of energy or curvature after
    /// the residual had already dropped to the achievable floor. Counts as
    /// success; the reported residual says what was reached.
    Stagnated,
}

/// Outcome of an iterative solve. `residual` is recomputed from the
/// returned iterate, not taken from the recursion, so it can be trusted.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub iterations: usize,
    pub residual: f64,
    pub stop: StopReason,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        matches!(
            self.stop,
            StopReason::Converged | StopReason::ZeroRhs | StopReason::Stagnated
        )
    }

    /// Report for a system whose right-hand side is zero to working
    /// accuracy, solved by the zero vector without iterating.
    pub fn trivial() -> Self {
        Self { iterations: 0, residual: 0.0, stop: StopReason::ZeroRhs }
    }
}

/// Relative residual under which a nonpositive CG energy is read as
/// rounding-level stagnation rather than a violated operator ordering.
pub(crate) const STAGNATION_GATE: f64 = 1e-8;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// y += alpha * x
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
