//! Dual-primal tearing and interconnecting solver for multipatch problems.
//!
//! Each patch contributes an independent local stiffness block; continuity
//! across interfaces is torn apart and re-imposed through Lagrange
//! multipliers, except for a small set of primal constraints (vertex values
//! and interface averages) that stay coupled and give the method its coarse
//! problem. The reduced dual system is solved with preconditioned conjugate
//! gradients; local subproblems are handled either by direct factorizations
//! or by multigrid-based inner solvers, depending on the variant.

pub mod basis;
pub mod monolithic;
pub mod operators;
pub mod partition;
pub mod saddle;
pub mod solve;

pub use monolithic::monolithic_solve;
pub use partition::Partition;
pub use solve::{solve, Solution, Timings};

use crate::linalg::LinAlgError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    LinAlg(#[from] LinAlgError),
    #[error("invalid decomposition: {0}")]
    Decomposition(String),
}

/// Which local solvers the method composes: the first slot covers the
/// interior (Dirichlet-type) solves, the second the constrained local
/// (Neumann-type) solves. The saddle variant skips the dual reduction and
/// iterates on the partially assembled saddle point system directly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    DirectDirect,
    MgDirect,
    MgMg,
    MgMgSaddle,
}

pub const VARIANTS: [Variant; 4] =
    [Variant::DirectDirect, Variant::MgDirect, Variant::MgMg, Variant::MgMgSaddle];

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::DirectDirect => "D-D",
            Variant::MgDirect => "MG-D",
            Variant::MgMg => "MG-MG",
            Variant::MgMgSaddle => "MG-MG-S",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "D-D" | "DD" => Some(Variant::DirectDirect),
            "MG-D" | "MGD" => Some(Variant::MgDirect),
            "MG-MG" | "MGMG" => Some(Variant::MgMg),
            "MG-MG-S" | "MGMGS" => Some(Variant::MgMgSaddle),
            _ => None,
        }
    }

    /// Interior solves run through multigrid instead of a factorization.
    pub fn inexact_interior(self) -> bool {
        !matches!(self, Variant::DirectDirect)
    }

    /// Constrained local solves run through an inner saddle iteration.
    pub fn inexact_local(self) -> bool {
        matches!(self, Variant::MgMg | Variant::MgMgSaddle)
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Tolerances and inner-solver knobs. The defaults reproduce the reference
/// configuration; tests tighten `outer_tol` when they compare solutions.
#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// Relative (unpreconditioned) residual target of the outer iteration.
    pub outer_tol: f64,
    pub max_outer: usize,
    /// Inner tolerance for the energy-minimizing basis solves.
    pub basis_tol: f64,
    /// Inner tolerance for the constrained local solves in the dual operator.
    pub dual_tol: f64,
    /// Inner tolerance for interior solves (reduced right-hand side and
    /// solution recovery).
    pub interior_tol: f64,
    /// V-cycles composing the fixed interior approximation inside the
    /// scaled Dirichlet preconditioner.
    pub dirichlet_cycles: usize,
    /// V-cycles composing each constrained-solver preconditioner step.
    pub neumann_cycles: usize,
    /// Mass regularization weight for the local Neumann hierarchies.
    pub regularization: f64,
    /// Safety margin applied to calibrated spectral bounds.
    pub margin: f64,
    /// Random seed for calibration probes.
    pub seed: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            outer_tol: 1e-6,
            max_outer: 400,
            basis_tol: 1e-12,
            dual_tol: 1e-10,
            interior_tol: 1e-10,
            dirichlet_cycles: 2,
            neumann_cycles: 3,
            regularization: 1e-2,
            margin: 0.01,
            seed: 0x5EED,
        }
    }
}
