//! Multipatch isogeometric Poisson solver based on dual-primal tearing and
//! interconnecting (IETI-DP) with interchangeable local solvers.
//!
//! The domain is split into tensor-product spline patches. Patch-local
//! stiffness contributions are torn apart, coupled through primal degrees
//! of freedom (vertex values and edge averages) plus Lagrange multipliers,
//! and the dual Schur problem is solved by preconditioned conjugate
//! gradients. Local subproblems are handled either by sparse direct
//! factorizations or by multigrid cycles, which trades exactness for
//! robustness in the outer iteration; the solver variants differ only in
//! where that trade is made.

pub mod assembly;
pub mod geometry;
pub mod ieti;
pub mod linalg;
pub mod multigrid;
pub mod splines;
