//! Local constrained solvers and the energy-minimizing primal basis.
//!
//! Every patch repeatedly solves saddle systems [[K, C^T], [C, 0]] with its
//! active stiffness block and its primal constraint rows: once per primal
//! basis function during setup and once per application of the dual
//! operator. The direct variant eliminates the border through a banded
//! factorization of K (rank-one fixed when the patch is floating); the
//! iterative variant runs an inner saddle-point CG with a calibrated
//! multigrid block.

use nalgebra::{DMatrix, DVector, LU};

use crate::linalg::{
    calibrate_spd_order, sz_pcg, BandedCholesky, LinAlgError, OrderDirection,
    ScaledOperator, SparseMatrix, SzPreconditioner,
};
use crate::multigrid::MgHierarchy;

/// Direct solver for [[K, C^T], [C, 0]] with banded K. A floating patch
/// (singular K) is regularized internally by a rank-one diagonal bump; the
/// bordered elimination keeps the outer solution exact.
pub struct BorderedSolver {
    chol: BandedCholesky,
    c: SparseMatrix,
    y_cols: Vec<Vec<f64>>,
    y0: Option<Vec<f64>>,
    sigma: f64,
    schur: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl BorderedSolver {
    pub fn new(k: &SparseMatrix, c: &SparseMatrix, floating: bool) -> Result<Self, LinAlgError> {
        let n = k.nrows();
        if c.ncols() != n {
            return Err(LinAlgError::DimensionMismatch(
                "constraint columns vs stiffness dim".into(),
            ));
        }
        let nc = c.nrows();
        let sigma = if floating {
            k.diagonal().iter().sum::<f64>() / n.max(1) as f64
        } else {
            0.0
        };
        let k1 = if floating {
            let mut t = k.triplets();
            t.push((0, 0, sigma));
            SparseMatrix::from_triplets(n, n, &t)?
        } else {
            k.clone()
        };
        let chol = BandedCholesky::new(&k1)?;

        let mut y_cols = Vec::with_capacity(nc);
        for j in 0..nc {
            let (cols, vals) = c.row(j);
            let mut rhs = vec![0.0; n];
            for (&i, &v) in cols.iter().zip(vals) {
                rhs[i] = v;
            }
            y_cols.push(chol.solve(&rhs));
        }
        let y0 = if floating {
            let mut e0 = vec![0.0; n];
            e0[0] = 1.0;
            Some(chol.solve(&e0))
        } else {
            None
        };

        let extra = floating as usize;
        let mut schur = DMatrix::<f64>::zeros(nc + extra, nc + extra);
        for (j, y) in y_cols.iter().enumerate() {
            let cy = c.matvec(y);
            for i in 0..nc {
                schur[(i, j)] = cy[i];
            }
            if floating {
                schur[(nc, j)] = y[0];
            }
        }
        if let Some(y0) = &y0 {
            let cy0 = c.matvec(y0);
            for i in 0..nc {
                schur[(i, nc)] = -sigma * cy0[i];
            }
            schur[(nc, nc)] = 1.0 - sigma * y0[0];
        }
        let schur = schur.lu();
        if !schur.is_invertible() && nc + extra > 0 {
            return Err(LinAlgError::Breakdown(
                "local constrained system is singular".into(),
            ));
        }
        Ok(Self { chol, c: c.clone(), y_cols, y0, sigma, schur })
    }

    /// Solution (w, mu) of K w + C^T mu = r, C w = g.
    pub fn solve(&self, r: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let nc = self.c.nrows();
        let q = self.chol.solve(r);
        if nc == 0 && self.y0.is_none() {
            return (q, Vec::new());
        }
        let extra = self.y0.is_some() as usize;
        let mut rhs = DVector::<f64>::zeros(nc + extra);
        let cq = self.c.matvec(&q);
        for i in 0..nc {
            rhs[i] = cq[i] - g[i];
        }
        if extra == 1 {
            rhs[nc] = q[0];
        }
        let sol = self.schur.solve(&rhs).expect("factor validated at construction");
        let mut w = q;
        for (j, y) in self.y_cols.iter().enumerate() {
            let mj = sol[j];
            for i in 0..w.len() {
                w[i] -= mj * y[i];
            }
        }
        if let Some(y0) = &self.y0 {
            let t = sol[nc];
            for i in 0..w.len() {
                w[i] += self.sigma * t * y0[i];
            }
        }
        (w, sol.as_slice()[..nc].to_vec())
    }
}

/// Inner saddle-point CG with a multigrid block calibrated above K.
pub struct IterativeSolver {
    k: SparseMatrix,
    c: SparseMatrix,
    hierarchy: MgHierarchy,
    cycles: usize,
    hat_scale: f64,
    prec: SzPreconditioner,
}

impl IterativeSolver {
    /// `hierarchy` must precondition a regularized version of `k` on the
    /// same dof set; the composed cycles are scaled just above `k` so the
    /// inner iteration's ordering requirements hold.
    pub fn new(
        k: SparseMatrix,
        c: SparseMatrix,
        hierarchy: MgHierarchy,
        cycles: usize,
        margin: f64,
        seed: u64,
    ) -> Result<Self, LinAlgError> {
        if c.ncols() != k.nrows() || hierarchy.dim() != k.nrows() {
            return Err(LinAlgError::DimensionMismatch(
                "iterative local solver block dims".into(),
            ));
        }
        let hat_scale = calibrate_spd_order(
            &k,
            &hierarchy.preconditioner(cycles),
            OrderDirection::Above,
            margin,
            seed,
        )?;
        let a_hat_inv =
            ScaledOperator { inner: hierarchy.preconditioner(cycles), scale: 1.0 / hat_scale };
        let prec = SzPreconditioner::build(&c, &a_hat_inv, 0.99)?;
        Ok(Self { k, c, hierarchy, cycles, hat_scale, prec })
    }

    pub fn solve(
        &self,
        r: &[f64],
        g: &[f64],
        tol: f64,
        max_iterations: usize,
    ) -> Result<(Vec<f64>, Vec<f64>, usize), LinAlgError> {
        let a_hat_inv = ScaledOperator {
            inner: self.hierarchy.preconditioner(self.cycles),
            scale: 1.0 / self.hat_scale,
        };
        let sol = sz_pcg(&self.k, &self.c, &a_hat_inv, &self.prec, r, g, tol, max_iterations)?;
        if sol.report.stop == crate::linalg::StopReason::MaxIterations {
            return Err(LinAlgError::Breakdown(format!(
                "local constrained solve stalled at residual {:.3e}",
                sol.report.residual
            )));
        }
        Ok((sol.x, sol.y, sol.report.iterations))
    }
}

/// Either local constrained solver behind one call surface. The reported
/// count is zero for the direct variant.
pub enum LocalSolver {
    Direct(BorderedSolver),
    Iterative(IterativeSolver),
}

impl LocalSolver {
    pub fn solve(
        &self,
        r: &[f64],
        g: &[f64],
        tol: f64,
        max_iterations: usize,
    ) -> Result<(Vec<f64>, Vec<f64>, usize), LinAlgError> {
        match self {
            LocalSolver::Direct(s) => {
                let (w, mu) = s.solve(r, g);
                Ok((w, mu, 0))
            }
            LocalSolver::Iterative(s) => s.solve(r, g, tol, max_iterations),
        }
    }
}

/// Traces of the energy-minimizing primal basis and the local coarse
/// matrix. Column j solves the homogeneous saddle system with constraint
/// value e_j; the coarse matrix entries come from the multipliers, since
/// phi_i^T S phi_j = -mu_j[i] for discrete-harmonic basis functions.
pub fn primal_basis(
    solver: &LocalSolver,
    n_active: usize,
    interface_pos_in_active: &[usize],
    n_constraints: usize,
    tol: f64,
    max_iterations: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>, usize), LinAlgError> {
    let nb = interface_pos_in_active.len();
    let mut phi = DMatrix::<f64>::zeros(nb, n_constraints);
    let mut s_pp = DMatrix::<f64>::zeros(n_constraints, n_constraints);
    let mut iterations = 0;
    let r = vec![0.0; n_active];
    for j in 0..n_constraints {
        let mut g = vec![0.0; n_constraints];
        g[j] = 1.0;
        let (w, mu, its) = solver.solve(&r, &g, tol, max_iterations)?;
        iterations += its;
        for (row, &pos) in interface_pos_in_active.iter().enumerate() {
            phi[(row, j)] = w[pos];
        }
        for i in 0..n_constraints {
            s_pp[(i, j)] = -mu[i];
        }
    }
    let sym = (&s_pp + s_pp.transpose()) * 0.5;
    Ok((phi, sym, iterations))
}
