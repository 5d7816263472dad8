//! Per-patch operator blocks and the assembled dual system.
//!
//! The partially continuous space is handled through its energy-minimizing
//! splitting: a solve decomposes into independent constrained local solves
//! plus one small coarse solve, after which the dual Schur operator and the
//! scaled Dirichlet preconditioner are compositions of sparse products,
//! local solves, and the signed jump maps.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;

use crate::assembly::{assemble_load, assemble_stiffness, parameter_mass};
use crate::geometry::Patch;
use crate::linalg::{
    pcg, BandedCholesky, LinAlgError, LinearOperator, SparseMatrix,
};
use crate::multigrid::{build_patch_hierarchy, MgHierarchy};

use super::basis::{primal_basis, BorderedSolver, IterativeSolver, LocalSolver};
use super::partition::{Partition, PatchDofs};
use super::{SolveOptions, SolverError, Variant};

/// Iteration cap for every inner solve.
pub const INNER_MAX: usize = 800;

/// Accumulated inner iteration counts, grouped by solve family.
#[derive(Debug, Default)]
pub struct Counters {
    pub gtilde_iterations: AtomicUsize,
    pub gtilde_solves: AtomicUsize,
    pub basis_iterations: AtomicUsize,
    pub basis_solves: AtomicUsize,
    pub dual_iterations: AtomicUsize,
    pub dual_solves: AtomicUsize,
}

/// Average inner iterations per solve of each family.
#[derive(Debug, Clone, Copy, Default)]
pub struct InnerStats {
    pub gtilde: f64,
    pub basis: f64,
    pub dual: f64,
}

impl Counters {
    pub(crate) fn add(bucket: &AtomicUsize, solves: &AtomicUsize, iterations: usize) {
        bucket.fetch_add(iterations, Ordering::Relaxed);
        solves.fetch_add(1, Ordering::Relaxed);
    }

    pub fn stats(&self) -> InnerStats {
        let avg = |total: &AtomicUsize, solves: &AtomicUsize| {
            let s = solves.load(Ordering::Relaxed);
            if s == 0 {
                0.0
            } else {
                total.load(Ordering::Relaxed) as f64 / s as f64
            }
        };
        InnerStats {
            gtilde: avg(&self.gtilde_iterations, &self.gtilde_solves),
            basis: avg(&self.basis_iterations, &self.basis_solves),
            dual: avg(&self.dual_iterations, &self.dual_solves),
        }
    }
}

/// Interior (Dirichlet-type) solver of one patch.
pub enum InteriorSolver {
    Empty,
    Direct(BandedCholesky),
    Multigrid(MgHierarchy),
}

impl InteriorSolver {
    /// Fixed symmetric approximation of the interior inverse, used inside
    /// preconditioners; exact for the direct variant.
    fn apply_fixed(&self, b: &[f64], cycles: usize) -> Vec<f64> {
        match self {
            InteriorSolver::Empty => Vec::new(),
            InteriorSolver::Direct(chol) => chol.solve(b),
            InteriorSolver::Multigrid(h) => h.preconditioner(cycles).apply(b),
        }
    }

    /// Accurate interior solve; returns the iteration count.
    fn solve_accurate(
        &self,
        b: &[f64],
        tol: f64,
        cycles: usize,
    ) -> Result<(Vec<f64>, usize), LinAlgError> {
        match self {
            InteriorSolver::Empty => Ok((Vec::new(), 0)),
            InteriorSolver::Direct(chol) => Ok((chol.solve(b), 0)),
            InteriorSolver::Multigrid(h) => {
                let pre = h.preconditioner(cycles);
                let (x, report) = pcg(h.fine_matrix(), Some(&pre), b, tol, INNER_MAX)?;
                if !report.converged() {
                    return Err(LinAlgError::Breakdown(format!(
                        "interior solve stalled at residual {:.3e}",
                        report.residual
                    )));
                }
                Ok((x, report.iterations))
            }
        }
    }
}

/// All per-patch pieces a variant needs: stiffness blocks, load splits,
/// constraint rows, solvers, the primal basis, and the reduced rhs.
pub struct PatchOperators {
    pub k_ii: SparseMatrix,
    pub k_ib: SparseMatrix,
    pub k_bi: SparseMatrix,
    pub k_bb: SparseMatrix,
    pub k_active: SparseMatrix,
    pub f_interior: Vec<f64>,
    pub f_interface: Vec<f64>,
    pub f_active: Vec<f64>,
    pub c_iface: SparseMatrix,
    pub c_active: SparseMatrix,
    pub primal_slots: Vec<usize>,
    pub floating: bool,
    pub interior: InteriorSolver,
    pub local: Option<LocalSolver>,
    /// Neumann hierarchy kept for the assembled saddle variant.
    pub neumann: Option<MgHierarchy>,
    /// Interface traces of the energy-minimizing basis, one column per
    /// local constraint.
    pub phi: DMatrix<f64>,
    pub s_pp_local: DMatrix<f64>,
    pub g_tilde: Vec<f64>,
    interface_pos_in_active: Vec<usize>,
    dirichlet_cycles: usize,
}

impl PatchOperators {
    pub fn build(
        patch: &Patch,
        patch_index: usize,
        pd: &PatchDofs,
        part: &Partition,
        k_full: &SparseMatrix,
        f_full: &[f64],
        variant: Variant,
        opts: &SolveOptions,
        counters: &Counters,
    ) -> Result<Self, SolverError> {
        let k_ii = k_full.submatrix(&pd.interior, &pd.interior);
        let k_ib = k_full.submatrix(&pd.interior, &pd.interface);
        let k_bi = k_full.submatrix(&pd.interface, &pd.interior);
        let k_bb = k_full.submatrix(&pd.interface, &pd.interface);
        let k_active = k_full.submatrix(&pd.active, &pd.active);
        let f_interior: Vec<f64> = pd.interior.iter().map(|&d| f_full[d]).collect();
        let f_interface: Vec<f64> = pd.interface.iter().map(|&d| f_full[d]).collect();
        let f_active: Vec<f64> = pd.active.iter().map(|&d| f_full[d]).collect();
        let c_iface = part.constraint_matrix(patch_index);
        let c_active = part.constraint_matrix_active(patch_index);
        let primal_slots = part.primal_slots(patch_index);
        let floating = !pd.dirichlet_sides.iter().any(|&d| d);

        let interior = if pd.interior.is_empty() {
            InteriorSolver::Empty
        } else if variant.inexact_interior() {
            InteriorSolver::Multigrid(build_patch_hierarchy(
                &patch.basis1,
                &patch.basis2,
                k_ii.clone(),
                [true; 4],
            )?)
        } else {
            InteriorSolver::Direct(BandedCholesky::new(&k_ii)?)
        };

        let neumann_hierarchy = || -> Result<MgHierarchy, SolverError> {
            let mass = parameter_mass(patch).submatrix(&pd.active, &pd.active);
            let reg = k_active.add_scaled(opts.regularization, &mass)?;
            Ok(build_patch_hierarchy(
                &patch.basis1,
                &patch.basis2,
                reg,
                pd.dirichlet_sides,
            )?)
        };

        let mut neumann = None;
        let local = match variant {
            Variant::DirectDirect | Variant::MgDirect => Some(LocalSolver::Direct(
                BorderedSolver::new(&k_active, &c_active, floating)?,
            )),
            Variant::MgMg => Some(LocalSolver::Iterative(IterativeSolver::new(
                k_active.clone(),
                c_active.clone(),
                neumann_hierarchy()?,
                opts.neumann_cycles,
                opts.margin,
                opts.seed.wrapping_add(patch_index as u64),
            )?)),
            Variant::MgMgSaddle => {
                neumann = Some(neumann_hierarchy()?);
                None
            }
        };

        let n_c = c_active.nrows();
        let (phi, s_pp_local) = match &local {
            Some(solver) => {
                let (phi, s_pp, iterations) = primal_basis(
                    solver,
                    pd.active.len(),
                    &pd.interface_pos_in_active,
                    n_c,
                    opts.basis_tol,
                    INNER_MAX,
                )?;
                counters.basis_iterations.fetch_add(iterations, Ordering::Relaxed);
                counters.basis_solves.fetch_add(n_c, Ordering::Relaxed);
                (phi, s_pp)
            }
            None => (
                DMatrix::zeros(pd.interface.len(), 0),
                DMatrix::zeros(0, 0),
            ),
        };

        let g_tilde = if local.is_some() {
            let (x, its) = interior.solve_accurate(
                &f_interior,
                opts.interior_tol,
                opts.dirichlet_cycles,
            )?;
            Counters::add(&counters.gtilde_iterations, &counters.gtilde_solves, its);
            let mut g = f_interface.clone();
            if !x.is_empty() {
                let kx = k_bi.matvec(&x);
                for i in 0..g.len() {
                    g[i] -= kx[i];
                }
            }
            g
        } else {
            Vec::new()
        };

        Ok(Self {
            k_ii,
            k_ib,
            k_bi,
            k_bb,
            k_active,
            f_interior,
            f_interface,
            f_active,
            c_iface,
            c_active,
            primal_slots,
            floating,
            interior,
            local,
            neumann,
            phi,
            s_pp_local,
            g_tilde,
            interface_pos_in_active: pd.interface_pos_in_active.clone(),
            dirichlet_cycles: opts.dirichlet_cycles,
        })
    }

    /// Local Schur complement action S w = K_BB w - K_BI K_II^{-1} K_IB w,
    /// with the interior inverse replaced by its fixed approximation.
    pub fn schur_apply(&self, w: &[f64]) -> Vec<f64> {
        let mut s = self.k_bb.matvec(w);
        if !self.f_interior.is_empty() {
            let t = self.k_ib.matvec(w);
            let z = self.interior.apply_fixed(&t, self.dirichlet_cycles);
            let kz = self.k_bi.matvec(&z);
            for i in 0..s.len() {
                s[i] -= kz[i];
            }
        }
        s
    }

    /// Constrained local solve with interface-supported rhs; returns the
    /// interface trace and the inner iteration count.
    fn dual_solve(&self, r_b: &[f64], tol: f64) -> Result<(Vec<f64>, usize), LinAlgError> {
        let solver = self.local.as_ref().expect("variant carries a local solver");
        let mut r = vec![0.0; self.f_active.len()];
        for (i, &pos) in self.interface_positions().iter().enumerate() {
            r[pos] = r_b[i];
        }
        let g = vec![0.0; self.c_active.nrows()];
        let (w, _, its) = solver.solve(&r, &g, tol, INNER_MAX)?;
        let trace = self.interface_positions().iter().map(|&pos| w[pos]).collect();
        Ok((trace, its))
    }

    fn interface_positions(&self) -> &[usize] {
        &self.interface_pos_in_active
    }
}

/// The assembled dual problem of the torn formulation: the Schur operator
/// on the multiplier space, its scaled Dirichlet preconditioner, and the
/// solution recovery path.
pub struct DualSystem<'a> {
    pub part: &'a Partition,
    pub ops: &'a [PatchOperators],
    pub jump: SparseMatrix,
    pub scaled_jump: SparseMatrix,
    coarse: Option<Cholesky<f64, Dyn>>,
    pub counters: &'a Counters,
    dual_tol: f64,
}

impl<'a> DualSystem<'a> {
    pub fn assemble(
        part: &'a Partition,
        ops: &'a [PatchOperators],
        opts: &SolveOptions,
        counters: &'a Counters,
    ) -> Result<Self, SolverError> {
        let n_pi = part.num_primal();
        let mut s_pp = DMatrix::<f64>::zeros(n_pi, n_pi);
        for op in ops {
            for (i, &gi) in op.primal_slots.iter().enumerate() {
                for (j, &gj) in op.primal_slots.iter().enumerate() {
                    s_pp[(gi, gj)] += op.s_pp_local[(i, j)];
                }
            }
        }
        let coarse = if n_pi == 0 {
            None
        } else {
            Some(Cholesky::new(s_pp).ok_or_else(|| {
                SolverError::LinAlg(LinAlgError::Breakdown(
                    "coarse primal matrix is not positive definite".into(),
                ))
            })?)
        };
        Ok(Self {
            part,
            ops,
            jump: part.jump_matrix(),
            scaled_jump: part.scaled_jump_matrix(),
            coarse,
            counters,
            dual_tol: opts.dual_tol,
        })
    }

    fn patch_slice<'v>(&self, v: &'v [f64], k: usize) -> &'v [f64] {
        &v[self.part.w_offsets[k]..self.part.w_offsets[k + 1]]
    }

    /// Solve of the partially continuous problem: independent constrained
    /// local solves plus one coarse solve over the primal coordinates.
    pub fn stilde_solve(&self, r: &[f64]) -> Result<Vec<f64>, LinAlgError> {
        let n_pi = self.part.num_primal();
        let mut r_pi = vec![0.0; n_pi];
        for (k, op) in self.ops.iter().enumerate() {
            let rk = self.patch_slice(r, k);
            for (j, &slot) in op.primal_slots.iter().enumerate() {
                let mut acc = 0.0;
                for i in 0..rk.len() {
                    acc += op.phi[(i, j)] * rk[i];
                }
                r_pi[slot] += acc;
            }
        }
        let q = match &self.coarse {
            Some(chol) => chol.solve(&DVector::from_vec(r_pi)),
            None => DVector::zeros(0),
        };

        let locals: Vec<Result<(Vec<f64>, usize), LinAlgError>> = self
            .ops
            .par_iter()
            .enumerate()
            .map(|(k, op)| op.dual_solve(self.patch_slice(r, k), self.dual_tol))
            .collect();

        let mut w = vec![0.0; self.part.w_dim()];
        for (k, res) in locals.into_iter().enumerate() {
            let (z, its) = res?;
            Counters::add(&self.counters.dual_iterations, &self.counters.dual_solves, its);
            let op = &self.ops[k];
            let out = &mut w[self.part.w_offsets[k]..self.part.w_offsets[k + 1]];
            out.copy_from_slice(&z);
            for (j, &slot) in op.primal_slots.iter().enumerate() {
                let qv = q[slot];
                for i in 0..out.len() {
                    out[i] += op.phi[(i, j)] * qv;
                }
            }
        }
        Ok(w)
    }

    /// Dual Schur operator F = B Stilde^{-1} B^T.
    pub fn apply_f(&self, lambda: &[f64]) -> Result<Vec<f64>, LinAlgError> {
        let v = self.jump.matvec_transpose(lambda);
        let w = self.stilde_solve(&v)?;
        Ok(self.jump.matvec(&w))
    }

    /// Stacked reduced right-hand sides of all patches.
    pub fn gtilde_stacked(&self) -> Vec<f64> {
        let mut g = vec![0.0; self.part.w_dim()];
        for (k, op) in self.ops.iter().enumerate() {
            g[self.part.w_offsets[k]..self.part.w_offsets[k + 1]]
                .copy_from_slice(&op.g_tilde);
        }
        g
    }

    /// Right-hand side of the dual problem.
    /// Jump of the zero-multiplier interface solution, plus that solution's
    /// norm. The norm is the natural scale of the jump: on symmetric data
    /// the torn patches can already agree and the jump is roundoff, which
    /// the caller must not feed to the outer iteration as a target.
    pub fn dual_rhs(&self) -> Result<(Vec<f64>, f64), LinAlgError> {
        let w = self.stilde_solve(&self.gtilde_stacked())?;
        let scale = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok((self.jump.matvec(&w), scale))
    }

    /// Scaled Dirichlet preconditioner B_D S B_D^T.
    pub fn apply_msd(&self, r: &[f64]) -> Vec<f64> {
        let v = self.scaled_jump.matvec_transpose(r);
        let pieces: Vec<Vec<f64>> = self
            .ops
            .par_iter()
            .enumerate()
            .map(|(k, op)| op.schur_apply(self.patch_slice(&v, k)))
            .collect();
        let mut s = vec![0.0; self.part.w_dim()];
        for (k, piece) in pieces.into_iter().enumerate() {
            s[self.part.w_offsets[k]..self.part.w_offsets[k + 1]].copy_from_slice(&piece);
        }
        self.scaled_jump.matvec(&s)
    }

    /// Full per-patch coefficient vectors for a converged multiplier:
    /// interface values from the partially continuous solve, interiors by
    /// accurate backsolves, zeros on eliminated dofs.
    pub fn recover(
        &self,
        lambda: &[f64],
        interior_tol: f64,
    ) -> Result<Vec<Vec<f64>>, LinAlgError> {
        let mut rhs = self.gtilde_stacked();
        let bt = self.jump.matvec_transpose(lambda);
        for i in 0..rhs.len() {
            rhs[i] -= bt[i];
        }
        let w = self.stilde_solve(&rhs)?;
        let interiors: Vec<Result<(Vec<f64>, usize), LinAlgError>> = self
            .ops
            .par_iter()
            .enumerate()
            .map(|(k, op)| {
                let wb = self.patch_slice(&w, k);
                if op.f_interior.is_empty() {
                    return Ok((Vec::new(), 0));
                }
                let mut b = op.f_interior.clone();
                let kw = op.k_ib.matvec(wb);
                for i in 0..b.len() {
                    b[i] -= kw[i];
                }
                op.interior.solve_accurate(&b, interior_tol, op.dirichlet_cycles)
            })
            .collect();

        let mut out = Vec::with_capacity(self.ops.len());
        for (k, res) in interiors.into_iter().enumerate() {
            let (ui, its) = res?;
            Counters::add(&self.counters.gtilde_iterations, &self.counters.gtilde_solves, its);
            let pd = &self.part.patches[k];
            let mut full = vec![0.0; pd.num_dofs()];
            for (pos, &d) in pd.interior.iter().enumerate() {
                full[d] = ui[pos];
            }
            let wb = self.patch_slice(&w, k);
            for (pos, &d) in pd.interface.iter().enumerate() {
                full[d] = wb[pos];
            }
            out.push(full);
        }
        Ok(out)
    }
}

/// `LinearOperator` adapter around the dual Schur operator. Inner solve
/// failures are parked in `error` and surfaced after the outer iteration.
pub struct FOperator<'a> {
    pub sys: &'a DualSystem<'a>,
    pub error: Mutex<Option<LinAlgError>>,
}

impl LinearOperator for FOperator<'_> {
    fn dim(&self) -> usize {
        self.sys.jump.nrows()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        match self.sys.apply_f(x) {
            Ok(v) => y.copy_from_slice(&v),
            Err(e) => {
                *self.error.lock().unwrap() = Some(e);
                y.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }
}

/// `LinearOperator` adapter around the scaled Dirichlet preconditioner.
pub struct MsdOperator<'a> {
    pub sys: &'a DualSystem<'a>,
}

impl LinearOperator for MsdOperator<'_> {
    fn dim(&self) -> usize {
        self.sys.jump.nrows()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(&self.sys.apply_msd(x));
    }
}

/// Assemble stiffness and load of every patch in parallel.
pub fn assemble_all(
    patches: &[Patch],
    load: &(dyn Fn(f64, f64) -> f64 + Sync),
) -> Vec<(SparseMatrix, Vec<f64>)> {
    patches
        .par_iter()
        .map(|p| (assemble_stiffness(p), assemble_load(p, load)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{annulus_load, MultiPatch};
    use crate::linalg::dot;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn build_ops(
        mp: &MultiPatch,
        part: &Partition,
        variant: Variant,
        opts: &SolveOptions,
        counters: &Counters,
    ) -> Vec<PatchOperators> {
        let assembled = assemble_all(&mp.patches, &|x, y| annulus_load(1.0, 2.0, x, y));
        mp.patches
            .iter()
            .enumerate()
            .map(|(k, p)| {
                PatchOperators::build(
                    p,
                    k,
                    &part.patches[k],
                    part,
                    &assembled[k].0,
                    &assembled[k].1,
                    variant,
                    opts,
                    counters,
                )
                .unwrap()
            })
            .collect()
    }

    fn dense_schur(op: &PatchOperators) -> DMatrix<f64> {
        let kbb = op.k_bb.to_dense();
        if op.f_interior.is_empty() {
            return kbb;
        }
        let kii = op.k_ii.to_dense();
        let kib = op.k_ib.to_dense();
        let kbi = op.k_bi.to_dense();
        &kbb - kbi * kii.lu().solve(&kib).unwrap()
    }

    /// Rows forcing the primal constraints to agree across patches; their
    /// kernel is exactly the partially continuous space.
    fn primal_jump_rows(part: &Partition) -> DMatrix<f64> {
        let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
        for v in &part.vertex_primals {
            for pair in v.members.windows(2) {
                let wa = part.w_index(pair[0].0, pair[0].1).unwrap();
                let wb = part.w_index(pair[1].0, pair[1].1).unwrap();
                rows.push(vec![(wa, 1.0), (wb, -1.0)]);
            }
        }
        for e in &part.edge_primals {
            let mut row = Vec::new();
            for &(full, w) in &e.terms_a {
                row.push((part.w_index(e.patch_a, full).unwrap(), w));
            }
            for &(full, w) in &e.terms_b {
                row.push((part.w_index(e.patch_b, full).unwrap(), -w));
            }
            rows.push(row);
        }
        let mut d = DMatrix::<f64>::zeros(rows.len(), part.w_dim());
        for (r, row) in rows.iter().enumerate() {
            for &(c, v) in row {
                d[(r, c)] += v;
            }
        }
        d
    }

    /// Exact solve of the partially continuous problem through the dense
    /// saddle system [[S, D^T], [D, 0]].
    fn stilde_oracle(s: &DMatrix<f64>, d: &DMatrix<f64>, r: &[f64]) -> Vec<f64> {
        let n = s.nrows();
        let m = d.nrows();
        let mut kkt = DMatrix::<f64>::zeros(n + m, n + m);
        kkt.view_mut((0, 0), (n, n)).copy_from(s);
        kkt.view_mut((n, 0), (m, n)).copy_from(d);
        kkt.view_mut((0, n), (n, m)).copy_from(&d.transpose());
        let mut rhs = DVector::<f64>::zeros(n + m);
        for i in 0..n {
            rhs[i] = r[i];
        }
        let sol = kkt.lu().solve(&rhs).unwrap();
        sol.as_slice()[..n].to_vec()
    }

    fn blockdiag_schur(part: &Partition, ops: &[PatchOperators]) -> DMatrix<f64> {
        let n = part.w_dim();
        let mut s = DMatrix::<f64>::zeros(n, n);
        for (k, op) in ops.iter().enumerate() {
            let sk = dense_schur(op);
            let off = part.w_offsets[k];
            s.view_mut((off, off), (sk.nrows(), sk.ncols())).copy_from(&sk);
        }
        s
    }

    #[test]
    fn gtilde_matches_dense_elimination() {
        let mp = MultiPatch::quarter_annulus(2, 1, 1.0, 2.0, 2, 2);
        let part = Partition::build(&mp).unwrap();
        let opts = SolveOptions::default();
        let counters = Counters::default();
        let ops = build_ops(&mp, &part, Variant::DirectDirect, &opts, &counters);
        for op in &ops {
            let kii = op.k_ii.to_dense();
            let kbi = op.k_bi.to_dense();
            let fi = DVector::from_vec(op.f_interior.clone());
            let x = kii.lu().solve(&fi).unwrap();
            let want = DVector::from_vec(op.f_interface.clone()) - kbi * x;
            for i in 0..want.len() {
                assert!(
                    (op.g_tilde[i] - want[i]).abs() < 1e-10,
                    "entry {i}: {} vs {}",
                    op.g_tilde[i],
                    want[i]
                );
            }
        }
    }

    #[test]
    fn dual_operator_and_rhs_match_the_dense_oracle() {
        let mp = MultiPatch::quarter_annulus(2, 2, 1.0, 2.0, 2, 2);
        let part = Partition::build(&mp).unwrap();
        let opts = SolveOptions::default();
        let counters = Counters::default();
        let ops = build_ops(&mp, &part, Variant::DirectDirect, &opts, &counters);
        let sys = DualSystem::assemble(&part, &ops, &opts, &counters).unwrap();
        let s = blockdiag_schur(&part, &ops);
        let d = primal_jump_rows(&part);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..3 {
            let lam: Vec<f64> =
                (0..part.num_multipliers).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let got = sys.apply_f(&lam).unwrap();
            let v = sys.jump.matvec_transpose(&lam);
            let want = sys.jump.matvec(&stilde_oracle(&s, &d, &v));
            let scale = want.iter().map(|v| v.abs()).fold(1e-30, f64::max);
            for i in 0..got.len() {
                assert!(
                    (got[i] - want[i]).abs() < 1e-7 * scale,
                    "F lambda [{i}]: {} vs {}",
                    got[i],
                    want[i]
                );
            }
        }
        let (got_rhs, _) = sys.dual_rhs().unwrap();
        let want_rhs = sys.jump.matvec(&stilde_oracle(&s, &d, &sys.gtilde_stacked()));
        let scale = want_rhs.iter().map(|v| v.abs()).fold(1e-30, f64::max);
        for i in 0..got_rhs.len() {
            assert!((got_rhs[i] - want_rhs[i]).abs() < 1e-7 * scale);
        }
    }

    #[test]
    fn inexact_dual_operator_tracks_the_exact_one() {
        let mp = MultiPatch::quarter_annulus(2, 2, 1.0, 2.0, 2, 2);
        let part = Partition::build(&mp).unwrap();
        let opts = SolveOptions::default();
        let counters = Counters::default();
        let ops = build_ops(&mp, &part, Variant::MgMg, &opts, &counters);
        let sys = DualSystem::assemble(&part, &ops, &opts, &counters).unwrap();
        let s = blockdiag_schur(&part, &ops);
        let d = primal_jump_rows(&part);
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let lam: Vec<f64> =
            (0..part.num_multipliers).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let got = sys.apply_f(&lam).unwrap();
        let v = sys.jump.matvec_transpose(&lam);
        let want = sys.jump.matvec(&stilde_oracle(&s, &d, &v));
        let scale = want.iter().map(|v| v.abs()).fold(1e-30, f64::max);
        for i in 0..got.len() {
            assert!(
                (got[i] - want[i]).abs() < 1e-7 * scale,
                "inexact F lambda [{i}]: {} vs {}",
                got[i],
                want[i]
            );
        }
        assert!(counters.dual_solves.load(Ordering::Relaxed) > 0);
        assert!(counters.dual_iterations.load(Ordering::Relaxed) > 0);
    }

    #[test]
    fn scaled_dirichlet_preconditioner_is_symmetric_positive() {
        let mp = MultiPatch::quarter_annulus(2, 2, 1.0, 2.0, 2, 2);
        let part = Partition::build(&mp).unwrap();
        let opts = SolveOptions::default();
        let counters = Counters::default();
        let ops = build_ops(&mp, &part, Variant::DirectDirect, &opts, &counters);
        let sys = DualSystem::assemble(&part, &ops, &opts, &counters).unwrap();
        let n = part.num_multipliers;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..4 {
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mx = sys.apply_msd(&x);
            let my = sys.apply_msd(&y);
            let lhs = dot(&mx, &y);
            let rhs = dot(&x, &my);
            let scale = lhs.abs().max(rhs.abs()).max(1e-30);
            assert!(((lhs - rhs) / scale).abs() < 1e-9, "{lhs} vs {rhs}");
            assert!(dot(&mx, &x) > 0.0);
        }
    }

    #[test]
    fn stilde_solution_is_partially_continuous() {
        let mp = MultiPatch::quarter_annulus(2, 2, 1.0, 2.0, 2, 2);
        let part = Partition::build(&mp).unwrap();
        let opts = SolveOptions::default();
        let counters = Counters::default();
        let ops = build_ops(&mp, &part, Variant::DirectDirect, &opts, &counters);
        let sys = DualSystem::assemble(&part, &ops, &opts, &counters).unwrap();
        let d = primal_jump_rows(&part);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let r: Vec<f64> = (0..part.w_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w = sys.stilde_solve(&r).unwrap();
        let jumps = &d * DVector::from_vec(w.clone());
        let scale = w.iter().map(|v| v.abs()).fold(1e-30, f64::max);
        for i in 0..jumps.len() {
            assert!(jumps[i].abs() < 1e-9 * scale, "primal jump {i}: {}", jumps[i]);
        }
    }
}
