//! Assembled saddle point formulation of the torn problem.
//!
//! The primal constraints are built directly into the coordinates: on every
//! constrained edge one designated coefficient is traded for the weighted
//! edge average through a local change of basis, and the vertex and average
//! coordinates are then shared between patches during assembly. The
//! remaining continuity conditions stay as multiplier rows, and the whole
//! saddle system is solved at once by a conjugate gradient method in a
//! nonstandard inner product: the displacement block is preconditioned by
//! patch-local multigrid sweeps on the patch private coordinates combined
//! with a small direct solve on the shared primal ones, the multiplier
//! block by the scaled Dirichlet operator. No large system is solved
//! exactly.

use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;

use crate::geometry::MultiPatch;
use crate::linalg::{
    bpcg, calibrate_spd_order, pcg, LinAlgError, LinearOperator, OrderDirection, ScaledOperator,
    SparseMatrix,
};
use crate::multigrid::MgCycles;

type DenseCholesky = Cholesky<f64, Dyn>;

use super::operators::{assemble_all, Counters, PatchOperators, INNER_MAX};
use super::partition::Partition;
use super::solve::{Solution, Timings};
use super::{SolveOptions, SolverError, Variant};

/// Change of coordinates of one patch. `t` maps transformed coefficients to
/// the original active ones, `e` is its inverse, and `slot` gives the global
/// coordinate of every transformed position: primal coordinates are shared
/// between patches, the rest are patch private.
struct PatchTransform {
    t: SparseMatrix,
    e: SparseMatrix,
    slot: Vec<usize>,
}

fn active_position(part: &Partition, k: usize, full: usize) -> Result<usize, SolverError> {
    part.patches[k].active_position(full).ok_or_else(|| {
        SolverError::Decomposition(format!("dof {full} of patch {k} is not active"))
    })
}

fn build_transforms(part: &Partition) -> Result<(Vec<PatchTransform>, usize), SolverError> {
    let n_patches = part.patches.len();
    let nv = part.vertex_primals.len();
    let mut primal_at: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_patches];
    for (vi, v) in part.vertex_primals.iter().enumerate() {
        for &(k, d) in &v.members {
            primal_at[k].push((active_position(part, k, d)?, vi));
        }
    }
    // Per patch: (designated position, average terms in active coordinates).
    let mut edge_rows: Vec<Vec<(usize, Vec<(usize, f64)>)>> = vec![Vec::new(); n_patches];
    for (ei, e) in part.edge_primals.iter().enumerate() {
        for (k, terms, designated) in [
            (e.patch_a, &e.terms_a, e.designated_a),
            (e.patch_b, &e.terms_b, e.designated_b),
        ] {
            let j = active_position(part, k, designated)?;
            let mut mapped = Vec::with_capacity(terms.len());
            for &(full, w) in terms {
                mapped.push((active_position(part, k, full)?, w));
            }
            primal_at[k].push((j, nv + ei));
            edge_rows[k].push((j, mapped));
        }
    }

    let mut transforms = Vec::with_capacity(n_patches);
    let mut next_private = part.num_primal();
    for k in 0..n_patches {
        let n = part.patches[k].active.len();
        let mut slot = vec![usize::MAX; n];
        for &(pos, s) in &primal_at[k] {
            slot[pos] = s;
        }
        for s in slot.iter_mut() {
            if *s == usize::MAX {
                *s = next_private;
                next_private += 1;
            }
        }
        let mut is_designated = vec![false; n];
        for &(j, _) in &edge_rows[k] {
            is_designated[j] = true;
        }
        let mut te = Vec::new();
        let mut ee = Vec::new();
        for i in 0..n {
            if !is_designated[i] {
                te.push((i, i, 1.0));
                ee.push((i, i, 1.0));
            }
        }
        for (j, terms) in &edge_rows[k] {
            let wj = terms
                .iter()
                .find(|&&(p, _)| p == *j)
                .map(|&(_, w)| w)
                .ok_or_else(|| {
                    SolverError::Decomposition(format!(
                        "designated dof of patch {k} missing from its average"
                    ))
                })?;
            for &(p, w) in terms {
                ee.push((*j, p, w));
                if p != *j {
                    te.push((*j, p, -w / wj));
                }
            }
            te.push((*j, *j, 1.0 / wj));
        }
        let t = SparseMatrix::from_triplets(n, n, &te)?;
        let e = SparseMatrix::from_triplets(n, n, &ee)?;
        transforms.push(PatchTransform { t, e, slot });
    }
    Ok((transforms, next_private))
}

/// One patch block of the displacement preconditioner: a multigrid sweep on
/// the regularized patch matrix, conjugated into the transformed
/// coordinates and then projected so that the primal coordinates are
/// annihilated on input and output. The projection G - GC (C^T G C)^{-1}
/// C^T G turns an approximation of the full patch inverse into one of the
/// inverse of the non-primal block, and it preserves one-sided spectral
/// bounds because its value is a minimum of quadratic forms in G.
struct PatchBlock<'a> {
    mg: MgCycles<'a>,
    tr: &'a PatchTransform,
    primal_pos: Vec<usize>,
    gc: DMatrix<f64>,
    gram: Option<DenseCholesky>,
}

impl PatchBlock<'_> {
    fn raw(&self, r: &[f64]) -> Vec<f64> {
        let w = self.tr.e.matvec_transpose(r);
        let z = self.mg.apply(&w);
        self.tr.e.matvec(&z)
    }

    fn apply(&self, r: &[f64]) -> Vec<f64> {
        let mut g = self.raw(r);
        if let Some(gram) = &self.gram {
            let ctg = self.gc.tr_mul(&DVector::from_column_slice(r));
            let mu = gram.solve(&ctg);
            let corr = &self.gc * mu;
            for i in 0..g.len() {
                g[i] -= corr[i];
            }
        }
        g
    }
}

fn sweep_blocks(blocks: &[PatchBlock<'_>], n: usize, v: &[f64]) -> Vec<f64> {
    let locals: Vec<Vec<f64>> = blocks
        .par_iter()
        .map(|block| {
            let r: Vec<f64> = block.tr.slot.iter().map(|&s| v[s]).collect();
            block.apply(&r)
        })
        .collect();
    let mut out = vec![0.0; n];
    for (block, local) in blocks.iter().zip(&locals) {
        for (i, &s) in block.tr.slot.iter().enumerate() {
            out[s] += local[i];
        }
    }
    out
}

/// Converged counterpart of a patch block, used only during setup. The
/// patch solves run to a tight tolerance with the sweep operator as
/// preconditioner, and the projection columns are themselves converged
/// solves so that the annihilation of primal coordinates is exact.
struct SetupBlock<'a> {
    fine: &'a SparseMatrix,
    mg: MgCycles<'a>,
    tr: &'a PatchTransform,
    primal_pos: Vec<usize>,
    tol: f64,
    gc: DMatrix<f64>,
    gram: Option<DenseCholesky>,
}

impl SetupBlock<'_> {
    fn solve(&self, r: &[f64]) -> Result<(Vec<f64>, usize), LinAlgError> {
        let w = self.tr.e.matvec_transpose(r);
        let (z, report) = pcg(self.fine, Some(&self.mg), &w, self.tol, INNER_MAX)?;
        if !report.converged() {
            return Err(LinAlgError::Breakdown(format!(
                "patch extension solve stalled at residual {:.3e}",
                report.residual
            )));
        }
        Ok((self.tr.e.matvec(&z), report.iterations))
    }

    fn apply(&self, r: &[f64]) -> Result<(Vec<f64>, usize), LinAlgError> {
        let (mut g, its) = self.solve(r)?;
        if let Some(gram) = &self.gram {
            let ctg = self.gc.tr_mul(&DVector::from_column_slice(r));
            let mu = gram.solve(&ctg);
            let corr = &self.gc * mu;
            for i in 0..g.len() {
                g[i] -= corr[i];
            }
        }
        Ok((g, its))
    }
}

/// Displacement block preconditioner in factorized form: the non-primal
/// coordinates are patch exclusive, so their block is handled by the
/// projected patch sweeps, while the few shared primal coordinates get a
/// dense direct solve of the coarse Schur complement. The Schur matrix and
/// the columns extending primal corrections into the patches are
/// precomputed at setup from converged patch solves; only the additive
/// sweep term stays inexact during the iteration, which traps the
/// preconditioned spectrum between the sweep quality and one independently
/// of the refinement level.
struct DisplacementPreconditioner<'a> {
    blocks: Vec<PatchBlock<'a>>,
    extension: DMatrix<f64>,
    schur: Option<DenseCholesky>,
    n: usize,
}

impl<'a> DisplacementPreconditioner<'a> {
    fn build(
        k_tilde: &'a SparseMatrix,
        ops: &'a [PatchOperators],
        transforms: &'a [PatchTransform],
        n_primal: usize,
        cycles: usize,
        setup_tol: f64,
        counters: &Counters,
    ) -> Result<Self, LinAlgError> {
        let n = k_tilde.nrows();
        let blocks: Vec<PatchBlock<'a>> = ops
            .par_iter()
            .zip(transforms)
            .map(|(op, tr)| {
                let mg = op
                    .neumann
                    .as_ref()
                    .expect("saddle variant carries local hierarchies")
                    .preconditioner(cycles);
                let m = tr.slot.len();
                let primal_pos: Vec<usize> =
                    (0..m).filter(|&i| tr.slot[i] < n_primal).collect();
                let mut block =
                    PatchBlock { mg, tr, primal_pos, gc: DMatrix::zeros(m, 0), gram: None };
                let nc = block.primal_pos.len();
                if nc > 0 {
                    let mut gc = DMatrix::zeros(m, nc);
                    let mut e = vec![0.0; m];
                    for (j, &p) in block.primal_pos.iter().enumerate() {
                        e[p] = 1.0;
                        let col = block.raw(&e);
                        e[p] = 0.0;
                        for i in 0..m {
                            gc[(i, j)] = col[i];
                        }
                    }
                    let mut gram = DMatrix::zeros(nc, nc);
                    for a in 0..nc {
                        for b in 0..nc {
                            gram[(a, b)] = gc[(block.primal_pos[a], b)];
                        }
                    }
                    gram = (gram.clone() + gram.transpose()) * 0.5;
                    let chol = Cholesky::new(gram).ok_or(LinAlgError::NotSpd {
                        index: 0,
                        value: f64::NAN,
                    })?;
                    block.gc = gc;
                    block.gram = Some(chol);
                }
                Ok(block)
            })
            .collect::<Result<Vec<_>, LinAlgError>>()?;

        let setup: Vec<SetupBlock<'a>> = ops
            .par_iter()
            .zip(transforms)
            .map(|(op, tr)| {
                let hierarchy =
                    op.neumann.as_ref().expect("saddle variant carries local hierarchies");
                let m = tr.slot.len();
                let primal_pos: Vec<usize> =
                    (0..m).filter(|&i| tr.slot[i] < n_primal).collect();
                let mut sb = SetupBlock {
                    fine: hierarchy.fine_matrix(),
                    mg: hierarchy.preconditioner(cycles),
                    tr,
                    primal_pos,
                    tol: setup_tol,
                    gc: DMatrix::zeros(m, 0),
                    gram: None,
                };
                let nc = sb.primal_pos.len();
                if nc > 0 {
                    let mut gc = DMatrix::zeros(m, nc);
                    let mut e = vec![0.0; m];
                    for (j, &p) in sb.primal_pos.iter().enumerate() {
                        e[p] = 1.0;
                        let (col, its) = sb.solve(&e)?;
                        Counters::add(&counters.basis_iterations, &counters.basis_solves, its);
                        e[p] = 0.0;
                        for i in 0..m {
                            gc[(i, j)] = col[i];
                        }
                    }
                    let mut gram = DMatrix::zeros(nc, nc);
                    for a in 0..nc {
                        for b in 0..nc {
                            gram[(a, b)] = gc[(sb.primal_pos[a], b)];
                        }
                    }
                    gram = (gram.clone() + gram.transpose()) * 0.5;
                    let chol = Cholesky::new(gram).ok_or(LinAlgError::NotSpd {
                        index: 0,
                        value: f64::NAN,
                    })?;
                    sb.gc = gc;
                    sb.gram = Some(chol);
                }
                Ok(sb)
            })
            .collect::<Result<Vec<_>, LinAlgError>>()?;

        let mut extension = DMatrix::zeros(n, n_primal);
        let schur = if n_primal > 0 {
            let ext_cols: Vec<Vec<f64>> = (0..n_primal)
                .into_par_iter()
                .map(|p| {
                    let mut kcol = vec![0.0; n];
                    let (cs, vs) = k_tilde.row(p);
                    for (&c, &v) in cs.iter().zip(vs) {
                        kcol[c] = v;
                    }
                    let mut col = vec![0.0; n];
                    col[p] = 1.0;
                    for sb in &setup {
                        let r: Vec<f64> = sb.tr.slot.iter().map(|&s| kcol[s]).collect();
                        if r.iter().all(|&v| v == 0.0) {
                            continue;
                        }
                        let (j, its) = sb.apply(&r)?;
                        Counters::add(&counters.basis_iterations, &counters.basis_solves, its);
                        for (i, &s) in sb.tr.slot.iter().enumerate() {
                            col[s] -= j[i];
                        }
                    }
                    Ok(col)
                })
                .collect::<Result<Vec<_>, LinAlgError>>()?;
            for (p, col) in ext_cols.iter().enumerate() {
                for i in 0..n {
                    extension[(i, p)] = col[i];
                }
            }
            let mut s = DMatrix::zeros(n_primal, n_primal);
            for i in 0..n_primal {
                let (cs, vs) = k_tilde.row(i);
                for p in 0..n_primal {
                    let mut acc = 0.0;
                    for (&c, &v) in cs.iter().zip(vs) {
                        acc += v * extension[(c, p)];
                    }
                    s[(i, p)] = acc;
                }
            }
            s = (s.clone() + s.transpose()) * 0.5;
            Some(Cholesky::new(s).ok_or(LinAlgError::NotSpd { index: 0, value: f64::NAN })?)
        } else {
            None
        };
        Ok(Self { blocks, extension, schur, n })
    }
}

impl LinearOperator for DisplacementPreconditioner<'_> {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        let n = self.n;
        let w = sweep_blocks(&self.blocks, n, v);
        let Some(schur) = &self.schur else {
            out.copy_from_slice(&w);
            return;
        };
        let rp = self.extension.tr_mul(&DVector::from_column_slice(v));
        let z = schur.solve(&rp);
        let corr = &self.extension * z;
        for i in 0..n {
            out[i] = w[i] + corr[i];
        }
    }
}

/// Scaled Dirichlet preconditioner acting on the multiplier block.
struct ScaledDirichlet<'a> {
    part: &'a Partition,
    ops: &'a [PatchOperators],
    jump: SparseMatrix,
}

impl LinearOperator for ScaledDirichlet<'_> {
    fn dim(&self) -> usize {
        self.jump.nrows()
    }

    fn apply_into(&self, r: &[f64], out: &mut [f64]) {
        let v = self.jump.matvec_transpose(r);
        let pieces: Vec<Vec<f64>> = self
            .ops
            .par_iter()
            .enumerate()
            .map(|(k, op)| {
                op.schur_apply(&v[self.part.w_offsets[k]..self.part.w_offsets[k + 1]])
            })
            .collect();
        let mut sv = Vec::with_capacity(v.len());
        for piece in pieces {
            sv.extend_from_slice(&piece);
        }
        self.jump.matvec_into(&sv, out);
    }
}

struct SaddleSystem {
    ops: Vec<PatchOperators>,
    transforms: Vec<PatchTransform>,
    k_tilde: SparseMatrix,
    f_tilde: Vec<f64>,
    b_tilde: SparseMatrix,
}

fn assemble_saddle(
    mp: &MultiPatch,
    part: &Partition,
    assembled: &[(SparseMatrix, Vec<f64>)],
    opts: &SolveOptions,
    counters: &Counters,
) -> Result<SaddleSystem, SolverError> {
    let ops: Vec<PatchOperators> = mp
        .patches
        .par_iter()
        .enumerate()
        .map(|(k, p)| {
            PatchOperators::build(
                p,
                k,
                &part.patches[k],
                part,
                &assembled[k].0,
                &assembled[k].1,
                Variant::MgMgSaddle,
                opts,
                counters,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    let (transforms, n_global) = build_transforms(part)?;

    let mut k_trips = Vec::new();
    let mut f_tilde = vec![0.0; n_global];
    for (op, tr) in ops.iter().zip(&transforms) {
        let kt = op.k_active.triple_product(&tr.t)?;
        for (i, j, v) in kt.triplets() {
            k_trips.push((tr.slot[i], tr.slot[j], v));
        }
        let ft = tr.t.matvec_transpose(&op.f_active);
        for (i, v) in ft.into_iter().enumerate() {
            f_tilde[tr.slot[i]] += v;
        }
    }
    let k_tilde = SparseMatrix::from_triplets(n_global, n_global, &k_trips)?;

    // Multiplier rows in the transformed coordinates. Rows matching a pair
    // of primal coordinates cancel during assembly; they stay as padding so
    // the multiplier space is shared with the other variants.
    let mut b_trips = Vec::new();
    let mut row = 0;
    for class in &part.classes {
        for pair in class.members.windows(2) {
            for (&(k, full), sign) in [(&pair[0], 1.0), (&pair[1], -1.0)] {
                let pos = active_position(part, k, full)?;
                let (cols, vals) = transforms[k].t.row(pos);
                for (&c, &v) in cols.iter().zip(vals) {
                    b_trips.push((row, transforms[k].slot[c], sign * v));
                }
            }
            row += 1;
        }
    }
    debug_assert_eq!(row, part.num_multipliers);
    let b_tilde = SparseMatrix::from_triplets(part.num_multipliers, n_global, &b_trips)?;
    Ok(SaddleSystem { ops, transforms, k_tilde, f_tilde, b_tilde })
}

pub fn solve(
    mp: &MultiPatch,
    load: &(dyn Fn(f64, f64) -> f64 + Sync),
    part: &Partition,
    opts: &SolveOptions,
) -> Result<Solution, SolverError> {
    let t0 = Instant::now();
    let assembled = assemble_all(&mp.patches, load);
    let t_assembly = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let counters = Counters::default();
    let SaddleSystem { ops, transforms, k_tilde, f_tilde, b_tilde } =
        assemble_saddle(mp, part, &assembled, opts, &counters)?;

    let prec = DisplacementPreconditioner::build(
        &k_tilde,
        &ops,
        &transforms,
        part.num_primal(),
        opts.neumann_cycles,
        opts.basis_tol,
        &counters,
    )?;
    // The transformed eigenvalues of the positive definite reformulation
    // cluster around one exactly when the scaled displacement block sits
    // just below the matrix, so the margin is kept small; pushing the block
    // far below the matrix spreads the multiplier cluster away from the
    // displacement cluster and roughly doubles the iteration count.
    let mut scale =
        calibrate_spd_order(&k_tilde, &prec, OrderDirection::Below, opts.margin, opts.seed)?;
    let s0_inv = ScaledDirichlet { part, ops: &ops, jump: part.scaled_jump_matrix() };
    let t_setup = t1.elapsed().as_secs_f64();

    // The calibration is a Ritz estimate and can land above the smallest
    // eigenvalue; a violated ordering surfaces as an indefinite inner
    // product inside the iteration, in which case the displacement block is
    // scaled further down and the solve restarted.
    let t2 = Instant::now();
    let g = vec![0.0; part.num_multipliers];
    let mut sol = None;
    let mut last = None;
    for _ in 0..8 {
        let a0_inv = ScaledOperator { inner: &prec, scale: 1.0 / scale };
        match bpcg(
            &k_tilde,
            &b_tilde,
            &a0_inv,
            &s0_inv,
            &f_tilde,
            &g,
            opts.outer_tol,
            opts.max_outer,
        ) {
            Ok(s) => {
                sol = Some(s);
                break;
            }
            Err(e @ LinAlgError::OrderViolation(_)) => {
                scale *= 0.5;
                last = Some(e);
            }
            Err(e) => return Err(e.into()),
        }
    }
    let sol = match sol {
        Some(s) => s,
        None => return Err(last.expect("retry loop records its failure").into()),
    };

    let per_patch: Vec<Vec<f64>> = part
        .patches
        .iter()
        .zip(&transforms)
        .map(|(pd, tr)| {
            let local: Vec<f64> = tr.slot.iter().map(|&s| sol.x[s]).collect();
            let u_active = tr.t.matvec(&local);
            let mut full = vec![0.0; pd.num_dofs()];
            for (pos, &dof) in pd.active.iter().enumerate() {
                full[dof] = u_active[pos];
            }
            full
        })
        .collect();
    let t_solve = t2.elapsed().as_secs_f64();

    Ok(Solution {
        per_patch,
        outer_iterations: sol.report.iterations,
        residual: sol.report.residual,
        converged: sol.report.converged(),
        stats: counters.stats(),
        timings: Timings { assembly: t_assembly, setup: t_setup, solve: t_solve },
        distinct_dofs: part.total_distinct_dofs(),
    })
}
