//! Conforming reference solver. Identifies matched interface dofs, then
//! assembles and factorizes the coupled stiffness matrix densely. Meant
//! for verification on small problems, not for production runs.

use nalgebra::{DMatrix, DVector};

use crate::assembly::{assemble_load, assemble_stiffness};
use crate::geometry::MultiPatch;
use crate::linalg::LinAlgError;

use super::partition::Partition;
use super::SolverError;

/// Solves the Poisson problem with homogeneous Dirichlet boundary on the
/// multipatch domain. Returns full tensor coefficient vectors per patch;
/// torn copies of a dof carry identical values by construction.
pub fn monolithic_solve(
    mp: &MultiPatch,
    f: &(dyn Fn(f64, f64) -> f64 + Sync),
) -> Result<Vec<Vec<f64>>, SolverError> {
    let part = Partition::build(mp)?;
    let mut global_of: Vec<Vec<Option<usize>>> =
        part.patches.iter().map(|p| vec![None; p.num_dofs()]).collect();
    let mut next = 0usize;
    for (k, pd) in part.patches.iter().enumerate() {
        for &d in &pd.interior {
            global_of[k][d] = Some(next);
            next += 1;
        }
    }
    for class in &part.classes {
        for &(k, d) in &class.members {
            global_of[k][d] = Some(next);
        }
        next += 1;
    }
    // Interface dofs of multiplicity one cannot occur on conforming glue,
    // but keep the numbering total in case a class was filtered.
    for (k, pd) in part.patches.iter().enumerate() {
        for &d in &pd.interface {
            if global_of[k][d].is_none() {
                global_of[k][d] = Some(next);
                next += 1;
            }
        }
    }
    let n = next;
    debug_assert_eq!(n, part.total_distinct_dofs());

    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    for (k, patch) in mp.patches.iter().enumerate() {
        let stiff = assemble_stiffness(patch);
        let load = assemble_load(patch, f);
        for row in 0..stiff.nrows() {
            let Some(gi) = global_of[k][row] else { continue };
            let (cols, vals) = stiff.row(row);
            for (&c, &v) in cols.iter().zip(vals) {
                if let Some(gj) = global_of[k][c] {
                    a[(gi, gj)] += v;
                }
            }
            rhs[gi] += load[row];
        }
    }

    let chol = a
        .cholesky()
        .ok_or(SolverError::LinAlg(LinAlgError::NotSpd { index: 0, value: 0.0 }))?;
    let x = chol.solve(&rhs);

    let mut out: Vec<Vec<f64>> = Vec::with_capacity(mp.patches.len());
    for (k, pd) in part.patches.iter().enumerate() {
        let mut u = vec![0.0; pd.num_dofs()];
        for d in 0..pd.num_dofs() {
            if let Some(g) = global_of[k][d] {
                u[d] = x[g];
            }
        }
        out.push(u);
    }
    Ok(out)
}
