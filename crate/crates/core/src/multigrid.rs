//! Geometric multigrid on nested dyadic spline spaces.
//!
//! Hierarchies keep the polynomial degree fixed and halve the span count
//! per level. Coarse operators are Galerkin triple products of the fine
//! one, smoothing is one forward Gauss-Seidel sweep before and one
//! backward sweep after coarse correction, and the coarsest level is
//! factorized directly. That combination makes each V-cycle a symmetric
//! positive operation, so composed cycles can serve as a CG preconditioner.

use crate::linalg::{BandedCholesky, LinAlgError, LinearOperator, SparseMatrix};
use crate::splines::{prolongation_1d, KnotVector};

/// Sweep x once in ascending row order.
pub fn gauss_seidel_forward(a: &SparseMatrix, diag: &[f64], b: &[f64], x: &mut [f64]) {
    for i in 0..a.nrows() {
        let (cols, vals) = a.row(i);
        let mut s = b[i];
        for (c, v) in cols.iter().zip(vals) {
            s -= v * x[*c];
        }
        x[i] += s / diag[i];
    }
}

/// Sweep x once in descending row order.
pub fn gauss_seidel_backward(a: &SparseMatrix, diag: &[f64], b: &[f64], x: &mut [f64]) {
    for i in (0..a.nrows()).rev() {
        let (cols, vals) = a.row(i);
        let mut s = b[i];
        for (c, v) in cols.iter().zip(vals) {
            s -= v * x[*c];
        }
        x[i] += s / diag[i];
    }
}

/// Smallest span count a level may have in a direction where
/// `eliminated_ends` boundary layers are removed: the level must keep at
/// least one active dof, i.e. spans + degree - eliminated_ends >= 1.
pub fn min_coarse_spans(degree: usize, eliminated_ends: usize) -> usize {
    (1 + eliminated_ends).saturating_sub(degree).max(1)
}

/// Number of dyadic coarsenings possible from `fine_spans` without going
/// below `min_spans` or hitting an odd span count.
pub fn coarsening_depth(fine_spans: usize, min_spans: usize) -> usize {
    let mut s = fine_spans;
    let mut d = 0;
    while s % 2 == 0 && s / 2 >= min_spans {
        s /= 2;
        d += 1;
    }
    d
}

pub struct MgHierarchy {
    /// Level operators, coarsest first.
    matrices: Vec<SparseMatrix>,
    diagonals: Vec<Vec<f64>>,
    /// prolongations[k] maps level k into level k + 1.
    prolongations: Vec<SparseMatrix>,
    coarse_solver: BandedCholesky,
}

impl MgHierarchy {
    /// Build from the fine operator and the chain of intergrid transfers
    /// (coarsest first). Coarse matrices are Galerkin products.
    pub fn from_fine(
        fine: SparseMatrix,
        prolongations: Vec<SparseMatrix>,
    ) -> Result<Self, LinAlgError> {
        let mut matrices = vec![fine];
        for p in prolongations.iter().rev() {
            let coarse = matrices.last().unwrap().triple_product(p)?;
            matrices.push(coarse);
        }
        matrices.reverse();
        let diagonals: Vec<Vec<f64>> = matrices.iter().map(|m| m.diagonal()).collect();
        for (lvl, d) in diagonals.iter().enumerate() {
            if d.iter().any(|&v| v <= 0.0) {
                return Err(LinAlgError::NotSpd { index: lvl, value: 0.0 });
            }
        }
        let coarse_solver = BandedCholesky::new(&matrices[0])?;
        Ok(Self { matrices, diagonals, prolongations, coarse_solver })
    }

    pub fn num_levels(&self) -> usize {
        self.matrices.len()
    }

    pub fn fine_matrix(&self) -> &SparseMatrix {
        self.matrices.last().unwrap()
    }

    pub fn level_matrix(&self, level: usize) -> &SparseMatrix {
        &self.matrices[level]
    }

    pub fn prolongation(&self, level: usize) -> &SparseMatrix {
        &self.prolongations[level]
    }

    pub fn dim(&self) -> usize {
        self.fine_matrix().nrows()
    }

    fn cycle(&self, level: usize, b: &[f64], x: &mut [f64]) {
        if level == 0 {
            self.coarse_solver.solve_into(b, x);
            return;
        }
        let a = &self.matrices[level];
        let diag = &self.diagonals[level];
        for v in x.iter_mut() {
            *v = 0.0;
        }
        gauss_seidel_forward(a, diag, b, x);
        let mut r = b.to_vec();
        let ax = a.matvec(x);
        for i in 0..r.len() {
            r[i] -= ax[i];
        }
        let p = &self.prolongations[level - 1];
        let rc = p.matvec_transpose(&r);
        let mut xc = vec![0.0; p.ncols()];
        self.cycle(level - 1, &rc, &mut xc);
        let corr = p.matvec(&xc);
        for i in 0..x.len() {
            x[i] += corr[i];
        }
        gauss_seidel_backward(a, diag, b, x);
    }

    /// One V-cycle applied to b from a zero initial guess.
    pub fn v_cycle(&self, b: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        self.cycle(self.num_levels() - 1, b, &mut x);
        x
    }

    /// Preconditioner that composes a fixed number of V-cycles.
    pub fn preconditioner(&self, cycles: usize) -> MgCycles<'_> {
        assert!(cycles >= 1);
        MgCycles { hierarchy: self, cycles }
    }
}

/// Fixed number of composed V-cycles, x <- x + V(b - A x), as a linear
/// operator. Symmetric because each cycle is.
pub struct MgCycles<'a> {
    hierarchy: &'a MgHierarchy,
    cycles: usize,
}

impl LinearOperator for MgCycles<'_> {
    fn dim(&self) -> usize {
        self.hierarchy.dim()
    }

    fn apply_into(&self, b: &[f64], y: &mut [f64]) {
        let x = &mut y[..];
        let first = self.hierarchy.v_cycle(b);
        x.copy_from_slice(&first);
        for _ in 1..self.cycles {
            let ax = self.hierarchy.fine_matrix().matvec(x);
            let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
            let corr = self.hierarchy.v_cycle(&r);
            for i in 0..x.len() {
                x[i] += corr[i];
            }
        }
    }
}

/// Tensor dofs that survive eliminating one boundary layer on the sides
/// flagged in `eliminated`, ordered [south, east, north, west] to match
/// the side enumeration of the geometry layer. Ascending dof order.
pub fn active_lattice(n1: usize, n2: usize, eliminated: [bool; 4]) -> Vec<usize> {
    let [south, east, north, west] = eliminated;
    let i_lo = west as usize;
    let i_hi = n1 - east as usize;
    let j_lo = south as usize;
    let j_hi = n2 - north as usize;
    let mut out = Vec::with_capacity(i_hi.saturating_sub(i_lo) * j_hi.saturating_sub(j_lo));
    for j in j_lo..j_hi {
        for i in i_lo..i_hi {
            out.push(j * n1 + i);
        }
    }
    out
}

/// Indices of the tensor dofs that remain after eliminating one layer on
/// every side (homogeneous Dirichlet on the whole patch boundary).
pub fn interior_dofs(n1: usize, n2: usize) -> Vec<usize> {
    active_lattice(n1, n2, [true; 4])
}

/// Hierarchy for a tensor-product patch whose knot vectors are uniform and
/// dyadically coarsenable. `fine_matrix` must already live on the active
/// set picked by `eliminated` ([south, east, north, west] boundary layers
/// removed). Falls back to a single-level (direct) hierarchy when the
/// spaces cannot be coarsened.
pub fn build_patch_hierarchy(
    basis1: &KnotVector,
    basis2: &KnotVector,
    fine_matrix: SparseMatrix,
    eliminated: [bool; 4],
) -> Result<MgHierarchy, LinAlgError> {
    let degree = basis1.degree();
    let s1 = basis1.num_spans();
    let s2 = basis2.num_spans();
    let [south, east, north, west] = eliminated;
    let min1 = min_coarse_spans(degree, west as usize + east as usize);
    let min2 = min_coarse_spans(basis2.degree(), south as usize + north as usize);
    let uniform = *basis1 == KnotVector::uniform_open(degree, s1)
        && *basis2 == KnotVector::uniform_open(basis2.degree(), s2);
    let depth = if uniform {
        coarsening_depth(s1, min1).min(coarsening_depth(s2, min2))
    } else {
        0
    };

    let active = |kv1: &KnotVector, kv2: &KnotVector| -> Vec<usize> {
        active_lattice(kv1.num_basis(), kv2.num_basis(), eliminated)
    };

    let mut chain1 = vec![KnotVector::uniform_open(degree, s1 >> depth)];
    let mut chain2 = vec![KnotVector::uniform_open(basis2.degree(), s2 >> depth)];
    for _ in 0..depth {
        chain1.push(chain1.last().unwrap().refine_dyadic());
        chain2.push(chain2.last().unwrap().refine_dyadic());
    }
    let mut prolongations = Vec::with_capacity(depth);
    for k in 0..depth {
        let p1 = prolongation_1d(&chain1[k], &chain1[k + 1])
            .map_err(|e| LinAlgError::DimensionMismatch(e.to_string()))?;
        let p2 = prolongation_1d(&chain2[k], &chain2[k + 1])
            .map_err(|e| LinAlgError::DimensionMismatch(e.to_string()))?;
        let full = SparseMatrix::kron(&p2, &p1);
        let fine_active = active(&chain1[k + 1], &chain2[k + 1]);
        let coarse_active = active(&chain1[k], &chain2[k]);
        prolongations.push(full.submatrix(&fine_active, &coarse_active));
    }
    if fine_matrix.nrows() != active(basis1, basis2).len() {
        return Err(LinAlgError::DimensionMismatch(
            "fine matrix does not match the active dof count".into(),
        ));
    }
    MgHierarchy::from_fine(fine_matrix, prolongations)
}
