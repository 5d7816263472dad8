//! Dof bookkeeping for the torn problem: Dirichlet elimination, the
//! interface/interior split, multiplier chains, and primal constraints.

use std::collections::HashSet;

use crate::geometry::{MultiPatch, SIDES};
use crate::linalg::SparseMatrix;

use super::SolverError;

/// Classification of one patch's tensor dofs. All index lists hold full
/// tensor indices in ascending order; `active` is the concatenation-free
/// union of `interior` and `interface`.
#[derive(Debug)]
pub struct PatchDofs {
    pub n1: usize,
    pub n2: usize,
    /// Sides whose boundary layer is eliminated, in `SIDES` order.
    pub dirichlet_sides: [bool; 4],
    pub active: Vec<usize>,
    pub interior: Vec<usize>,
    pub interface: Vec<usize>,
    active_pos: Vec<Option<usize>>,
    interface_pos: Vec<Option<usize>>,
    /// Position of each interface dof inside the active ordering.
    pub interface_pos_in_active: Vec<usize>,
    /// Position of each interior dof inside the active ordering.
    pub interior_pos_in_active: Vec<usize>,
}

impl PatchDofs {
    pub fn num_dofs(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn active_position(&self, full: usize) -> Option<usize> {
        self.active_pos[full]
    }

    pub fn interface_position(&self, full: usize) -> Option<usize> {
        self.interface_pos[full]
    }

    pub fn is_active(&self, full: usize) -> bool {
        self.active_pos[full].is_some()
    }
}

/// Set of torn copies of one geometric dof, sorted by patch index. Entries
/// are (patch, full tensor index).
#[derive(Debug, Clone)]
pub struct DofClass {
    pub members: Vec<(usize, usize)>,
}

/// Primal vertex: coinciding active patch corners, sorted by patch index.
#[derive(Debug)]
pub struct VertexPrimal {
    pub members: Vec<(usize, usize)>,
}

/// Primal interface average. Weights are taken from the first patch's side
/// basis and transferred to the partner through the dof pairing, so both
/// rows realize the same functional on the shared trace.
#[derive(Debug)]
pub struct EdgePrimal {
    pub interface: usize,
    pub patch_a: usize,
    pub patch_b: usize,
    /// (full index, weight) on patch_a, weights summing to one.
    pub terms_a: Vec<(usize, f64)>,
    pub terms_b: Vec<(usize, f64)>,
    /// Paired active dofs (full index in patch_a, full index in patch_b).
    pub pairs: Vec<(usize, usize)>,
    /// Representative non-corner dof carrying the average after the
    /// change of basis in the assembled saddle variant.
    pub designated_a: usize,
    pub designated_b: usize,
}

/// One primal constraint row of a patch.
#[derive(Debug, Clone)]
pub struct LocalConstraint {
    pub primal_index: usize,
    /// (full tensor index, weight); weights sum to one.
    pub terms: Vec<(usize, f64)>,
}

/// Complete dof partition of a multipatch discretization.
#[derive(Debug)]
pub struct Partition {
    pub patches: Vec<PatchDofs>,
    /// Offsets of each patch's interface block in the stacked trace space.
    pub w_offsets: Vec<usize>,
    pub classes: Vec<DofClass>,
    /// Multiplicity of every stacked trace dof.
    pub w_multiplicity: Vec<usize>,
    pub num_multipliers: usize,
    pub vertex_primals: Vec<VertexPrimal>,
    pub edge_primals: Vec<EdgePrimal>,
    /// Per patch, vertex rows first (cluster order), then edge rows
    /// (interface order).
    pub constraints: Vec<Vec<LocalConstraint>>,
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Matched active dof pairs of an interface, in traversal order of side_a.
fn interface_dof_pairs(
    mp: &MultiPatch,
    itf: &crate::geometry::Interface,
    dofs: &[PatchDofs],
) -> Result<Vec<(usize, usize)>, SolverError> {
    let da = mp.patches[itf.patch_a].side_dofs(itf.side_a);
    let mut db = mp.patches[itf.patch_b].side_dofs(itf.side_b);
    if itf.reversed {
        db.reverse();
    }
    if da.len() != db.len() {
        return Err(SolverError::Decomposition(format!(
            "interface between patches {} and {} has mismatched side dimensions",
            itf.patch_a, itf.patch_b
        )));
    }
    let mut pairs = Vec::new();
    for (&fa, &fb) in da.iter().zip(&db) {
        let aa = dofs[itf.patch_a].is_active(fa);
        let ab = dofs[itf.patch_b].is_active(fb);
        if aa != ab {
            return Err(SolverError::Decomposition(format!(
                "interface between patches {} and {} pairs an eliminated dof with an active one",
                itf.patch_a, itf.patch_b
            )));
        }
        if aa {
            pairs.push((fa, fb));
        }
    }
    Ok(pairs)
}

impl Partition {
    pub fn build(mp: &MultiPatch) -> Result<Self, SolverError> {
        let boundary: HashSet<(usize, crate::geometry::Side)> =
            mp.boundary_sides().into_iter().collect();

        let mut patches = Vec::with_capacity(mp.patches.len());
        for (k, patch) in mp.patches.iter().enumerate() {
            let (n1, n2) = patch.dims();
            let n = n1 * n2;
            let mut dirichlet_sides = [false; 4];
            let mut dirichlet: HashSet<usize> = HashSet::new();
            let mut glued: HashSet<usize> = HashSet::new();
            for &s in &SIDES {
                if boundary.contains(&(k, s)) {
                    dirichlet_sides[s.index()] = true;
                    dirichlet.extend(patch.side_dofs(s));
                } else {
                    glued.extend(patch.side_dofs(s));
                }
            }
            let active: Vec<usize> = (0..n).filter(|d| !dirichlet.contains(d)).collect();
            let interface: Vec<usize> =
                active.iter().copied().filter(|d| glued.contains(d)).collect();
            let interface_set: HashSet<usize> = interface.iter().copied().collect();
            let interior: Vec<usize> =
                active.iter().copied().filter(|d| !interface_set.contains(d)).collect();

            let mut active_pos = vec![None; n];
            for (p, &d) in active.iter().enumerate() {
                active_pos[d] = Some(p);
            }
            let mut interface_pos = vec![None; n];
            for (p, &d) in interface.iter().enumerate() {
                interface_pos[d] = Some(p);
            }
            let interface_pos_in_active: Vec<usize> =
                interface.iter().map(|&d| active_pos[d].unwrap()).collect();
            let interior_pos_in_active: Vec<usize> =
                interior.iter().map(|&d| active_pos[d].unwrap()).collect();

            patches.push(PatchDofs {
                n1,
                n2,
                dirichlet_sides,
                active,
                interior,
                interface,
                active_pos,
                interface_pos,
                interface_pos_in_active,
                interior_pos_in_active,
            });
        }

        let mut w_offsets = vec![0usize];
        for pd in &patches {
            w_offsets.push(w_offsets.last().unwrap() + pd.interface.len());
        }
        let w_dim = *w_offsets.last().unwrap();
        let w_of = |patch: usize, full: usize| -> Option<usize> {
            patches[patch].interface_position(full).map(|p| w_offsets[patch] + p)
        };

        let mut all_pairs = Vec::with_capacity(mp.interfaces.len());
        let mut uf = UnionFind::new(w_dim);
        for itf in &mp.interfaces {
            let pairs = interface_dof_pairs(mp, itf, &patches)?;
            for &(fa, fb) in &pairs {
                let wa = w_of(itf.patch_a, fa).ok_or_else(|| {
                    SolverError::Decomposition("glued dof missing from trace space".into())
                })?;
                let wb = w_of(itf.patch_b, fb).ok_or_else(|| {
                    SolverError::Decomposition("glued dof missing from trace space".into())
                })?;
                uf.union(wa, wb);
            }
            all_pairs.push(pairs);
        }

        let mut patch_of_w = vec![0usize; w_dim];
        let mut full_of_w = vec![0usize; w_dim];
        for (k, pd) in patches.iter().enumerate() {
            for (p, &d) in pd.interface.iter().enumerate() {
                patch_of_w[w_offsets[k] + p] = k;
                full_of_w[w_offsets[k] + p] = d;
            }
        }
        let mut class_of_root: Vec<Option<usize>> = vec![None; w_dim];
        let mut classes: Vec<DofClass> = Vec::new();
        for w in 0..w_dim {
            let root = uf.find(w);
            let ci = match class_of_root[root] {
                Some(ci) => ci,
                None => {
                    classes.push(DofClass { members: Vec::new() });
                    class_of_root[root] = Some(classes.len() - 1);
                    classes.len() - 1
                }
            };
            classes[ci].members.push((patch_of_w[w], full_of_w[w]));
        }
        classes.retain(|c| c.members.len() >= 2);
        for c in &mut classes {
            c.members.sort_unstable();
        }
        let mut w_multiplicity = vec![1usize; w_dim];
        for c in &classes {
            for &(k, d) in &c.members {
                w_multiplicity[w_of(k, d).unwrap()] = c.members.len();
            }
        }
        let num_multipliers = classes.iter().map(|c| c.members.len() - 1).sum();

        let mut vertex_primals = Vec::new();
        for cluster in mp.vertex_clusters() {
            let mut members: Vec<(usize, usize)> = cluster
                .iter()
                .map(|&(k, c)| (k, mp.patches[k].corner_dof(c)))
                .collect();
            members.sort_unstable();
            members.dedup();
            let active: Vec<bool> =
                members.iter().map(|&(k, d)| patches[k].is_active(d)).collect();
            if active.iter().any(|&a| a) != active.iter().all(|&a| a) {
                return Err(SolverError::Decomposition(
                    "vertex cluster mixes eliminated and active corners".into(),
                ));
            }
            let distinct_patches: HashSet<usize> = members.iter().map(|&(k, _)| k).collect();
            if active[0] && distinct_patches.len() >= 2 {
                vertex_primals.push(VertexPrimal { members });
            }
        }
        let mut edge_primals = Vec::new();
        for (e, itf) in mp.interfaces.iter().enumerate() {
            let pairs = &all_pairs[e];
            let side_full = mp.patches[itf.patch_a].side_dofs(itf.side_a);
            if side_full.len() < 3 || pairs.is_empty() {
                continue;
            }
            let ends = (side_full[0], side_full[side_full.len() - 1]);
            let integrals = mp.patches[itf.patch_a].side_basis(itf.side_a).basis_integrals();
            let pos_on_side: Vec<usize> = pairs
                .iter()
                .map(|&(fa, _)| side_full.iter().position(|&d| d == fa).unwrap())
                .collect();
            let total: f64 = pos_on_side.iter().map(|&p| integrals[p]).sum();
            let weights: Vec<f64> = pos_on_side.iter().map(|&p| integrals[p] / total).collect();
            let candidates: Vec<usize> = (0..pairs.len())
                .filter(|&i| pairs[i].0 != ends.0 && pairs[i].0 != ends.1)
                .collect();
            if candidates.is_empty() {
                continue;
            }
            let pick = candidates[candidates.len() / 2];
            edge_primals.push(EdgePrimal {
                interface: e,
                patch_a: itf.patch_a,
                patch_b: itf.patch_b,
                terms_a: pairs.iter().map(|p| p.0).zip(weights.iter().copied()).collect(),
                terms_b: pairs.iter().map(|p| p.1).zip(weights.iter().copied()).collect(),
                pairs: pairs.clone(),
                designated_a: pairs[pick].0,
                designated_b: pairs[pick].1,
            });
        }

        let mut constraints: Vec<Vec<LocalConstraint>> = vec![Vec::new(); patches.len()];
        for (vi, v) in vertex_primals.iter().enumerate() {
            for &(k, d) in &v.members {
                constraints[k].push(LocalConstraint { primal_index: vi, terms: vec![(d, 1.0)] });
            }
        }
        let nv = vertex_primals.len();
        for (ei, e) in edge_primals.iter().enumerate() {
            constraints[e.patch_a].push(LocalConstraint {
                primal_index: nv + ei,
                terms: e.terms_a.clone(),
            });
            constraints[e.patch_b].push(LocalConstraint {
                primal_index: nv + ei,
                terms: e.terms_b.clone(),
            });
        }

        Ok(Self {
            patches,
            w_offsets,
            classes,
            w_multiplicity,
            num_multipliers,
            vertex_primals,
            edge_primals,
            constraints,
        })
    }

    pub fn w_dim(&self) -> usize {
        *self.w_offsets.last().unwrap()
    }

    pub fn num_primal(&self) -> usize {
        self.vertex_primals.len() + self.edge_primals.len()
    }

    /// Stacked trace index of an interface dof.
    pub fn w_index(&self, patch: usize, full: usize) -> Option<usize> {
        self.patches[patch].interface_position(full).map(|p| self.w_offsets[patch] + p)
    }

    /// Number of distinct coupled unknowns of the discretization.
    pub fn total_distinct_dofs(&self) -> usize {
        let torn: usize = self.patches.iter().map(|p| p.active.len()).sum();
        torn - self.num_multipliers
    }

    fn chain_matrix(&self, scaled: bool) -> SparseMatrix {
        let mut triplets = Vec::new();
        let mut row = 0usize;
        for class in &self.classes {
            let m = class.members.len();
            let v = if scaled { 1.0 / m as f64 } else { 1.0 };
            for pair in class.members.windows(2) {
                let wa = self.w_index(pair[0].0, pair[0].1).unwrap();
                let wb = self.w_index(pair[1].0, pair[1].1).unwrap();
                triplets.push((row, wa, v));
                triplets.push((row, wb, -v));
                row += 1;
            }
        }
        SparseMatrix::from_triplets(self.num_multipliers, self.w_dim(), &triplets).unwrap()
    }

    /// Signed jump operator with one chain of rows per torn dof class.
    pub fn jump_matrix(&self) -> SparseMatrix {
        self.chain_matrix(false)
    }

    /// Jump operator with entries scaled by inverse multiplicity.
    pub fn scaled_jump_matrix(&self) -> SparseMatrix {
        self.chain_matrix(true)
    }

    /// Primal rows of one patch over its interface dofs.
    pub fn constraint_matrix(&self, k: usize) -> SparseMatrix {
        let pd = &self.patches[k];
        let rows = &self.constraints[k];
        let mut triplets = Vec::new();
        for (r, c) in rows.iter().enumerate() {
            for &(full, w) in &c.terms {
                triplets.push((r, pd.interface_position(full).unwrap(), w));
            }
        }
        SparseMatrix::from_triplets(rows.len(), pd.interface.len(), &triplets).unwrap()
    }

    /// Primal rows of one patch over its active dofs.
    pub fn constraint_matrix_active(&self, k: usize) -> SparseMatrix {
        let pd = &self.patches[k];
        let rows = &self.constraints[k];
        let mut triplets = Vec::new();
        for (r, c) in rows.iter().enumerate() {
            for &(full, w) in &c.terms {
                triplets.push((r, pd.active_position(full).unwrap(), w));
            }
        }
        SparseMatrix::from_triplets(rows.len(), pd.active.len(), &triplets).unwrap()
    }

    /// Global primal coordinate of each constraint row of patch k.
    pub fn primal_slots(&self, k: usize) -> Vec<usize> {
        self.constraints[k].iter().map(|c| c.primal_index).collect()
    }

    /// Largest absolute disagreement between torn copies of a dof, given
    /// full tensor coefficient vectors per patch.
    pub fn continuity_residual(&self, per_patch: &[Vec<f64>]) -> f64 {
        let mut worst = 0.0f64;
        for class in &self.classes {
            let vals = class.members.iter().map(|&(k, d)| per_patch[k][d]);
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for v in vals {
                lo = lo.min(v);
                hi = hi.max(v);
            }
            worst = worst.max(hi - lo);
        }
        worst
    }
}
