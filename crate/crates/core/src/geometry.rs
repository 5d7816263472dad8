//! Multipatch tensor-product geometry.
//!
//! A patch couples an analytic map from the unit square into the plane with
//! one spline space per parameter direction (direction 1 varies fastest in
//! the tensor index). Patches are glued by matching physical anchor points
//! along their sides, which also detects reversed parametrizations.

use crate::splines::KnotVector;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("patches do not conform: {0}")]
    NonConforming(String),
    #[error("invalid multipatch layout: {0}")]
    Invalid(String),
}

/// Analytic geometry map from the parameter square [0,1]^2.
#[derive(Debug, Clone)]
pub enum GeometryMap {
    /// Annular sector: direction 1 sweeps the angle, direction 2 the radius.
    /// The angle is measured from the positive y axis, which keeps the
    /// Jacobian determinant positive.
    AnnularSector { theta0: f64, theta1: f64, r0: f64, r1: f64 },
    /// Bilinear quadrilateral with corners ordered (0,0), (1,0), (0,1), (1,1).
    BilinearQuad { corners: [[f64; 2]; 4] },
}

impl GeometryMap {
    pub fn eval(&self, xi: f64, eta: f64) -> [f64; 2] {
        match *self {
            GeometryMap::AnnularSector { theta0, theta1, r0, r1 } => {
                let theta = theta0 + xi * (theta1 - theta0);
                let r = r0 + eta * (r1 - r0);
                [r * theta.sin(), r * theta.cos()]
            }
            GeometryMap::BilinearQuad { corners } => {
                let [c00, c10, c01, c11] = corners;
                let mut out = [0.0; 2];
                for d in 0..2 {
                    out[d] = c00[d] * (1.0 - xi) * (1.0 - eta)
                        + c10[d] * xi * (1.0 - eta)
                        + c01[d] * (1.0 - xi) * eta
                        + c11[d] * xi * eta;
                }
                out
            }
        }
    }

    /// Jacobian d(x,y)/d(xi,eta), rows are physical components.
    pub fn jacobian(&self, xi: f64, eta: f64) -> [[f64; 2]; 2] {
        match *self {
            GeometryMap::AnnularSector { theta0, theta1, r0, r1 } => {
                let dt = theta1 - theta0;
                let dr = r1 - r0;
                let theta = theta0 + xi * dt;
                let r = r0 + eta * dr;
                [
                    [r * theta.cos() * dt, theta.sin() * dr],
                    [-r * theta.sin() * dt, theta.cos() * dr],
                ]
            }
            GeometryMap::BilinearQuad { corners } => {
                let [c00, c10, c01, c11] = corners;
                let mut j = [[0.0; 2]; 2];
                for d in 0..2 {
                    j[d][0] = (c10[d] - c00[d]) * (1.0 - eta) + (c11[d] - c01[d]) * eta;
                    j[d][1] = (c01[d] - c00[d]) * (1.0 - xi) + (c11[d] - c10[d]) * xi;
                }
                j
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    South,
    East,
    North,
    West,
}

pub const SIDES: [Side; 4] = [Side::South, Side::East, Side::North, Side::West];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Corner {
    SouthWest,
    SouthEast,
    NorthWest,
    NorthEast,
}

pub const CORNERS: [Corner; 4] =
    [Corner::SouthWest, Corner::SouthEast, Corner::NorthWest, Corner::NorthEast];

impl Corner {
    pub fn params(self) -> (f64, f64) {
        match self {
            Corner::SouthWest => (0.0, 0.0),
            Corner::SouthEast => (1.0, 0.0),
            Corner::NorthWest => (0.0, 1.0),
            Corner::NorthEast => (1.0, 1.0),
        }
    }
}

impl Side {
    /// Position of the side within `SIDES`.
    pub fn index(self) -> usize {
        match self {
            Side::South => 0,
            Side::East => 1,
            Side::North => 2,
            Side::West => 3,
        }
    }

    /// Endpoint corners in traversal order.
    pub fn endpoints(self) -> (Corner, Corner) {
        match self {
            Side::South => (Corner::SouthWest, Corner::SouthEast),
            Side::North => (Corner::NorthWest, Corner::NorthEast),
            Side::West => (Corner::SouthWest, Corner::NorthWest),
            Side::East => (Corner::SouthEast, Corner::NorthEast),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Patch {
    pub geometry: GeometryMap,
    pub basis1: KnotVector,
    pub basis2: KnotVector,
}

impl Patch {
    pub fn dims(&self) -> (usize, usize) {
        (self.basis1.num_basis(), self.basis2.num_basis())
    }

    pub fn num_dofs(&self) -> usize {
        let (n1, n2) = self.dims();
        n1 * n2
    }

    pub fn dof_index(&self, i: usize, j: usize) -> usize {
        let (n1, _) = self.dims();
        j * n1 + i
    }

    pub fn corner_dof(&self, corner: Corner) -> usize {
        let (n1, n2) = self.dims();
        match corner {
            Corner::SouthWest => 0,
            Corner::SouthEast => n1 - 1,
            Corner::NorthWest => (n2 - 1) * n1,
            Corner::NorthEast => n2 * n1 - 1,
        }
    }

    /// Tensor dof indices along a side, in traversal order (index in the
    /// running direction ascending).
    pub fn side_dofs(&self, side: Side) -> Vec<usize> {
        let (n1, n2) = self.dims();
        match side {
            Side::South => (0..n1).collect(),
            Side::North => (0..n1).map(|i| (n2 - 1) * n1 + i).collect(),
            Side::West => (0..n2).map(|j| j * n1).collect(),
            Side::East => (0..n2).map(|j| j * n1 + n1 - 1).collect(),
        }
    }

    /// The univariate basis running along a side.
    pub fn side_basis(&self, side: Side) -> &KnotVector {
        match side {
            Side::South | Side::North => &self.basis1,
            Side::West | Side::East => &self.basis2,
        }
    }

    fn greville(kv: &KnotVector) -> Vec<f64> {
        let p = kv.degree().max(1);
        let knots = kv.knots();
        (0..kv.num_basis())
            .map(|i| knots[i + 1..i + 1 + p].iter().sum::<f64>() / p as f64)
            .collect()
    }

    /// Physical anchor points along a side, in traversal order.
    pub fn side_anchors(&self, side: Side) -> Vec<[f64; 2]> {
        let g = Self::greville(self.side_basis(side));
        g.iter()
            .map(|&t| match side {
                Side::South => self.geometry.eval(t, 0.0),
                Side::North => self.geometry.eval(t, 1.0),
                Side::West => self.geometry.eval(0.0, t),
                Side::East => self.geometry.eval(1.0, t),
            })
            .collect()
    }

    pub fn corner_point(&self, corner: Corner) -> [f64; 2] {
        let (xi, eta) = corner.params();
        self.geometry.eval(xi, eta)
    }

    pub fn refine_dyadic(&self) -> Patch {
        Patch {
            geometry: self.geometry.clone(),
            basis1: self.basis1.refine_dyadic(),
            basis2: self.basis2.refine_dyadic(),
        }
    }

    fn diameter_estimate(&self) -> f64 {
        let pts: Vec<[f64; 2]> = CORNERS.iter().map(|&c| self.corner_point(c)).collect();
        let mut d: f64 = 0.0;
        for a in &pts {
            for b in &pts {
                d = d.max(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt());
            }
        }
        d
    }
}

/// Glued interface between two patch sides. Dofs pair up in traversal
/// order, or against reversed order when `reversed` is set.
#[derive(Debug, Clone, Copy)]
pub struct Interface {
    pub patch_a: usize,
    pub side_a: Side,
    pub patch_b: usize,
    pub side_b: Side,
    pub reversed: bool,
}

#[derive(Debug, Clone)]
pub struct MultiPatch {
    pub patches: Vec<Patch>,
    pub interfaces: Vec<Interface>,
}

fn close(a: [f64; 2], b: [f64; 2], tol: f64) -> bool {
    (a[0] - b[0]).abs() <= tol && (a[1] - b[1]).abs() <= tol
}

impl MultiPatch {
    /// Glue patches by matching physical anchor points along their sides.
    pub fn from_patches(patches: Vec<Patch>) -> Result<Self, GeometryError> {
        let scale = patches
            .iter()
            .map(|p| p.diameter_estimate())
            .fold(0.0_f64, f64::max)
            .max(1e-300);
        let tol = 1e-9 * scale;
        let mut interfaces = Vec::new();
        let mut matched = vec![false; patches.len() * 4];
        let side_slot = |patch: usize, side: Side| {
            patch * 4 + SIDES.iter().position(|&s| s == side).unwrap()
        };
        for a in 0..patches.len() {
            for b in a + 1..patches.len() {
                for &sa in &SIDES {
                    for &sb in &SIDES {
                        let (a0, a1) = sa.endpoints();
                        let (b0, b1) = sb.endpoints();
                        let pa0 = patches[a].corner_point(a0);
                        let pa1 = patches[a].corner_point(a1);
                        let pb0 = patches[b].corner_point(b0);
                        let pb1 = patches[b].corner_point(b1);
                        let forward = close(pa0, pb0, tol) && close(pa1, pb1, tol);
                        let backward = close(pa0, pb1, tol) && close(pa1, pb0, tol);
                        if !forward && !backward {
                            continue;
                        }
                        let anchors_a = patches[a].side_anchors(sa);
                        let mut anchors_b = patches[b].side_anchors(sb);
                        if backward {
                            anchors_b.reverse();
                        }
                        if anchors_a.len() != anchors_b.len() {
                            return Err(GeometryError::NonConforming(format!(
                                "patch {a} side {sa:?} has {} dofs, patch {b} side {sb:?} has {}",
                                anchors_a.len(),
                                anchors_b.len()
                            )));
                        }
                        if !anchors_a
                            .iter()
                            .zip(&anchors_b)
                            .all(|(x, y)| close(*x, *y, tol))
                        {
                            return Err(GeometryError::NonConforming(format!(
                                "patch {a} side {sa:?} and patch {b} side {sb:?} share endpoints \
                                 but interior anchors differ"
                            )));
                        }
                        for slot in [side_slot(a, sa), side_slot(b, sb)] {
                            if matched[slot] {
                                return Err(GeometryError::Invalid(format!(
                                    "side slot {slot} glued twice"
                                )));
                            }
                            matched[slot] = true;
                        }
                        interfaces.push(Interface {
                            patch_a: a,
                            side_a: sa,
                            patch_b: b,
                            side_b: sb,
                            reversed: backward,
                        });
                    }
                }
            }
        }
        Ok(Self { patches, interfaces })
    }

    /// Quarter annulus split into an n_theta x n_r grid of sectors, all
    /// carrying the same uniform spline space. Patch k = j * n_theta + i
    /// covers angle slot i and radius slot j.
    pub fn quarter_annulus(
        n_theta: usize,
        n_r: usize,
        r0: f64,
        r1: f64,
        degree: usize,
        spans: usize,
    ) -> Self {
        assert!(n_theta >= 1 && n_r >= 1 && r1 > r0 && r0 > 0.0);
        let quarter = std::f64::consts::FRAC_PI_2;
        let mut patches = Vec::with_capacity(n_theta * n_r);
        for j in 0..n_r {
            for i in 0..n_theta {
                let geometry = GeometryMap::AnnularSector {
                    theta0: quarter * i as f64 / n_theta as f64,
                    theta1: quarter * (i + 1) as f64 / n_theta as f64,
                    r0: r0 + (r1 - r0) * j as f64 / n_r as f64,
                    r1: r0 + (r1 - r0) * (j + 1) as f64 / n_r as f64,
                };
                patches.push(Patch {
                    geometry,
                    basis1: KnotVector::uniform_open(degree, spans),
                    basis2: KnotVector::uniform_open(degree, spans),
                });
            }
        }
        Self::from_patches(patches).expect("structured annulus conforms")
    }

    /// nx x ny grid of unit squares covering [0, nx] x [0, ny].
    pub fn unit_square_grid(nx: usize, ny: usize, degree: usize, spans: usize) -> Self {
        let mut patches = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let (x0, y0) = (i as f64, j as f64);
                let geometry = GeometryMap::BilinearQuad {
                    corners: [
                        [x0, y0],
                        [x0 + 1.0, y0],
                        [x0, y0 + 1.0],
                        [x0 + 1.0, y0 + 1.0],
                    ],
                };
                patches.push(Patch {
                    geometry,
                    basis1: KnotVector::uniform_open(degree, spans),
                    basis2: KnotVector::uniform_open(degree, spans),
                });
            }
        }
        Self::from_patches(patches).expect("structured grid conforms")
    }

    pub fn refine_dyadic(&self) -> Self {
        Self {
            patches: self.patches.iter().map(Patch::refine_dyadic).collect(),
            interfaces: self.interfaces.clone(),
        }
    }

    /// Groups of coinciding patch corners.
    pub fn vertex_clusters(&self) -> Vec<Vec<(usize, Corner)>> {
        let scale = self
            .patches
            .iter()
            .map(|p| p.diameter_estimate())
            .fold(0.0_f64, f64::max)
            .max(1e-300);
        let tol = 1e-9 * scale;
        let mut clusters: Vec<([f64; 2], Vec<(usize, Corner)>)> = Vec::new();
        for (k, patch) in self.patches.iter().enumerate() {
            for &c in &CORNERS {
                let pt = patch.corner_point(c);
                match clusters.iter_mut().find(|(q, _)| close(*q, pt, tol)) {
                    Some((_, members)) => members.push((k, c)),
                    None => clusters.push((pt, vec![(k, c)])),
                }
            }
        }
        clusters.into_iter().map(|(_, m)| m).collect()
    }

    /// Patch sides that are not glued to a neighbour.
    pub fn boundary_sides(&self) -> Vec<(usize, Side)> {
        let mut glued = std::collections::HashSet::new();
        for itf in &self.interfaces {
            glued.insert((itf.patch_a, itf.side_a));
            glued.insert((itf.patch_b, itf.side_b));
        }
        let mut out = Vec::new();
        for k in 0..self.patches.len() {
            for &s in &SIDES {
                if !glued.contains(&(k, s)) {
                    out.push((k, s));
                }
            }
        }
        out
    }
}

/// Exact solution of the model problem on the quarter annulus: vanishes on
/// the whole boundary and is smooth inside.
pub fn annulus_exact_solution(r0: f64, r1: f64, x: f64, y: f64) -> f64 {
    let r2 = x * x + y * y;
    (r2 - r0 * r0) * (r1 * r1 - r2) * 2.0 * x * y / r2
}

/// Negative Laplacian of `annulus_exact_solution`.
pub fn annulus_load(r0: f64, r1: f64, x: f64, y: f64) -> f64 {
    let r2 = x * x + y * y;
    let b = r0 * r0 * r1 * r1;
    24.0 * x * y - 8.0 * b * x * y / (r2 * r2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn annulus_counts_match_grid_structure() {
        let mp = MultiPatch::quarter_annulus(8, 4, 1.0, 2.0, 2, 2);
        assert_eq!(mp.patches.len(), 32);
        assert_eq!(mp.interfaces.len(), 52, "7*4 radial + 8*3 circular edges");
        let clusters = mp.vertex_clusters();
        assert_eq!(clusters.len(), 45, "9 x 5 corner grid");
        let interior = clusters.iter().filter(|c| c.len() == 4).count();
        assert_eq!(interior, 21, "7 x 3 interior vertices");
        assert_eq!(mp.boundary_sides().len(), 24, "2*8 arcs + 2*4 straight sides");
        assert!(mp.interfaces.iter().all(|i| !i.reversed));
    }

    #[test]
    fn annulus_corner_positions() {
        let mp = MultiPatch::quarter_annulus(8, 4, 1.0, 2.0, 2, 2);
        let p = &mp.patches[0];
        let sw = p.corner_point(Corner::SouthWest);
        assert!(close(sw, [0.0, 1.0], 1e-12), "inner corner on the y axis, got {sw:?}");
        let last = &mp.patches[31];
        let ne = last.corner_point(Corner::NorthEast);
        assert!(close(ne, [2.0, 0.0], 1e-12), "outer corner on the x axis, got {ne:?}");
    }

    #[test]
    fn annulus_jacobian_is_positive_and_matches_differences() {
        let mp = MultiPatch::quarter_annulus(3, 2, 1.0, 2.0, 2, 2);
        let h = 1e-6;
        for patch in &mp.patches {
            for xi in [0.1, 0.5, 0.9] {
                for eta in [0.1, 0.5, 0.9] {
                    let j = patch.geometry.jacobian(xi, eta);
                    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
                    assert!(det > 0.0, "determinant {det} at ({xi},{eta})");
                    let a = patch.geometry.eval(xi + h, eta);
                    let b = patch.geometry.eval(xi - h, eta);
                    let c = patch.geometry.eval(xi, eta + h);
                    let d = patch.geometry.eval(xi, eta - h);
                    for comp in 0..2 {
                        let d1 = (a[comp] - b[comp]) / (2.0 * h);
                        let d2 = (c[comp] - d[comp]) / (2.0 * h);
                        assert!((d1 - j[comp][0]).abs() < 1e-6);
                        assert!((d2 - j[comp][1]).abs() < 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn side_dofs_end_in_corner_dofs() {
        let mp = MultiPatch::unit_square_grid(1, 1, 2, 3);
        let p = &mp.patches[0];
        for &s in &SIDES {
            let dofs = p.side_dofs(s);
            let (c0, c1) = s.endpoints();
            assert_eq!(dofs[0], p.corner_dof(c0), "{s:?} start");
            assert_eq!(*dofs.last().unwrap(), p.corner_dof(c1), "{s:?} end");
        }
    }

    #[test]
    fn square_grid_interfaces_and_vertices() {
        let mp = MultiPatch::unit_square_grid(2, 2, 1, 2);
        assert_eq!(mp.interfaces.len(), 4);
        let clusters = mp.vertex_clusters();
        assert_eq!(clusters.len(), 9);
        assert_eq!(clusters.iter().filter(|c| c.len() == 4).count(), 1);
    }

    #[test]
    fn detects_reversed_side_parametrization() {
        // Second square parametrized so the shared edge runs the other way:
        // mirror xi and swap roles so orientation stays positive.
        let a = Patch {
            geometry: GeometryMap::BilinearQuad {
                corners: [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]],
            },
            basis1: KnotVector::uniform_open(1, 2),
            basis2: KnotVector::uniform_open(1, 2),
        };
        // Patch b covers [1,2]x[0,1]; its west-running direction 2 is flipped.
        let b = Patch {
            geometry: GeometryMap::BilinearQuad {
                corners: [[2.0, 1.0], [1.0, 1.0], [2.0, 0.0], [1.0, 0.0]],
            },
            basis1: KnotVector::uniform_open(1, 2),
            basis2: KnotVector::uniform_open(1, 2),
        };
        let mp = MultiPatch::from_patches(vec![a, b]).unwrap();
        assert_eq!(mp.interfaces.len(), 1);
        assert!(mp.interfaces[0].reversed);
    }

    #[test]
    fn rejects_nonmatching_span_counts() {
        let a = Patch {
            geometry: GeometryMap::BilinearQuad {
                corners: [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]],
            },
            basis1: KnotVector::uniform_open(1, 2),
            basis2: KnotVector::uniform_open(1, 2),
        };
        let b = Patch {
            geometry: GeometryMap::BilinearQuad {
                corners: [[1.0, 0.0], [2.0, 0.0], [1.0, 1.0], [2.0, 1.0]],
            },
            basis1: KnotVector::uniform_open(1, 2),
            basis2: KnotVector::uniform_open(1, 3),
        };
        let err = MultiPatch::from_patches(vec![a, b]).unwrap_err();
        assert!(matches!(err, GeometryError::NonConforming(_)));
    }

    #[test]
    fn exact_solution_vanishes_on_annulus_boundary() {
        let (r0, r1) = (1.0, 2.0);
        for t in [0.0, 0.3, 0.7, 1.0] {
            let theta = std::f64::consts::FRAC_PI_2 * t;
            for r in [r0, r1] {
                let (x, y) = (r * theta.sin(), r * theta.cos());
                assert!(annulus_exact_solution(r0, r1, x, y).abs() < 1e-12);
            }
            let r = r0 + (r1 - r0) * t;
            assert!(annulus_exact_solution(r0, r1, 0.0, r).abs() < 1e-12);
            assert!(annulus_exact_solution(r0, r1, r, 0.0).abs() < 1e-12);
        }
    }

    #[test]
    fn load_is_negative_laplacian_of_exact_solution() {
        let (r0, r1) = (1.0, 2.0);
        let h = 1e-4;
        for &(x, y) in &[(0.5, 1.2), (1.0, 1.0), (1.3, 0.4), (0.2, 1.7)] {
            let u = |x: f64, y: f64| annulus_exact_solution(r0, r1, x, y);
            let lap = (u(x + h, y) + u(x - h, y) + u(x, y + h) + u(x, y - h) - 4.0 * u(x, y))
                / (h * h);
            let f = annulus_load(r0, r1, x, y);
            assert!(
                (f + lap).abs() < 1e-5 * (1.0 + f.abs()),
                "at ({x},{y}): -lap {} vs load {f}",
                -lap
            );
        }
    }

    #[test]
    fn refine_dyadic_doubles_patch_resolution() {
        let mp = MultiPatch::quarter_annulus(2, 1, 1.0, 2.0, 2, 2).refine_dyadic();
        for p in &mp.patches {
            assert_eq!(p.basis1.num_spans(), 4);
            assert_eq!(p.basis2.num_spans(), 4);
        }
        assert_eq!(mp.interfaces.len(), 1);
    }
}
