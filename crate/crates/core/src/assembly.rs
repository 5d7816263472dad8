//! Galerkin assembly on tensor-product spline patches.
//!
//! Quadrature is Gauss-Legendre with degree + 1 points per direction per
//! element for the system matrices and a slightly richer rule for error
//! integrals. Homogeneous Dirichlet conditions are imposed by restricting
//! to a kept index set after assembly.

use crate::geometry::Patch;
use crate::linalg::SparseMatrix;
use crate::splines::KnotVector;

/// Gauss-Legendre nodes and weights on [-1, 1], by Newton iteration on the
/// Legendre polynomial with the standard cosine initial guesses.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Evaluate P_n and P_n' by the three-term recurrence.
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 1 { x } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Per-direction evaluation tables: for every nonempty span, the quadrature
/// points (in parameter space), scaled weights, and basis values/derivatives.
struct DirTable {
    spans: Vec<SpanTable>,
}

struct SpanTable {
    first_basis: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
    values: Vec<Vec<f64>>,
    derivs: Vec<Vec<f64>>,
}

fn tabulate(kv: &KnotVector, points_per_span: usize) -> DirTable {
    let (gx, gw) = gauss_legendre(points_per_span);
    let bp = kv.breakpoints();
    let mut spans = Vec::with_capacity(bp.len() - 1);
    for w in bp.windows(2) {
        let (a, b) = (w[0], w[1]);
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut st = SpanTable {
            first_basis: 0,
            points: Vec::new(),
            weights: Vec::new(),
            values: Vec::new(),
            derivs: Vec::new(),
        };
        for q in 0..points_per_span {
            let t = mid + half * gx[q];
            let (first, vals, ders) = kv.eval_with_deriv(t);
            st.first_basis = first;
            st.points.push(t);
            st.weights.push(gw[q] * half);
            st.values.push(vals);
            st.derivs.push(ders);
        }
        spans.push(st);
    }
    DirTable { spans }
}

/// Stiffness matrix of the Laplace bilinear form on the full tensor space
/// of the patch (no boundary conditions).
pub fn assemble_stiffness(patch: &Patch) -> SparseMatrix {
    let p1 = patch.basis1.degree();
    let p2 = patch.basis2.degree();
    let t1 = tabulate(&patch.basis1, p1 + 1);
    let t2 = tabulate(&patch.basis2, p2 + 1);
    let (n1, n2) = patch.dims();
    let n = n1 * n2;
    let b1 = p1 + 1;
    let b2 = p2 + 1;
    let mut trip = Vec::new();
    let mut local = vec![0.0; b1 * b2 * b1 * b2];
    let mut gx = vec![0.0; b1 * b2];
    let mut gy = vec![0.0; b1 * b2];
    for s2 in &t2.spans {
        for s1 in &t1.spans {
            local.iter_mut().for_each(|v| *v = 0.0);
            for q2 in 0..s2.points.len() {
                for q1 in 0..s1.points.len() {
                    let j = patch.geometry.jacobian(s1.points[q1], s2.points[q2]);
                    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
                    let w = s1.weights[q1] * s2.weights[q2] * det.abs();
                    // Physical gradients: J^{-T} (d1 v2, v1 d2).
                    let inv_det = 1.0 / det;
                    for a in 0..b1 {
                        for b in 0..b2 {
                            let d_xi = s1.derivs[q1][a] * s2.values[q2][b];
                            let d_eta = s1.values[q1][a] * s2.derivs[q2][b];
                            gx[a * b2 + b] = inv_det * (j[1][1] * d_xi - j[1][0] * d_eta);
                            gy[a * b2 + b] = inv_det * (-j[0][1] * d_xi + j[0][0] * d_eta);
                        }
                    }
                    for ab in 0..b1 * b2 {
                        for cd in 0..b1 * b2 {
                            local[ab * b1 * b2 + cd] +=
                                w * (gx[ab] * gx[cd] + gy[ab] * gy[cd]);
                        }
                    }
                }
            }
            for a in 0..b1 {
                for b in 0..b2 {
                    let row = (s2.first_basis + b) * n1 + s1.first_basis + a;
                    for c in 0..b1 {
                        for d in 0..b2 {
                            let col = (s2.first_basis + d) * n1 + s1.first_basis + c;
                            let v = local[((a * b2 + b) * b1 + c) * b2 + d];
                            if v != 0.0 {
                                trip.push((row, col, v));
                            }
                        }
                    }
                }
            }
        }
    }
    SparseMatrix::from_triplets(n, n, &trip).expect("stiffness assembly")
}

/// Load vector of a source term given in physical coordinates.
pub fn assemble_load(patch: &Patch, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let p1 = patch.basis1.degree();
    let p2 = patch.basis2.degree();
    let t1 = tabulate(&patch.basis1, p1 + 2);
    let t2 = tabulate(&patch.basis2, p2 + 2);
    let (n1, n2) = patch.dims();
    let mut load = vec![0.0; n1 * n2];
    for s2 in &t2.spans {
        for s1 in &t1.spans {
            for q2 in 0..s2.points.len() {
                for q1 in 0..s1.points.len() {
                    let j = patch.geometry.jacobian(s1.points[q1], s2.points[q2]);
                    let det = (j[0][0] * j[1][1] - j[0][1] * j[1][0]).abs();
                    let pt = patch.geometry.eval(s1.points[q1], s2.points[q2]);
                    let w = s1.weights[q1] * s2.weights[q2] * det * f(pt[0], pt[1]);
                    for b in 0..=p2 {
                        for a in 0..=p1 {
                            load[(s2.first_basis + b) * n1 + s1.first_basis + a] +=
                                w * s1.values[q1][a] * s2.values[q2][b];
                        }
                    }
                }
            }
        }
    }
    load
}

/// Univariate mass matrix of the spline space on its parameter domain.
pub fn mass_matrix_1d(kv: &KnotVector) -> SparseMatrix {
    univariate(kv, false)
}

/// Univariate stiffness matrix on the parameter domain.
pub fn stiffness_matrix_1d(kv: &KnotVector) -> SparseMatrix {
    univariate(kv, true)
}

fn univariate(kv: &KnotVector, derivatives: bool) -> SparseMatrix {
    let p = kv.degree();
    let table = tabulate(kv, p + 1);
    let n = kv.num_basis();
    let mut trip = Vec::new();
    for span in &table.spans {
        for q in 0..span.points.len() {
            let vals = if derivatives { &span.derivs[q] } else { &span.values[q] };
            let w = span.weights[q];
            for a in 0..=p {
                for b in 0..=p {
                    trip.push((span.first_basis + a, span.first_basis + b, w * vals[a] * vals[b]));
                }
            }
        }
    }
    SparseMatrix::from_triplets(n, n, &trip).expect("univariate assembly")
}

/// Mass matrix of the patch tensor space over the parameter square,
/// ignoring the geometry map.
pub fn parameter_mass(patch: &Patch) -> SparseMatrix {
    let m1 = mass_matrix_1d(&patch.basis1);
    let m2 = mass_matrix_1d(&patch.basis2);
    SparseMatrix::kron(&m2, &m1)
}

/// Restrict a vector to a kept index set.
pub fn restrict_vector(v: &[f64], keep: &[usize]) -> Vec<f64> {
    keep.iter().map(|&i| v[i]).collect()
}

/// Scatter a restricted vector back into the full index space.
pub fn scatter_vector(v: &[f64], keep: &[usize], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (val, &i) in v.iter().zip(keep) {
        out[i] = *val;
    }
    out
}

/// Squared L2 error and squared L2 norm of the exact solution over the
/// patch, for a coefficient vector on the full tensor space.
pub fn l2_error(patch: &Patch, coeffs: &[f64], exact: impl Fn(f64, f64) -> f64) -> (f64, f64) {
    let p1 = patch.basis1.degree();
    let p2 = patch.basis2.degree();
    let t1 = tabulate(&patch.basis1, p1 + 3);
    let t2 = tabulate(&patch.basis2, p2 + 3);
    let (n1, _) = patch.dims();
    let mut err2 = 0.0;
    let mut norm2 = 0.0;
    for s2 in &t2.spans {
        for s1 in &t1.spans {
            for q2 in 0..s2.points.len() {
                for q1 in 0..s1.points.len() {
                    let j = patch.geometry.jacobian(s1.points[q1], s2.points[q2]);
                    let det = (j[0][0] * j[1][1] - j[0][1] * j[1][0]).abs();
                    let w = s1.weights[q1] * s2.weights[q2] * det;
                    let mut uh = 0.0;
                    for b in 0..=p2 {
                        for a in 0..=p1 {
                            uh += coeffs[(s2.first_basis + b) * n1 + s1.first_basis + a]
                                * s1.values[q1][a]
                                * s2.values[q2][b];
                        }
                    }
                    let pt = patch.geometry.eval(s1.points[q1], s2.points[q2]);
                    let ue = exact(pt[0], pt[1]);
                    err2 += w * (uh - ue) * (uh - ue);
                    norm2 += w * ue * ue;
                }
            }
        }
    }
    (err2, norm2)
}

/// Integral of 1 over the patch image, for geometric sanity checks.
pub fn patch_area(patch: &Patch) -> f64 {
    let t1 = tabulate(&patch.basis1, patch.basis1.degree() + 2);
    let t2 = tabulate(&patch.basis2, patch.basis2.degree() + 2);
    let mut area = 0.0;
    for s2 in &t2.spans {
        for s1 in &t1.spans {
            for q2 in 0..s2.points.len() {
                for q1 in 0..s1.points.len() {
                    let j = patch.geometry.jacobian(s1.points[q1], s2.points[q2]);
                    let det = (j[0][0] * j[1][1] - j[0][1] * j[1][0]).abs();
                    area += s1.weights[q1] * s2.weights[q2] * det;
                }
            }
        }
    }
    area
}
