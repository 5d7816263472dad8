//! Conjugate gradient methods for saddle-point systems
//!
//! ```text
//! [ A  C^T ] [x]   [f]
//! [ C   0  ] [y] = [g]
//! ```
//!
//! with SPD preconditioner blocks that are only available as actions.
//! `sz_pcg` (Schöberl–Zulehner) needs a block above A in the SPD order,
//! `bpcg` (Bramble–Pasciak) needs one below. Both run plain CG recurrences
//! in the nonstandard inner product that makes the preconditioned operator
//! symmetric positive definite, and both track the untransformed residual
//! for the stopping test so the reported accuracy is meaningful.
//!
//! The recursively updated residuals drift away from the residual of the
//! actual iterate over long runs, which caps the attainable accuracy well
//! above what the spectrum allows, and the drift contaminates the search
//! directions along with the residuals. Every `RESIDUAL_REFRESH` iterations
//! the whole recursion state is therefore rebuilt from the current iterate
//! and the directions restart; each segment then behaves like a freshly
//! started solve with an exact initial residual.

use super::{
    axpy, dot, norm, LinAlgError, LinearOperator, SolveReport, SparseMatrix, StopReason,
    STAGNATION_GATE,
};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

type DenseChol = Cholesky<f64, Dyn>;

const RESIDUAL_REFRESH: usize = 15;

#[derive(Debug, Clone)]
pub struct SaddleSolution {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub report: SolveReport,
}

/// Preconditioner data for `sz_pcg`: the columns A_hat^{-1} C^T, the inexact
/// constraint Schur complement H = C A_hat^{-1} C^T, and the scaled-down
/// block H_hat = scale * H (scale < 1 keeps H_hat strictly below H).
pub struct SzPreconditioner {
    y_cols: DMatrix<f64>,
    h: DMatrix<f64>,
    h_hat: DMatrix<f64>,
    h_hat_chol: DenseChol,
}

impl SzPreconditioner {
    pub fn build(
        c: &SparseMatrix,
        a_hat_inv: &dyn LinearOperator,
        scale: f64,
    ) -> Result<Self, LinAlgError> {
        let n = a_hat_inv.dim();
        let m = c.nrows();
        if c.ncols() != n {
            return Err(LinAlgError::DimensionMismatch(
                "constraint matrix columns vs operator dim".into(),
            ));
        }
        if !(0.0 < scale && scale < 1.0) {
            return Err(LinAlgError::OrderViolation(format!(
                "schur scale must lie in (0, 1), got {scale}"
            )));
        }
        let mut y_cols = DMatrix::zeros(n, m);
        let mut col = vec![0.0; n];
        for j in 0..m {
            let mut e = vec![0.0; m];
            e[j] = 1.0;
            let ct_e = c.matvec_transpose(&e);
            a_hat_inv.apply_into(&ct_e, &mut col);
            for i in 0..n {
                y_cols[(i, j)] = col[i];
            }
        }
        let mut h = DMatrix::zeros(m, m);
        for j in 0..m {
            let cy = c.matvec(y_cols.column(j).as_slice());
            for i in 0..m {
                h[(i, j)] = cy[i];
            }
        }
        h = (h.clone() + h.transpose()) * 0.5;
        let h_hat = h.clone() * scale;
        let h_hat_chol = Cholesky::new(h_hat.clone()).ok_or(LinAlgError::NotSpd {
            index: 0,
            value: f64::NAN,
        })?;
        Ok(Self { y_cols, h, h_hat, h_hat_chol })
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    fn h_minus_h_hat_product(&self, a: &[f64], b: &[f64]) -> f64 {
        let bv = DVector::from_column_slice(b);
        let hb = &self.h * &bv - &self.h_hat * &bv;
        dot(a, hb.as_slice())
    }
}

/// Schöberl–Zulehner PCG. `a` may be singular as long as the saddle system
/// itself is nonsingular (C full row rank, A SPD on the kernel of C).
/// `a_hat_inv` must be the inverse action of a matrix strictly above A.
/// Convergence is declared on the untransformed residual relative to the
/// right-hand side norm; an indefinite inner product (ordering violated)
/// surfaces as `OrderViolation`.
pub fn sz_pcg(
    a: &dyn LinearOperator,
    c: &SparseMatrix,
    a_hat_inv: &dyn LinearOperator,
    prec: &SzPreconditioner,
    f: &[f64],
    g: &[f64],
    tol: f64,
    max_iterations: usize,
) -> Result<SaddleSolution, LinAlgError> {
    let n = a.dim();
    let m = c.nrows();
    if f.len() != n || g.len() != m {
        return Err(LinAlgError::DimensionMismatch("sz_pcg rhs lengths".into()));
    }
    let rhs_norm = (dot(f, f) + dot(g, g)).sqrt();
    if rhs_norm == 0.0 {
        return Ok(SaddleSolution {
            x: vec![0.0; n],
            y: vec![0.0; m],
            report: SolveReport { iterations: 0, residual: 0.0, stop: StopReason::ZeroRhs },
        });
    }

    // Apply the indefinite preconditioner; returns (z1, z2) and the tracker
    // value A_hat z1 = r1 - C^T z2, which makes D-inner products computable
    // without applying A_hat.
    let apply_prec = |r1: &[f64], r2: &[f64]| -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let t = a_hat_inv.apply(r1);
        let ct = c.matvec(&t);
        let rhs_small: Vec<f64> = ct.iter().zip(r2).map(|(a, b)| a - b).collect();
        let z2 = {
            let mut v = DVector::from_column_slice(&rhs_small);
            prec.h_hat_chol.solve_mut(&mut v);
            v.as_slice().to_vec()
        };
        let yz = &prec.y_cols * DVector::from_column_slice(&z2);
        let z1: Vec<f64> = t.iter().zip(yz.as_slice()).map(|(ti, yi)| ti - yi).collect();
        let ct_z2 = c.matvec_transpose(&z2);
        let img: Vec<f64> = r1.iter().zip(&ct_z2).map(|(a, b)| a - b).collect();
        (z1, z2, img)
    };

    let mut x1 = vec![0.0; n];
    let mut x2 = vec![0.0; m];
    let mut s1 = f.to_vec();
    let mut s2 = g.to_vec();

    let (mut z1, mut z2, mut img_z1) = apply_prec(&s1, &s2);
    let mut az1 = a.apply(&z1);
    let mut rho = {
        let first: f64 = (0..n).map(|i| z1[i] * (img_z1[i] - az1[i])).sum();
        first + prec.h_minus_h_hat_product(&z2, &z2)
    };
    if rho <= 0.0 {
        return Err(LinAlgError::OrderViolation(format!(
            "initial energy {rho:.3e} not positive; A_hat is not above A"
        )));
    }

    let mut p1 = z1.clone();
    let mut p2 = z2.clone();
    let mut img_p1 = img_z1.clone();
    let mut ap1 = az1.clone();

    let mut iterations = 0;
    let mut stop = StopReason::MaxIterations;
    for k in 1..=max_iterations {
        // w = saddle operator applied to p.
        let ct_p2 = c.matvec_transpose(&p2);
        let w1: Vec<f64> = (0..n).map(|i| ap1[i] + ct_p2[i]).collect();
        let w2 = c.matvec(&p1);

        let (gp1, gp2, img_gp1) = apply_prec(&w1, &w2);
        let curv = {
            let first: f64 = (0..n).map(|i| gp1[i] * (img_p1[i] - ap1[i])).sum();
            first + prec.h_minus_h_hat_product(&gp2, &p2)
        };
        if !curv.is_finite() || curv <= 0.0 {
            let rel = (dot(&s1, &s1) + dot(&s2, &s2)).sqrt() / rhs_norm;
            if curv.is_finite() && rel <= STAGNATION_GATE {
                stop = StopReason::Stagnated;
                break;
            }
            return Err(LinAlgError::OrderViolation(format!(
                "sz curvature {curv:.3e} at iteration {k}"
            )));
        }
        let alpha = rho / curv;
        axpy(alpha, &p1, &mut x1);
        axpy(alpha, &p2, &mut x2);
        axpy(-alpha, &w1, &mut s1);
        axpy(-alpha, &w2, &mut s2);
        iterations = k;
        if (dot(&s1, &s1) + dot(&s2, &s2)).sqrt() <= tol * rhs_norm {
            stop = StopReason::Converged;
            break;
        }
        if k % RESIDUAL_REFRESH == 0 {
            let ax = a.apply(&x1);
            let ct_x2 = c.matvec_transpose(&x2);
            for i in 0..n {
                s1[i] = f[i] - ax[i] - ct_x2[i];
            }
            let cx = c.matvec(&x1);
            for i in 0..m {
                s2[i] = g[i] - cx[i];
            }
            (z1, z2, img_z1) = apply_prec(&s1, &s2);
            az1 = a.apply(&z1);
            rho = {
                let first: f64 = (0..n).map(|i| z1[i] * (img_z1[i] - az1[i])).sum();
                first + prec.h_minus_h_hat_product(&z2, &z2)
            };
            if !rho.is_finite() || rho <= 0.0 {
                let rel = (dot(&s1, &s1) + dot(&s2, &s2)).sqrt() / rhs_norm;
                if rho.is_finite() && rel <= STAGNATION_GATE {
                    stop = StopReason::Stagnated;
                    break;
                }
                return Err(LinAlgError::OrderViolation(format!(
                    "sz energy {rho:.3e} after refresh at iteration {k}"
                )));
            }
            p1.copy_from_slice(&z1);
            p2.copy_from_slice(&z2);
            img_p1.copy_from_slice(&img_z1);
            ap1.copy_from_slice(&az1);
            continue;
        }
        axpy(-alpha, &gp1, &mut z1);
        axpy(-alpha, &gp2, &mut z2);
        axpy(-alpha, &img_gp1, &mut img_z1);
        az1 = a.apply(&z1);
        let rho_new = {
            let first: f64 = (0..n).map(|i| z1[i] * (img_z1[i] - az1[i])).sum();
            first + prec.h_minus_h_hat_product(&z2, &z2)
        };
        if !rho_new.is_finite() || rho_new < 0.0 {
            let rel = (dot(&s1, &s1) + dot(&s2, &s2)).sqrt() / rhs_norm;
            if rho_new.is_finite() && rel <= STAGNATION_GATE {
                stop = StopReason::Stagnated;
                break;
            }
            return Err(LinAlgError::OrderViolation(format!(
                "sz energy {rho_new:.3e} at iteration {k}"
            )));
        }
        let beta = rho_new / rho;
        rho = rho_new;
        for i in 0..n {
            p1[i] = z1[i] + beta * p1[i];
            img_p1[i] = img_z1[i] + beta * img_p1[i];
            ap1[i] = az1[i] + beta * ap1[i];
        }
        for i in 0..m {
            p2[i] = z2[i] + beta * p2[i];
        }
    }

    // True residual of the saddle system from the returned iterate.
    let ax = a.apply(&x1);
    let ct_x2 = c.matvec_transpose(&x2);
    let r1: Vec<f64> = (0..n).map(|i| f[i] - ax[i] - ct_x2[i]).collect();
    let cx = c.matvec(&x1);
    let r2: Vec<f64> = (0..m).map(|i| g[i] - cx[i]).collect();
    let residual = (dot(&r1, &r1) + dot(&r2, &r2)).sqrt() / rhs_norm;
    Ok(SaddleSolution { x: x1, y: x2, report: SolveReport { iterations, residual, stop } })
}

/// Bramble–Pasciak PCG. `a0_inv` must be the inverse action of an SPD
/// matrix strictly below A; `s0_inv` is an SPD approximation of the inverse
/// dual Schur complement. Convergence is declared when both untransformed
/// residual blocks drop below `tol * ||(f, g)||`.
#[allow(clippy::too_many_arguments)]
pub fn bpcg(
    a: &dyn LinearOperator,
    b: &SparseMatrix,
    a0_inv: &dyn LinearOperator,
    s0_inv: &dyn LinearOperator,
    f: &[f64],
    g: &[f64],
    tol: f64,
    max_iterations: usize,
) -> Result<SaddleSolution, LinAlgError> {
    let n = a.dim();
    let m = b.nrows();
    if f.len() != n || g.len() != m || b.ncols() != n || s0_inv.dim() != m {
        return Err(LinAlgError::DimensionMismatch("bpcg block dimensions".into()));
    }
    let rhs_norm = (dot(f, f) + dot(g, g)).sqrt();
    if rhs_norm == 0.0 {
        return Ok(SaddleSolution {
            x: vec![0.0; n],
            y: vec![0.0; m],
            report: SolveReport { iterations: 0, residual: 0.0, stop: StopReason::ZeroRhs },
        });
    }

    let mut u = vec![0.0; n];
    let mut lam = vec![0.0; m];
    let mut s1 = f.to_vec();
    let mut s2 = g.to_vec();

    // Transformed residual r = (A0^{-1} s1, B A0^{-1} s1 - s2); img_r1
    // tracks A0 r1 (known because r1 came out of A0^{-1}).
    let mut r1 = a0_inv.apply(&s1);
    let mut img_r1 = s1.clone();
    let br1 = b.matvec(&r1);
    let mut r2: Vec<f64> = (0..m).map(|i| br1[i] - s2[i]).collect();

    let mut z2 = s0_inv.apply(&r2);
    let mut ar1 = a.apply(&r1);
    let mut rho = {
        let first: f64 = (0..n).map(|i| r1[i] * (ar1[i] - img_r1[i])).sum();
        first + dot(&r2, &z2)
    };
    if rho <= 0.0 {
        return Err(LinAlgError::OrderViolation(format!(
            "initial energy {rho:.3e} not positive; A0 is not below A"
        )));
    }

    let mut p1 = r1.clone();
    let mut p2 = z2.clone();
    let mut img_p1 = img_r1.clone();
    let mut ap1 = ar1.clone();

    let mut iterations = 0;
    let mut stop = StopReason::MaxIterations;
    for k in 1..=max_iterations {
        let bt_p2 = b.matvec_transpose(&p2);
        let t1: Vec<f64> = (0..n).map(|i| ap1[i] + bt_p2[i]).collect();
        let q1 = a0_inv.apply(&t1);
        let img_q1 = t1;
        let bq1 = b.matvec(&q1);
        let bp1 = b.matvec(&p1);
        let q2: Vec<f64> = (0..m).map(|i| bq1[i] - bp1[i]).collect();
        let aq1 = a.apply(&q1);
        let curv = {
            let first: f64 = (0..n).map(|i| p1[i] * (aq1[i] - img_q1[i])).sum();
            first + dot(&p2, &q2)
        };
        if !curv.is_finite() || curv <= 0.0 {
            let rel = (dot(&s1, &s1) + dot(&s2, &s2)).sqrt() / rhs_norm;
            if curv.is_finite() && rel <= STAGNATION_GATE {
                stop = StopReason::Stagnated;
                break;
            }
            return Err(LinAlgError::OrderViolation(format!(
                "bpcg curvature {curv:.3e} at iteration {k}"
            )));
        }
        let alpha = rho / curv;
        axpy(alpha, &p1, &mut u);
        axpy(alpha, &p2, &mut lam);
        axpy(-alpha, &img_q1, &mut s1);
        axpy(-alpha, &bp1, &mut s2);
        axpy(-alpha, &q1, &mut r1);
        axpy(-alpha, &img_q1, &mut img_r1);
        axpy(-alpha, &q2, &mut r2);
        iterations = k;
        if norm(&s1) <= tol * rhs_norm && norm(&s2) <= tol * rhs_norm {
            stop = StopReason::Converged;
            break;
        }
        if k % RESIDUAL_REFRESH == 0 {
            let au = a.apply(&u);
            let bt_lam = b.matvec_transpose(&lam);
            for i in 0..n {
                s1[i] = f[i] - au[i] - bt_lam[i];
            }
            let bu = b.matvec(&u);
            for i in 0..m {
                s2[i] = g[i] - bu[i];
            }
            r1 = a0_inv.apply(&s1);
            img_r1.copy_from_slice(&s1);
            let br1 = b.matvec(&r1);
            for i in 0..m {
                r2[i] = br1[i] - s2[i];
            }
            s0_inv.apply_into(&r2, &mut z2);
            a.apply_into(&r1, &mut ar1);
            rho = {
                let first: f64 = (0..n).map(|i| r1[i] * (ar1[i] - img_r1[i])).sum();
                first + dot(&r2, &z2)
            };
            if !rho.is_finite() || rho <= 0.0 {
                let rel = (dot(&s1, &s1) + dot(&s2, &s2)).sqrt() / rhs_norm;
                if rho.is_finite() && rel <= STAGNATION_GATE {
                    stop = StopReason::Stagnated;
                    break;
                }
                return Err(LinAlgError::OrderViolation(format!(
                    "bpcg energy {rho:.3e} after refresh at iteration {k}"
                )));
            }
            p1.copy_from_slice(&r1);
            p2.copy_from_slice(&z2);
            img_p1.copy_from_slice(&img_r1);
            ap1.copy_from_slice(&ar1);
            continue;
        }
        s0_inv.apply_into(&r2, &mut z2);
        a.apply_into(&r1, &mut ar1);
        let rho_new = {
            let first: f64 = (0..n).map(|i| r1[i] * (ar1[i] - img_r1[i])).sum();
            first + dot(&r2, &z2)
        };
        if !rho_new.is_finite() || rho_new < 0.0 {
            let rel = (dot(&s1, &s1) + dot(&s2, &s2)).sqrt() / rhs_norm;
            if rho_new.is_finite() && rel <= STAGNATION_GATE {
                stop = StopReason::Stagnated;
                break;
            }
            return Err(LinAlgError::OrderViolation(format!(
                "bpcg energy {rho_new:.3e} at iteration {k}"
            )));
        }
        let beta = rho_new / rho;
        rho = rho_new;
        for i in 0..n {
            p1[i] = r1[i] + beta * p1[i];
            img_p1[i] = img_r1[i] + beta * img_p1[i];
            ap1[i] = ar1[i] + beta * ap1[i];
        }
        for i in 0..m {
            p2[i] = z2[i] + beta * p2[i];
        }
    }

    let au = a.apply(&u);
    let bt_lam = b.matvec_transpose(&lam);
    let res1: Vec<f64> = (0..n).map(|i| f[i] - au[i] - bt_lam[i]).collect();
    let bu = b.matvec(&u);
    let res2: Vec<f64> = (0..m).map(|i| g[i] - bu[i]).collect();
    let residual = (dot(&res1, &res1) + dot(&res2, &res2)).sqrt() / rhs_norm;
    Ok(SaddleSolution { x: u, y: lam, report: SolveReport { iterations, residual, stop } })
}
