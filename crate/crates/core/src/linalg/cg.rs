//! Conjugate gradient solvers. `pcg` is the standard preconditioned CG
//! with a zero initial guess; `semidefinite_pcg` accepts a singular SPD
//! operator with known kernel and converges in the factor space.

use super::{
    axpy, dot, norm, LinAlgError, LinearOperator, SolveReport, StopReason, STAGNATION_GATE,
};

/// Preconditioned conjugate gradients from a zero start. Convergence is
/// declared when the unpreconditioned residual drops below `tol * ||b||`.
/// The reported residual is recomputed from the final iterate.
pub fn pcg(
    a: &dyn LinearOperator,
    precond: Option<&dyn LinearOperator>,
    b: &[f64],
    tol: f64,
    max_iterations: usize,
) -> Result<(Vec<f64>, SolveReport), LinAlgError> {
    let n = a.dim();
    if b.len() != n {
        return Err(LinAlgError::DimensionMismatch(format!(
            "pcg rhs length {} vs operator dim {}",
            b.len(),
            n
        )));
    }
    let norm_b = norm(b);
    let mut x = vec![0.0; n];
    if norm_b == 0.0 {
        return Ok((
            x,
            SolveReport { iterations: 0, residual: 0.0, stop: StopReason::ZeroRhs },
        ));
    }
    let mut r = b.to_vec();
    let mut z = match precond {
        Some(p) => p.apply(&r),
        None => r.clone(),
    };
    let mut p = z.clone();
    let mut rho = dot(&r, &z);
    let mut iterations = 0;
    let mut stop = StopReason::MaxIterations;
    let mut ap = vec![0.0; n];
    for k in 1..=max_iterations {
        a.apply_into(&p, &mut ap);
        let curv = dot(&p, &ap);
        if !curv.is_finite() || curv <= 0.0 {
            if curv.is_finite() && norm(&r) <= STAGNATION_GATE * norm_b {
                stop = StopReason::Stagnated;
                break;
            }
            return Err(LinAlgError::Breakdown(format!(
                "cg curvature {curv:.3e} at iteration {k}"
            )));
        }
        let alpha = rho / curv;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        iterations = k;
        if norm(&r) <= tol * norm_b {
            stop = StopReason::Converged;
            break;
        }
        match precond {
            Some(pr) => pr.apply_into(&r, &mut z),
            None => z.copy_from_slice(&r),
        }
        let rho_new = dot(&r, &z);
        if !rho_new.is_finite() {
            return Err(LinAlgError::Breakdown("cg rho not finite".into()));
        }
        let beta = rho_new / rho;
        rho = rho_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let mut true_r = vec![0.0; n];
    a.apply_into(&x, &mut true_r);
    for i in 0..n {
        true_r[i] = b[i] - true_r[i];
    }
    let residual = norm(&true_r) / norm_b;
    Ok((x, SolveReport { iterations, residual, stop }))
}

/// CG for a symmetric positive semidefinite operator. The right-hand side
/// must be consistent; when `kernel` supplies the (single) kernel vector,
/// consistency is checked and a defensive projection removes roundoff-level
/// kernel content before iterating. With a zero start the iterates stay in
/// the range of the operator, so the returned solution is the one without
/// kernel component.
pub fn semidefinite_pcg(
    a: &dyn LinearOperator,
    precond: Option<&dyn LinearOperator>,
    b: &[f64],
    kernel: Option<&[f64]>,
    tol: f64,
    max_iterations: usize,
) -> Result<(Vec<f64>, SolveReport), LinAlgError> {
    let mut rhs = b.to_vec();
    if let Some(z) = kernel {
        if z.len() != b.len() {
            return Err(LinAlgError::DimensionMismatch(
                "kernel vector length mismatch".into(),
            ));
        }
        let zz = dot(z, z);
        if zz > 0.0 {
            let component = dot(&rhs, z) / zz.sqrt();
            let norm_b = norm(&rhs);
            if norm_b > 0.0 && component.abs() > 1e-8 * norm_b {
                return Err(LinAlgError::InconsistentRhs {
                    component: component.abs() / norm_b,
                });
            }
            if component.abs() > 1e-12 * norm_b {
                let coeff = dot(&rhs, z) / zz;
                axpy(-coeff, z, &mut rhs);
            }
        }
    }
    pcg(a, precond, &rhs, tol, max_iterations)
}
