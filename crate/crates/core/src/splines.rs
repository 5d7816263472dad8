//! Univariate B-spline spaces on clamped knot vectors.
//!
//! Everything downstream works with tensor products of these: basis
//! evaluation feeds assembly, dyadic refinement builds nested hierarchies,
//! and the knot-insertion prolongation is the intergrid transfer.

use crate::linalg::SparseMatrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SplineError {
    #[error("invalid knot vector: {0}")]
    InvalidKnots(String),
    #[error("knot vectors are not nested: {0}")]
    NotNested(String),
}

/// Clamped (open) knot vector. The first and last knots repeat degree + 1
/// times, so the basis interpolates at both ends of the domain.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    degree: usize,
    knots: Vec<f64>,
}

impl KnotVector {
    pub fn new(degree: usize, knots: Vec<f64>) -> Result<Self, SplineError> {
        let p = degree;
        if knots.len() < 2 * (p + 1) {
            return Err(SplineError::InvalidKnots(format!(
                "need at least {} knots for degree {p}, got {}",
                2 * (p + 1),
                knots.len()
            )));
        }
        if knots.iter().any(|k| !k.is_finite()) {
            return Err(SplineError::InvalidKnots("non-finite knot".into()));
        }
        if knots.windows(2).any(|w| w[0] > w[1]) {
            return Err(SplineError::InvalidKnots("knots must be non-decreasing".into()));
        }
        let first = knots[0];
        let last = knots[knots.len() - 1];
        if first == last {
            return Err(SplineError::InvalidKnots("empty domain".into()));
        }
        if knots[..=p].iter().any(|&k| k != first) || knots[knots.len() - 1 - p..].iter().any(|&k| k != last)
        {
            return Err(SplineError::InvalidKnots(format!(
                "end knots must repeat {} times",
                p + 1
            )));
        }
        Ok(Self { degree, knots })
    }

    /// Uniform clamped knot vector on [0, 1] with `spans` equal elements.
    pub fn uniform_open(degree: usize, spans: usize) -> Self {
        assert!(spans >= 1, "need at least one span");
        let mut knots = vec![0.0; degree];
        for i in 0..=spans {
            knots.push(i as f64 / spans as f64);
        }
        knots.extend(std::iter::repeat(1.0).take(degree));
        Self::new(degree, knots).expect("uniform knot vector is valid")
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Dimension of the spline space.
    pub fn num_basis(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.knots[0], self.knots[self.knots.len() - 1])
    }

    /// Distinct knot values, i.e. the breakpoints of the mesh.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for &k in &self.knots {
            if out.last().map_or(true, |&prev: &f64| prev != k) {
                out.push(k);
            }
        }
        out
    }

    pub fn num_spans(&self) -> usize {
        self.breakpoints().len() - 1
    }

    /// Index k of the nonempty span with knots[k] <= t < knots[k+1],
    /// clamping t into the domain and returning the last nonempty span at
    /// the right end.
    pub fn find_span(&self, t: f64) -> usize {
        let p = self.degree;
        let n = self.num_basis();
        let (start, end) = self.domain();
        let t = t.clamp(start, end);
        let mut span = self.knots.partition_point(|&k| k <= t);
        span = span.saturating_sub(1).clamp(p, n - 1);
        while span > p && self.knots[span] == self.knots[span + 1] {
            span -= 1;
        }
        span
    }

    fn nonzero_values(&self, span: usize, t: f64, degree: usize) -> Vec<f64> {
        let mut values = vec![0.0; degree + 1];
        values[0] = 1.0;
        let mut left = vec![0.0; degree + 1];
        let mut right = vec![0.0; degree + 1];
        for j in 1..=degree {
            left[j] = t - self.knots[span + 1 - j];
            right[j] = self.knots[span + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = values[r] / (right[r + 1] + left[j - r]);
                values[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            values[j] = saved;
        }
        values
    }

    /// Values of the degree + 1 basis functions that are nonzero at t.
    /// Returns the index of the first one and the values in order.
    pub fn eval(&self, t: f64) -> (usize, Vec<f64>) {
        let (start, end) = self.domain();
        let t = t.clamp(start, end);
        let span = self.find_span(t);
        (span - self.degree, self.nonzero_values(span, t, self.degree))
    }

    /// Values and first derivatives of the nonzero basis functions at t.
    pub fn eval_with_deriv(&self, t: f64) -> (usize, Vec<f64>, Vec<f64>) {
        let p = self.degree;
        let (start, end) = self.domain();
        let t = t.clamp(start, end);
        let span = self.find_span(t);
        let values = self.nonzero_values(span, t, p);
        let mut derivs = vec![0.0; p + 1];
        if p > 0 {
            // N'_{i,p} = p (N_{i,p-1}/(t_{i+p}-t_i) - N_{i+1,p-1}/(t_{i+p+1}-t_{i+1}))
            let lower = self.nonzero_values(span, t, p - 1);
            for r in 0..=p {
                let i = span - p + r;
                let mut d = 0.0;
                if r >= 1 {
                    let den = self.knots[i + p] - self.knots[i];
                    if den > 0.0 {
                        d += lower[r - 1] / den;
                    }
                }
                if r <= p - 1 {
                    let den = self.knots[i + p + 1] - self.knots[i + 1];
                    if den > 0.0 {
                        d -= lower[r] / den;
                    }
                }
                derivs[r] = p as f64 * d;
            }
        }
        (span - p, values, derivs)
    }

    /// Knot vector with the midpoint of every nonempty span inserted once.
    /// Existing knots are kept bitwise, so the result is nested.
    pub fn refine_dyadic(&self) -> Self {
        let mut knots = Vec::with_capacity(self.knots.len() * 2);
        for w in self.knots.windows(2) {
            knots.push(w[0]);
            if w[1] > w[0] {
                knots.push(0.5 * (w[0] + w[1]));
            }
        }
        knots.push(self.knots[self.knots.len() - 1]);
        Self::new(self.degree, knots).expect("dyadic refinement keeps validity")
    }

    /// Integral of each basis function over the domain:
    /// (t_{i+p+1} - t_i) / (p + 1).
    pub fn basis_integrals(&self) -> Vec<f64> {
        let p = self.degree;
        (0..self.num_basis())
            .map(|i| (self.knots[i + p + 1] - self.knots[i]) / (p + 1) as f64)
            .collect()
    }
}

/// Coefficient transfer from a coarse spline space into a fine one obtained
/// by knot insertion (coarse knots must appear in the fine vector bitwise,
/// as `refine_dyadic` guarantees). Row count is the fine dimension.
pub fn prolongation_1d(coarse: &KnotVector, fine: &KnotVector) -> Result<SparseMatrix, SplineError> {
    if coarse.degree != fine.degree {
        return Err(SplineError::NotNested("degrees differ".into()));
    }
    if coarse.domain() != fine.domain() {
        return Err(SplineError::NotNested("domains differ".into()));
    }
    // Knots of the fine vector that are missing from the coarse one,
    // counted with multiplicity.
    let mut missing = Vec::new();
    let mut ci = 0;
    for &fk in &fine.knots {
        if ci < coarse.knots.len() && coarse.knots[ci] == fk {
            ci += 1;
        } else {
            missing.push(fk);
        }
    }
    if ci != coarse.knots.len() {
        return Err(SplineError::NotNested(
            "coarse knots are not a subvector of the fine knots".into(),
        ));
    }

    let p = coarse.degree;
    let mut current = coarse.clone();
    let mut total = SparseMatrix::identity(coarse.num_basis());
    for &u in &missing {
        // Single knot insertion: new coefficients are convex combinations
        // of neighbours with weights alpha_i = (u - t_i) / (t_{i+p} - t_i).
        let k = current.find_span(u);
        let n = current.num_basis();
        let mut trip = Vec::with_capacity(n + p + 1);
        for i in 0..=n {
            if i <= k - p {
                trip.push((i, i, 1.0));
            } else if i > k {
                trip.push((i, i - 1, 1.0));
            } else {
                let den = current.knots[i + p] - current.knots[i];
                let alpha = if den > 0.0 { (u - current.knots[i]) / den } else { 0.0 };
                if alpha != 0.0 {
                    trip.push((i, i, alpha));
                }
                if alpha != 1.0 {
                    trip.push((i, i - 1, 1.0 - alpha));
                }
            }
        }
        let step = SparseMatrix::from_triplets(n + 1, n, &trip).expect("insertion matrix");
        total = step.matmul(&total).expect("chained insertion");
        let mut knots = current.knots.clone();
        let pos = knots.partition_point(|&t| t <= u);
        knots.insert(pos, u);
        current = KnotVector { degree: p, knots };
    }
    debug_assert_eq!(total.nrows(), fine.num_basis());
    Ok(total)
}
