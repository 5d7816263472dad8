//! Banded Cholesky factorization. The tensor-product dof numbering used
//! by the discretization keeps patch matrices inside a narrow band, so a
//! fixed-bandwidth factor is both simple and fast enough for the exact
//! solver paths.

use super::{LinAlgError, LinearOperator, SparseMatrix};

/// Cholesky factor of an SPD matrix stored in packed lower-band form.
#[derive(Debug)]
pub struct BandedCholesky {
    n: usize,
    band: usize,
    /// Row i occupies entries [i*(band+1), (i+1)*(band+1)); slot d holds
    /// L[i, i - band + d], i.e. the diagonal sits at d = band.
    factor: Vec<f64>,
}

impl BandedCholesky {
    pub fn new(a: &SparseMatrix) -> Result<Self, LinAlgError> {
        if a.nrows() != a.ncols() {
            return Err(LinAlgError::DimensionMismatch(
                "cholesky requires a square matrix".into(),
            ));
        }
        let n = a.nrows();
        let band = a.lower_bandwidth();
        let bw1 = band + 1;
        let mut l = vec![0.0f64; n * bw1];
        // Copy the lower triangle into packed storage.
        for i in 0..n {
            let (cols, vals) = a.row(i);
            for (c, v) in cols.iter().zip(vals) {
                if *c <= i {
                    l[i * bw1 + (c + band - i)] = *v;
                }
            }
        }
        for i in 0..n {
            let jmin = i.saturating_sub(band);
            for j in jmin..=i {
                let kmin = jmin.max(j.saturating_sub(band));
                let mut s = l[i * bw1 + (j + band - i)];
                for k in kmin..j {
                    s -= l[i * bw1 + (k + band - i)] * l[j * bw1 + (k + band - j)];
                }
                if j < i {
                    l[i * bw1 + (j + band - i)] = s / l[j * bw1 + band];
                } else {
                    if s <= 0.0 || !s.is_finite() {
                        return Err(LinAlgError::NotSpd { index: i, value: s });
                    }
                    l[i * bw1 + band] = s.sqrt();
                }
            }
        }
        Ok(Self { n, band, factor: l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve_into(&self, b: &[f64], x: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        assert_eq!(x.len(), self.n);
        let bw1 = self.band + 1;
        // L y = b
        for i in 0..self.n {
            let jmin = i.saturating_sub(self.band);
            let mut s = b[i];
            for j in jmin..i {
                s -= self.factor[i * bw1 + (j + self.band - i)] * x[j];
            }
            x[i] = s / self.factor[i * bw1 + self.band];
        }
        // L^T x = y
        for i in (0..self.n).rev() {
            let jmax = (i + self.band).min(self.n - 1);
            let mut s = x[i];
            for j in (i + 1)..=jmax {
                s -= self.factor[j * bw1 + (i + self.band - j)] * x[j];
            }
            x[i] = s / self.factor[i * bw1 + self.band];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.n];
        self.solve_into(b, &mut x);
        x
    }
}

impl LinearOperator for BandedCholesky {
    fn dim(&self) -> usize {
        self.n
    }
    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        self.solve_into(x, y);
    }
}
