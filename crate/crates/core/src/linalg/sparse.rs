//! Compressed sparse row matrix with the handful of operations the
//! solver needs: products, transposes, Galerkin triple products,
//! Kronecker products, and submatrix extraction.

use super::{LinAlgError, LinearOperator};
use nalgebra::DMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Build from (row, col, value) triplets; duplicate entries are summed,
    /// explicit zeros produced by cancellation are kept out of the pattern.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self, LinAlgError> {
        let mut counts = vec![0usize; nrows + 1];
        for &(r, c, v) in triplets {
            if r >= nrows || c >= ncols {
                return Err(LinAlgError::DimensionMismatch(format!(
                    "triplet ({r}, {c}) outside {nrows}x{ncols}"
                )));
            }
            if !v.is_finite() {
                return Err(LinAlgError::InvalidEntry(format!(
                    "non-finite value at ({r}, {c})"
                )));
            }
            counts[r + 1] += 1;
        }
        let mut start = vec![0usize; nrows + 1];
        for i in 0..nrows {
            start[i + 1] = start[i] + counts[i + 1];
        }
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0f64; triplets.len()];
        let mut cursor = start.clone();
        for &(r, c, v) in triplets {
            let k = cursor[r];
            cols[k] = c;
            vals[k] = v;
            cursor[r] += 1;
        }
        // Sort each row by column and merge duplicates.
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        for r in 0..nrows {
            scratch.clear();
            for k in start[r]..start[r + 1] {
                scratch.push((cols[k], vals[k]));
            }
            scratch.sort_unstable_by_key(|&(c, _)| c);
            let mut i = 0;
            while i < scratch.len() {
                let c = scratch[i].0;
                let mut sum = 0.0;
                while i < scratch.len() && scratch[i].0 == c {
                    sum += scratch[i].1;
                    i += 1;
                }
                if sum != 0.0 {
                    col_idx.push(c);
                    values.push(sum);
                }
            }
            row_ptr[r + 1] = col_idx.len();
        }
        Ok(Self { nrows, ncols, row_ptr, col_idx, values })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut trip = Vec::new();
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                if m[(r, c)] != 0.0 {
                    trip.push((r, c, m[(r, c)]));
                }
            }
        }
        Self::from_triplets(m.nrows(), m.ncols(), &trip).expect("dense conversion")
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `r`, sorted by column.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let lo = self.row_ptr[r];
        let hi = self.row_ptr[r + 1];
        (&self.col_idx[lo..hi], &self.values[lo..hi])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols, "matvec input length");
        assert_eq!(y.len(), self.nrows, "matvec output length");
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            let mut acc = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                acc += v * x[*c];
            }
            y[r] = acc;
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec_into(x, &mut y);
        y
    }

    /// y = A^T x without forming the transpose.
    pub fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows, "transpose matvec input length");
        let mut y = vec![0.0; self.ncols];
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (c, v) in cols.iter().zip(vals) {
                y[*c] += v * x[r];
            }
        }
        y
    }

    pub fn transpose(&self) -> Self {
        let mut trip = Vec::with_capacity(self.nnz());
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (c, v) in cols.iter().zip(vals) {
                trip.push((*c, r, *v));
            }
        }
        Self::from_triplets(self.ncols, self.nrows, &trip).expect("transpose")
    }

    /// Sparse product A * B via row-wise gather/scatter.
    pub fn matmul(&self, other: &Self) -> Result<Self, LinAlgError> {
        if self.ncols != other.nrows {
            return Err(LinAlgError::DimensionMismatch(format!(
                "matmul {}x{} * {}x{}",
                self.nrows, self.ncols, other.nrows, other.ncols
            )));
        }
        let mut trip = Vec::new();
        let mut marker = vec![usize::MAX; other.ncols];
        let mut acc: Vec<f64> = vec![0.0; other.ncols];
        let mut touched: Vec<usize> = Vec::new();
        for r in 0..self.nrows {
            touched.clear();
            let (cols_a, vals_a) = self.row(r);
            for (ka, va) in cols_a.iter().zip(vals_a) {
                let (cols_b, vals_b) = other.row(*ka);
                for (cb, vb) in cols_b.iter().zip(vals_b) {
                    if marker[*cb] != r {
                        marker[*cb] = r;
                        acc[*cb] = 0.0;
                        touched.push(*cb);
                    }
                    acc[*cb] += va * vb;
                }
            }
            for &c in &touched {
                trip.push((r, c, acc[c]));
            }
        }
        Self::from_triplets(self.nrows, other.ncols, &trip)
    }

    /// Galerkin triple product P^T A P.
    pub fn triple_product(&self, p: &Self) -> Result<Self, LinAlgError> {
        let ap = self.matmul(p)?;
        p.transpose().matmul(&ap)
    }

    /// Kronecker product with `inner` varying fastest:
    /// result[(io * n_in + ii), (jo * m_in + ji)] = outer[io, jo] * inner[ii, ji].
    pub fn kron(outer: &Self, inner: &Self) -> Self {
        let mut trip = Vec::with_capacity(outer.nnz() * inner.nnz());
        for ro in 0..outer.nrows {
            let (cols_o, vals_o) = outer.row(ro);
            for (co, vo) in cols_o.iter().zip(vals_o) {
                for ri in 0..inner.nrows {
                    let (cols_i, vals_i) = inner.row(ri);
                    for (ci, vi) in cols_i.iter().zip(vals_i) {
                        trip.push((
                            ro * inner.nrows + ri,
                            co * inner.ncols + ci,
                            vo * vi,
                        ));
                    }
                }
            }
        }
        Self::from_triplets(
            outer.nrows * inner.nrows,
            outer.ncols * inner.ncols,
            &trip,
        )
        .expect("kron")
    }

    /// Extract the submatrix A[rows, cols]. Index lists need not be sorted;
    /// entries are remapped to the positions within the lists.
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> Self {
        let mut col_map = vec![usize::MAX; self.ncols];
        for (new, &old) in cols.iter().enumerate() {
            col_map[old] = new;
        }
        let mut trip = Vec::new();
        for (new_r, &old_r) in rows.iter().enumerate() {
            let (cs, vs) = self.row(old_r);
            for (c, v) in cs.iter().zip(vs) {
                if col_map[*c] != usize::MAX {
                    trip.push((new_r, col_map[*c], *v));
                }
            }
        }
        Self::from_triplets(rows.len(), cols.len(), &trip).expect("submatrix")
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.values.iter_mut() {
            *v *= s;
        }
    }

    /// C = A + alpha * B (patterns merged).
    pub fn add_scaled(&self, alpha: f64, other: &Self) -> Result<Self, LinAlgError> {
        if self.nrows != other.nrows || self.ncols != other.ncols {
            return Err(LinAlgError::DimensionMismatch("add_scaled shapes".into()));
        }
        let mut trip = Vec::with_capacity(self.nnz() + other.nnz());
        for r in 0..self.nrows {
            let (cs, vs) = self.row(r);
            for (c, v) in cs.iter().zip(vs) {
                trip.push((r, *c, *v));
            }
            let (cs, vs) = other.row(r);
            for (c, v) in cs.iter().zip(vs) {
                trip.push((r, *c, alpha * v));
            }
        }
        Self::from_triplets(self.nrows, self.ncols, &trip)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for r in 0..self.nrows {
            let (cs, vs) = self.row(r);
            for (c, v) in cs.iter().zip(vs) {
                m[(r, *c)] = *v;
            }
        }
        m
    }

    /// Randomized symmetry probe: checks x^T A y == y^T A x for a few
    /// pseudo-random vectors. Cheap compared to an entrywise comparison.
    pub fn is_symmetric_probe(&self, tol: f64, seed: u64) -> bool {
        if self.nrows != self.ncols {
            return false;
        }
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = self.nrows;
        for _ in 0..4 {
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let ax = self.matvec(&x);
            let ay = self.matvec(&y);
            let scale = 1.0 + super::dot(&x, &ax).abs() + super::dot(&y, &ay).abs();
            if (super::dot(&y, &ax) - super::dot(&x, &ay)).abs() > tol * scale {
                return false;
            }
        }
        true
    }

    /// Maximum over rows of (row index - smallest column index in the row);
    /// the half bandwidth relevant for a banded factorization.
    pub fn lower_bandwidth(&self) -> usize {
        let mut band = 0;
        for r in 0..self.nrows {
            let (cols, _) = self.row(r);
            if let Some(&c0) = cols.first() {
                if c0 < r {
                    band = band.max(r - c0);
                }
            }
        }
        band
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut t = Vec::with_capacity(self.nnz());
        for r in 0..self.nrows {
            let (cs, vs) = self.row(r);
            for (c, v) in cs.iter().zip(vs) {
                t.push((r, *c, *v));
            }
        }
        t
    }
}

impl LinearOperator for SparseMatrix {
    fn dim(&self) -> usize {
        assert_eq!(self.nrows, self.ncols, "operator use requires square matrix");
        self.nrows
    }
    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        self.matvec_into(x, y);
    }
}
