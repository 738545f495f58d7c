//! Cached linear-algebra kernels around the equality-constraint matrix `A`.
//!
//! Every geometric operation of the solver needs solves with `A Aᵀ`, the
//! pseudo-inverse `A† = Aᵀ (A Aᵀ)⁻¹` and the null-space projector
//! `J_A = I − A† A`. [`ConstraintFactors`] factorizes `A Aᵀ` once and exposes
//! those applicators; it is immutable after construction and can be shared
//! freely between threads.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Result, RnnalError};

/// Density above which a constraint matrix is kept dense.
pub const DENSE_FALLBACK_DENSITY: f64 = 0.25;

/// Relative Cholesky pivot threshold used to detect rank deficiency.
pub const PIVOT_THRESHOLD: f64 = 1e-12;

/// Compressed-column storage for a sparse real matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CscMatrix {
    nrows: usize,
    ncols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CscMatrix {
    /// Builds a CSC matrix from a dense one, dropping exact zeros.
    pub fn from_dense(a: &DMatrix<f64>) -> Self {
        let (nrows, ncols) = a.shape();
        let mut col_ptr = Vec::with_capacity(ncols + 1);
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        col_ptr.push(0);
        for j in 0..ncols {
            for i in 0..nrows {
                let v = a[(i, j)];
                if v != 0.0 {
                    row_idx.push(i);
                    values.push(v);
                }
            }
            col_ptr.push(row_idx.len());
        }
        Self {
            nrows,
            ncols,
            col_ptr,
            row_idx,
            values,
        }
    }

    /// Number of stored nonzeros.
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Iterates over `(row, value)` pairs of column `j`.
    pub fn column(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.col_ptr[j]..self.col_ptr[j + 1];
        self.row_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    /// Dense copy.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.nrows, self.ncols);
        for j in 0..self.ncols {
            for (i, v) in self.column(j) {
                out[(i, j)] = v;
            }
        }
        out
    }
}

/// The constraint matrix in whichever storage suits its density.
#[derive(Clone, Debug, PartialEq)]
pub enum ConstraintMatrix {
    /// Dense column-major storage.
    Dense(DMatrix<f64>),
    /// Compressed sparse columns.
    Sparse(CscMatrix),
}

impl ConstraintMatrix {
    /// Chooses sparse storage unless the density exceeds
    /// [`DENSE_FALLBACK_DENSITY`].
    pub fn new(a: &DMatrix<f64>) -> Self {
        let total = a.nrows() * a.ncols();
        let nnz = a.iter().filter(|v| **v != 0.0).count();
        if total == 0 || (nnz as f64) > DENSE_FALLBACK_DENSITY * total as f64 {
            Self::Dense(a.clone())
        } else {
            Self::Sparse(CscMatrix::from_dense(a))
        }
    }

    /// `(m, n)`.
    pub fn shape(&self) -> (usize, usize) {
        match self {
            Self::Dense(a) => a.shape(),
            Self::Sparse(a) => (a.nrows, a.ncols),
        }
    }

    /// Number of nonzeros (dense storage counts every entry that is nonzero).
    pub fn nnz(&self) -> usize {
        match self {
            Self::Dense(a) => a.iter().filter(|v| **v != 0.0).count(),
            Self::Sparse(a) => a.nnz(),
        }
    }

    /// Dense copy of `A`.
    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Self::Dense(a) => a.clone(),
            Self::Sparse(a) => a.to_dense(),
        }
    }

    /// `A · X` for an `n × k` matrix `X`.
    pub fn mul(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let (m, n) = self.shape();
        debug_assert_eq!(x.nrows(), n);
        match self {
            Self::Dense(a) => a * x,
            Self::Sparse(a) => {
                let mut out = DMatrix::zeros(m, x.ncols());
                for c in 0..x.ncols() {
                    for j in 0..n {
                        let xj = x[(j, c)];
                        if xj == 0.0 {
                            continue;
                        }
                        for (i, v) in a.column(j) {
                            out[(i, c)] += v * xj;
                        }
                    }
                }
                out
            }
        }
    }

    /// `A · x` for a vector.
    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let out = self.mul(&DMatrix::from_column_slice(x.len(), 1, x.as_slice()));
        DVector::from_column_slice(out.as_slice())
    }

    /// `Aᵀ · Y` for an `m × k` matrix `Y`.
    pub fn tr_mul(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let (m, n) = self.shape();
        debug_assert_eq!(y.nrows(), m);
        match self {
            Self::Dense(a) => a.tr_mul(y),
            Self::Sparse(a) => {
                let mut out = DMatrix::zeros(n, y.ncols());
                for c in 0..y.ncols() {
                    for j in 0..n {
                        let mut acc = 0.0;
                        for (i, v) in a.column(j) {
                            acc += v * y[(i, c)];
                        }
                        out[(j, c)] = acc;
                    }
                }
                out
            }
        }
    }

    /// `Aᵀ · y` for a vector.
    pub fn tr_mul_vec(&self, y: &DVector<f64>) -> DVector<f64> {
        let out = self.tr_mul(&DMatrix::from_column_slice(y.len(), 1, y.as_slice()));
        DVector::from_column_slice(out.as_slice())
    }

    /// `A · Diag(w) · Aᵀ`.
    pub fn weighted_gram(&self, w: &[f64]) -> DMatrix<f64> {
        let (m, n) = self.shape();
        debug_assert_eq!(w.len(), n);
        match self {
            Self::Dense(a) => {
                let mut scaled = a.clone();
                for (j, wj) in w.iter().enumerate() {
                    scaled.column_mut(j).scale_mut(*wj);
                }
                scaled * a.transpose()
            }
            Self::Sparse(a) => {
                let mut out = DMatrix::zeros(m, m);
                for (j, wj) in w.iter().enumerate() {
                    let col: Vec<(usize, f64)> = a.column(j).collect();
                    for &(i, vi) in &col {
                        for &(k, vk) in &col {
                            out[(i, k)] += wj * vi * vk;
                        }
                    }
                }
                out
            }
        }
    }
}

/// `A` together with a Cholesky factorization of `A Aᵀ`.
#[derive(Clone, Debug)]
pub struct ConstraintFactors {
    a: ConstraintMatrix,
    chol: Option<Cholesky<f64, Dyn>>,
    m: usize,
    n: usize,
    nnz: usize,
}

impl ConstraintFactors {
    /// The constraint matrix.
    pub fn matrix(&self) -> &ConstraintMatrix {
        &self.a
    }

    /// Number of constraint rows.
    pub fn m(&self) -> usize {
        self.m
    }

    /// Number of variables.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of nonzeros of `A`.
    pub fn nnz(&self) -> usize {
        self.nnz
    }

    /// Lower-triangular Cholesky factor of `A Aᵀ` (`None` when `m = 0`).
    pub fn chol_aat(&self) -> Option<DMatrix<f64>> {
        self.chol.as_ref().map(|c| c.l())
    }

    /// Solves `(A Aᵀ) Z = X` for an `m × k` right-hand side.
    pub fn aat_solve(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_rows("aat_solve", self.m, x)?;
        Ok(match &self.chol {
            Some(c) => c.solve(x),
            None => DMatrix::zeros(0, x.ncols()),
        })
    }

    /// Solves `L Z = X` with the Cholesky factor `L` of `A Aᵀ`.
    pub fn chol_lower_solve(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_rows("chol_lower_solve", self.m, x)?;
        Ok(match &self.chol {
            Some(c) => c
                .l_dirty()
                .solve_lower_triangular(x)
                .expect("Cholesky factor has a positive diagonal"),
            None => DMatrix::zeros(0, x.ncols()),
        })
    }

    /// Solves `Lᵀ Z = X` with the Cholesky factor `L` of `A Aᵀ`.
    pub fn chol_upper_solve(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_rows("chol_upper_solve", self.m, x)?;
        Ok(match &self.chol {
            Some(c) => c
                .l_dirty()
                .tr_solve_lower_triangular(x)
                .expect("Cholesky factor has a positive diagonal"),
            None => DMatrix::zeros(0, x.ncols()),
        })
    }

    /// `A · X`.
    pub fn a_mul(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_rows("a_mul", self.n, x)?;
        Ok(self.a.mul(x))
    }

    /// `Aᵀ · Y`.
    pub fn at_mul(&self, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_rows("at_mul", self.m, y)?;
        Ok(self.a.tr_mul(y))
    }
}

fn check_rows(context: &'static str, rows: usize, x: &DMatrix<f64>) -> Result<()> {
    if x.nrows() != rows {
        return Err(RnnalError::DimensionMismatch {
            context,
            expected: (rows, x.ncols()),
            found: x.shape(),
        });
    }
    Ok(())
}

/// Factorizes `A Aᵀ` once for the lifetime of a problem.
///
/// Fails with [`RnnalError::RankDeficient`] when a pivot of the Cholesky
/// factorization falls below `1e-12 · max diag(A Aᵀ)`.
pub fn factorize_constraints(a: &DMatrix<f64>) -> Result<ConstraintFactors> {
    let (m, n) = a.shape();
    if m > n {
        return Err(RnnalError::RankDeficient {
            pivot: 0.0,
            threshold: 0.0,
        });
    }
    let storage = ConstraintMatrix::new(a);
    let nnz = storage.nnz();
    if m == 0 {
        return Ok(ConstraintFactors {
            a: storage,
            chol: None,
            m,
            n,
            nnz,
        });
    }
    let aat = a * a.transpose();
    let max_diag = aat.diagonal().max();
    let threshold = PIVOT_THRESHOLD * max_diag.max(f64::MIN_POSITIVE);
    let chol = Cholesky::new(aat).ok_or(RnnalError::RankDeficient {
        pivot: 0.0,
        threshold,
    })?;
    let l = chol.l_dirty();
    for i in 0..m {
        let pivot = l[(i, i)] * l[(i, i)];
        if !(pivot > threshold) {
            return Err(RnnalError::RankDeficient { pivot, threshold });
        }
    }
    Ok(ConstraintFactors {
        a: storage,
        chol: Some(chol),
        m,
        n,
        nnz,
    })
}

/// `A† X = Aᵀ (A Aᵀ)⁻¹ X` via two triangular solves per column.
pub fn pinv_apply(f: &ConstraintFactors, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_rows("pinv_apply", f.m, x)?;
    if f.m == 0 {
        return Ok(DMatrix::zeros(f.n, x.ncols()));
    }
    let z = f.aat_solve(x)?;
    Ok(f.a.tr_mul(&z))
}

/// `J_A X = X − A†(A X)`, the projection onto the null space of `A`.
pub fn ja_apply(f: &ConstraintFactors, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_rows("ja_apply", f.n, x)?;
    if f.m == 0 {
        return Ok(x.clone());
    }
    let ax = f.a.mul(x);
    Ok(x - pinv_apply(f, &ax)?)
}

/// Vector form of [`ja_apply`].
pub fn ja_apply_vec(f: &ConstraintFactors, x: &DVector<f64>) -> Result<DVector<f64>> {
    let out = ja_apply(f, &DMatrix::from_column_slice(x.len(), 1, x.as_slice()))?;
    Ok(DVector::from_column_slice(out.as_slice()))
}

/// Vector form of [`pinv_apply`].
pub fn pinv_apply_vec(f: &ConstraintFactors, x: &DVector<f64>) -> Result<DVector<f64>> {
    let out = pinv_apply(f, &DMatrix::from_column_slice(x.len(), 1, x.as_slice()))?;
    Ok(DVector::from_column_slice(out.as_slice()))
}
