//! Thin linear-algebra layer: a CSR sparse matrix for assembly and matvecs,
//! conversions into `faer` for factorizations, and the symmetric-definite
//! generalized eigensolver used by the eigendecomposition propagator.

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};
use faer::Side;

use crate::error::{CoreError, Result};
use crate::C64;

/// Compressed-sparse-row matrix with `f64` entries.
///
/// Assembly goes through [`CooBuilder`]; duplicate entries are summed.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Entries of row `i` as `(col, value)` pairs.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        self.col_idx[lo..hi]
            .iter()
            .copied()
            .zip(self.values[lo..hi].iter().copied())
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        let mut y = vec![0.0; self.nrows];
        for i in 0..self.nrows {
            let mut acc = 0.0;
            for (j, v) in self.row(i) {
                acc += v * x[j];
            }
            y[i] = acc;
        }
        y
    }

    /// Real matrix times complex vector.
    pub fn matvec_c(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(x.len(), self.ncols);
        let mut y = vec![C64::new(0.0, 0.0); self.nrows];
        for i in 0..self.nrows {
            let mut re = 0.0;
            let mut im = 0.0;
            for (j, v) in self.row(i) {
                re += v * x[j].re;
                im += v * x[j].im;
            }
            y[i] = C64::new(re, im);
        }
        y
    }

    /// Hermitian quadratic form `x* A x` (A real, x complex).
    pub fn quadratic_form(&self, x: &[C64]) -> f64 {
        let ax = self.matvec_c(x);
        x.iter()
            .zip(ax.iter())
            .map(|(a, b)| a.re * b.re + a.im * b.im)
            .sum()
    }

    /// Scaled sum `alpha * self + beta * other`; the two operands may have
    /// different sparsity patterns.
    pub fn scale_add(&self, alpha: f64, other: &CsrMatrix, beta: f64) -> CsrMatrix {
        assert_eq!(self.nrows, other.nrows);
        assert_eq!(self.ncols, other.ncols);
        let mut b = CooBuilder::new(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                b.add(i, j, alpha * v);
            }
            for (j, v) in other.row(i) {
                b.add(i, j, beta * v);
            }
        }
        b.build()
    }

    /// Dense copy (small problems and eigensolver input).
    pub fn to_dense(&self) -> Mat<f64> {
        let mut m = Mat::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                m[(i, j)] += v;
            }
        }
        m
    }

    pub fn to_faer(&self) -> SparseColMat<usize, f64> {
        let mut trips = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                trips.push(Triplet::new(i, j, v));
            }
        }
        SparseColMat::try_new_from_triplets(self.nrows, self.ncols, &trips)
            .expect("valid triplets")
    }

    /// Maximum absolute row-sum asymmetry `max |A_ij - A_ji|`; the matrix must
    /// be square.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                let vt = self.get(j, i);
                worst = worst.max((v - vt).abs());
            }
        }
        worst
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        for (c, v) in self.row(i) {
            if c == j {
                return v;
            }
        }
        0.0
    }
}

/// Triplet accumulator producing a [`CsrMatrix`] with summed duplicates.
pub struct CooBuilder {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl CooBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.nrows && j < self.ncols);
        self.entries.push((i, j, v));
    }

    pub fn build(mut self) -> CsrMatrix {
        self.entries.sort_unstable_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0usize; self.nrows + 1];
        let mut col_idx = Vec::new();
        let mut values: Vec<f64> = Vec::new();
        let mut last = None;
        for (i, j, v) in self.entries {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(j);
                values.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..self.nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            row_ptr,
            col_idx,
            values,
        }
    }
}

/// Pack a complex vector into an `(n, 2)` real matrix `[re | im]`.
pub fn pack_complex(x: &[C64]) -> Mat<f64> {
    Mat::from_fn(x.len(), 2, |i, j| if j == 0 { x[i].re } else { x[i].im })
}

/// Inverse of [`pack_complex`].
pub fn unpack_complex(m: &Mat<f64>) -> Vec<C64> {
    (0..m.nrows()).map(|i| C64::new(m[(i, 0)], m[(i, 1)])).collect()
}

/// Dense real matrix times complex vector, via the two-column packing.
pub fn dense_matvec_c(a: &Mat<f64>, x: &[C64]) -> Vec<C64> {
    let xm = pack_complex(x);
    let ym = a * xm;
    unpack_complex(&ym)
}

/// Sparse SPD solver (Cholesky) with a residual check on every solve.
pub struct SpdSolver {
    mat: CsrMatrix,
    chol: faer::sparse::linalg::solvers::Llt<usize, f64>,
}

impl SpdSolver {
    pub fn new(mat: &CsrMatrix) -> Result<Self> {
        let f = mat.to_faer();
        let chol = f
            .sp_cholesky(Side::Lower)
            .map_err(|e| CoreError::SolverFailure(format!("sparse Cholesky failed: {e:?}")))?;
        Ok(Self {
            mat: mat.clone(),
            chol,
        })
    }

    /// Solve `A x = b` for complex `b`, checking `||Ax - b|| <= tol * ||b||`.
    pub fn solve_c(&self, b: &[C64], rel_tol: f64) -> Result<Vec<C64>> {
        let bm = pack_complex(b);
        let xm = self.chol.solve(&bm);
        let x = unpack_complex(&xm);
        let ax = self.mat.matvec_c(&x);
        let mut r2 = 0.0;
        let mut b2 = 0.0;
        for i in 0..b.len() {
            let d = ax[i] - b[i];
            r2 += crate::abs2(d);
            b2 += crate::abs2(b[i]);
        }
        if r2.sqrt() > rel_tol * b2.sqrt().max(f64::MIN_POSITIVE) {
            return Err(CoreError::SolverFailure(format!(
                "SPD solve residual {:.3e} exceeds {:.1e} * ||b||",
                r2.sqrt(),
                rel_tol
            )));
        }
        Ok(x)
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let bm = Mat::from_fn(b.len(), 1, |i, _| b[i]);
        let xm = self.chol.solve(&bm);
        (0..b.len()).map(|i| xm[(i, 0)]).collect()
    }
}

/// Eigendecomposition `A p_k = lambda_k M p_k` of a symmetric-definite pencil,
/// with `P^T M P = I`.
pub struct PencilEigen {
    /// Eigenvector matrix, columns M-orthonormal.
    pub p: Mat<f64>,
    /// Real eigenvalues, ascending.
    pub lambda: Vec<f64>,
}

/// Solves the symmetric-definite generalized eigenproblem by Cholesky
/// reduction: `M = L L^T`, `B = L^{-1} A L^{-T}`, then a dense symmetric
/// eigendecomposition of `B` and back-substitution `P = L^{-T} Y`.
pub fn pencil_eigen(a: &Mat<f64>, m: &Mat<f64>) -> Result<PencilEigen> {
    let n = a.nrows();
    if a.ncols() != n || m.nrows() != n || m.ncols() != n {
        return Err(CoreError::InvalidArgument(
            "pencil matrices must be square and of equal size".into(),
        ));
    }
    let llt = m.llt(Side::Lower).map_err(|_| {
        CoreError::EigenFailure(format!(
            "mass matrix of size {n} is not positive definite (Cholesky failed)"
        ))
    })?;
    let l = llt.L().to_owned();
    // B = L^{-1} A L^{-T}
    let mut b = a.clone();
    faer::linalg::triangular_solve::solve_lower_triangular_in_place(
        l.as_ref(),
        b.as_mut(),
        faer::get_global_parallelism(),
    );
    let mut bt = b.transpose().to_owned();
    faer::linalg::triangular_solve::solve_lower_triangular_in_place(
        l.as_ref(),
        bt.as_mut(),
        faer::get_global_parallelism(),
    );
    // symmetrize to scrub round-off before the symmetric eigensolver
    let bs = faer::Mat::from_fn(n, n, |i, j| 0.5 * (bt[(i, j)] + bt[(j, i)]));
    let eig = bs.self_adjoint_eigen(Side::Lower).map_err(|e| {
        CoreError::EigenFailure(format!("symmetric eigensolver failed at size {n}: {e:?}"))
    })?;
    let lambda: Vec<f64> = (0..n).map(|i| eig.S().column_vector()[i]).collect();
    let mut p = eig.U().to_owned();
    faer::linalg::triangular_solve::solve_upper_triangular_in_place(
        l.transpose(),
        p.as_mut(),
        faer::get_global_parallelism(),
    );
    Ok(PencilEigen { p, lambda })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coo_builder_sums_duplicates() {
        let mut b = CooBuilder::new(3, 3);
        b.add(0, 0, 1.0);
        b.add(0, 0, 2.0);
        b.add(2, 1, -1.0);
        let m = b.build();
        assert_eq!(m.get(0, 0), 3.0);
        assert_eq!(m.get(2, 1), -1.0);
        assert_eq!(m.get(1, 1), 0.0);
        assert_eq!(m.nnz(), 2);
    }

    #[test]
    fn pencil_eigen_reproduces_pencil() {
        let n = 24;
        let a = Mat::from_fn(n, n, |i, j| {
            if i == j {
                2.0 + i as f64 * 0.1
            } else if i.abs_diff(j) == 1 {
                -0.7
            } else {
                0.0
            }
        });
        let m = Mat::from_fn(n, n, |i, j| {
            if i == j {
                1.5
            } else if i.abs_diff(j) == 1 {
                0.25
            } else {
                0.0
            }
        });
        let pe = pencil_eigen(&a, &m).unwrap();
        // A P = M P diag(lambda)
        let ap = &a * &pe.p;
        let mp = &m * &pe.p;
        for k in 0..n {
            for i in 0..n {
                let r = ap[(i, k)] - mp[(i, k)] * pe.lambda[k];
                assert!(r.abs() < 1e-10, "residual {r} at ({i},{k})");
            }
        }
        // P^T M P = I
        let ptmp = pe.p.transpose() * &m * &pe.p;
        for i in 0..n {
            for j in 0..n {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((ptmp[(i, j)] - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn spd_solver_roundtrip() {
        let mut b = CooBuilder::new(5, 5);
        for i in 0..5 {
            b.add(i, i, 3.0);
            b.add(i, (i + 1) % 5, 1.0);
            b.add((i + 1) % 5, i, 1.0);
        }
        let m = b.build();
        let s = SpdSolver::new(&m).unwrap();
        let rhs: Vec<C64> = (0..5).map(|i| C64::new(i as f64, -1.0)).collect();
        let x = s.solve_c(&rhs, 1e-12).unwrap();
        let ax = m.matvec_c(&x);
        for i in 0..5 {
            assert!(crate::abs2(ax[i] - rhs[i]).sqrt() < 1e-12);
        }
    }
}
