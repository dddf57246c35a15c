//! Dense helpers on top of `faer`: mass-weighted inner products, Galerkin
//! projection, the symmetric-definite pencil solver and mass orthonormalization.

use faer::linalg::solvers::Solve;
use faer::{Mat, MatRef, Side};

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn max_abs(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// A symmetric positive-definite matrix used as an inner product.
pub trait MassOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Vec<f64>;
    fn apply_mat(&self, x: MatRef<'_, f64>) -> Mat<f64>;
}

impl MassOperator for CsrMatrix {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.mul_vec(x)
    }

    fn apply_mat(&self, x: MatRef<'_, f64>) -> Mat<f64> {
        self.mul_dense(x)
    }
}

impl MassOperator for Mat<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        dense_mul_vec(self.as_ref(), x)
    }

    fn apply_mat(&self, x: MatRef<'_, f64>) -> Mat<f64> {
        self * x
    }
}

/// `xᵀ M y`.
pub fn mass_inner<M: MassOperator + ?Sized>(m: &M, x: &[f64], y: &[f64]) -> f64 {
    dot(x, &m.apply(y))
}

pub fn mass_norm<M: MassOperator + ?Sized>(m: &M, x: &[f64]) -> f64 {
    mass_inner(m, x, x).max(0.0).sqrt()
}

/// Inner product `xᵀ M y` with a dense matrix.
pub fn dense_inner(m: MatRef<'_, f64>, x: &[f64], y: &[f64]) -> f64 {
    dot(x, &dense_mul_vec(m, y))
}

pub fn dense_mul_vec(m: MatRef<'_, f64>, x: &[f64]) -> Vec<f64> {
    assert_eq!(m.ncols(), x.len(), "dense matvec: vector length");
    let mut y = vec![0.0; m.nrows()];
    for (j, xj) in x.iter().enumerate() {
        if *xj == 0.0 {
            continue;
        }
        let col = m.col(j);
        for (i, yi) in y.iter_mut().enumerate() {
            *yi += col[i] * xj;
        }
    }
    y
}

/// `mᵀ x`.
pub fn dense_tr_mul_vec(m: MatRef<'_, f64>, x: &[f64]) -> Vec<f64> {
    assert_eq!(m.nrows(), x.len(), "dense transposed matvec: vector length");
    (0..m.ncols())
        .map(|j| {
            let col = m.col(j);
            (0..m.nrows()).map(|i| col[i] * x[i]).sum()
        })
        .collect()
}

pub fn column(m: MatRef<'_, f64>, j: usize) -> Vec<f64> {
    let c = m.col(j);
    (0..m.nrows()).map(|i| c[i]).collect()
}

pub fn set_column(m: &mut Mat<f64>, j: usize, v: &[f64]) {
    let mut c = m.col_mut(j);
    for (i, vi) in v.iter().enumerate() {
        c[i] = *vi;
    }
}

pub fn from_columns(nrows: usize, cols: &[Vec<f64>]) -> Mat<f64> {
    Mat::from_fn(nrows, cols.len(), |i, j| cols[j][i])
}

/// Keeps the first `ncols` columns.
pub fn leading_columns(m: MatRef<'_, f64>, ncols: usize) -> Mat<f64> {
    m.subcols(0, ncols).to_owned()
}

pub fn append_columns(m: MatRef<'_, f64>, cols: &[Vec<f64>]) -> Mat<f64> {
    let n0 = m.ncols();
    Mat::from_fn(m.nrows(), n0 + cols.len(), |i, j| {
        if j < n0 {
            m[(i, j)]
        } else {
            cols[j - n0][i]
        }
    })
}

pub fn symmetrize(m: &mut Mat<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

pub fn dense_max_abs(m: MatRef<'_, f64>) -> f64 {
    let mut out = 0.0f64;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            out = out.max(m[(i, j)].abs());
        }
    }
    out
}

/// Galerkin projection `Zᵀ M Z`, symmetrized.
pub fn project<M: MassOperator + ?Sized>(z: MatRef<'_, f64>, m: &M) -> Mat<f64> {
    let mz = m.apply_mat(z);
    let mut out = z.transpose() * &mz;
    symmetrize(&mut out);
    out
}

/// Dense Cholesky factorization of a symmetric positive-definite matrix.
pub struct DenseCholesky {
    llt: faer::linalg::solvers::Llt<f64>,
}

impl DenseCholesky {
    pub fn new(m: MatRef<'_, f64>) -> Result<Self> {
        let llt = m
            .llt(Side::Lower)
            .map_err(|e| Error::Factorization(format!("Cholesky: {e:?}")))?;
        Ok(Self { llt })
    }

    pub fn from_sparse(m: &CsrMatrix) -> Result<Self> {
        Self::new(m.to_dense().as_ref())
    }

    pub fn dim(&self) -> usize {
        self.llt.L().nrows()
    }

    pub fn lower(&self) -> MatRef<'_, f64> {
        self.llt.L()
    }

    pub fn solve_vec(&self, rhs: &[f64]) -> Vec<f64> {
        let mut m = Mat::from_fn(rhs.len(), 1, |i, _| rhs[i]);
        self.llt.solve_in_place(m.as_mut());
        column(m.as_ref(), 0)
    }

    pub fn solve_mat(&self, rhs: MatRef<'_, f64>) -> Mat<f64> {
        let mut m = rhs.to_owned();
        self.llt.solve_in_place(m.as_mut());
        m
    }
}

/// Sparse Cholesky factorization (fill-reducing ordering chosen by `faer`).
pub struct SparseCholesky {
    dim: usize,
    llt: faer::sparse::linalg::solvers::Llt<usize, f64>,
}

impl SparseCholesky {
    pub fn new(m: &CsrMatrix) -> Result<Self> {
        let n = m.nrows();
        let triplets: Vec<_> = m
            .triplets()
            .filter(|&(i, j, _)| i >= j)
            .map(|(i, j, v)| faer::sparse::Triplet::new(i, j, v))
            .collect();
        let csc = faer::sparse::SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets)
            .map_err(|e| Error::Factorization(format!("sparse matrix: {e:?}")))?;
        let llt = csc
            .sp_cholesky(Side::Lower)
            .map_err(|e| Error::Factorization(format!("sparse Cholesky: {e:?}")))?;
        Ok(Self { dim: n, llt })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn solve_vec(&self, rhs: &[f64]) -> Vec<f64> {
        let mut m = Mat::from_fn(rhs.len(), 1, |i, _| rhs[i]);
        self.llt.solve_in_place(m.as_mut());
        column(m.as_ref(), 0)
    }

    pub fn solve_mat(&self, rhs: MatRef<'_, f64>) -> Mat<f64> {
        let mut m = rhs.to_owned();
        self.llt.solve_in_place(m.as_mut());
        m
    }
}

/// Full spectrum of the symmetric-definite pencil `(A, B)` through the Cholesky
/// reduction `L⁻¹ A L⁻ᵀ`. Eigenvalues ascending, eigenvectors `B`-orthonormal.
pub fn sym_gevp(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || b.ncols() != n {
        return Err(Error::DimensionMismatch {
            context: "generalized eigenproblem",
            expected: n,
            got: b.nrows(),
        });
    }
    if n == 0 {
        return Ok((Vec::new(), Mat::zeros(0, 0)));
    }
    let chol = DenseCholesky::new(b)?;
    let l = chol.lower();
    let mut x = a.to_owned();
    l.solve_lower_triangular_in_place(x.as_mut());
    let mut c = x.transpose().to_owned();
    l.solve_lower_triangular_in_place(c.as_mut());
    symmetrize(&mut c);
    let evd = c
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Factorization(format!("symmetric eigensolver: {e:?}")))?;
    let s = evd.S().column_vector();
    let lambdas: Vec<f64> = (0..n).map(|i| s[i]).collect();
    let mut v = evd.U().to_owned();
    l.transpose().solve_upper_triangular_in_place(v.as_mut());
    Ok((lambdas, v))
}

/// Incrementally built `M`-orthonormal set, stored column by column together
/// with `M` applied to each column.
#[derive(Debug, Clone, Default)]
pub struct MassGramSchmidt {
    cols: Vec<Vec<f64>>,
    m_cols: Vec<Vec<f64>>,
}

impl MassGramSchmidt {
    pub fn new() -> Self {
        Self::default()
    }

    /// Starts from columns that are already `M`-orthonormal.
    pub fn from_orthonormal<M: MassOperator + ?Sized>(q: MatRef<'_, f64>, m: &M) -> Self {
        let cols: Vec<Vec<f64>> = (0..q.ncols()).map(|j| column(q, j)).collect();
        let m_cols = cols.iter().map(|c| m.apply(c)).collect();
        Self { cols, m_cols }
    }

    pub fn len(&self) -> usize {
        self.cols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cols.is_empty()
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.cols
    }

    /// Removes the components along the stored columns (two modified passes).
    pub fn orthogonalize(&self, v: &[f64]) -> Vec<f64> {
        let mut w = v.to_vec();
        for _pass in 0..2 {
            for (q, mq) in self.cols.iter().zip(&self.m_cols) {
                let coeff = dot(mq, &w);
                axpy(-coeff, q, &mut w);
            }
        }
        w
    }

    /// Orthogonalizes and normalizes `v`, appending it unless its remaining
    /// `M`-norm is at most `drop_tol` times the input norm. Returns whether it was kept.
    pub fn push<M: MassOperator + ?Sized>(&mut self, m: &M, v: &[f64], drop_tol: f64) -> bool {
        let norm0 = mass_norm(m, v);
        if !(norm0 > 0.0) || !norm0.is_finite() {
            return false;
        }
        let mut w = self.orthogonalize(v);
        let mw = m.apply(&w);
        let norm = dot(&w, &mw).max(0.0).sqrt();
        if norm <= drop_tol * norm0 {
            return false;
        }
        w.iter_mut().for_each(|x| *x /= norm);
        self.m_cols.push(mw.into_iter().map(|x| x / norm).collect());
        self.cols.push(w);
        true
    }

    pub fn to_mat(&self, nrows: usize) -> Mat<f64> {
        from_columns(nrows, &self.cols)
    }
}

/// `M`-orthonormalizes the columns of `z` in order, dropping dependent ones.
/// Returns the new basis and the indices of the dropped input columns.
pub fn mass_orthonormalize<M: MassOperator + ?Sized>(
    z: MatRef<'_, f64>,
    m: &M,
    drop_tol: f64,
) -> (Mat<f64>, Vec<usize>) {
    let mut gs = MassGramSchmidt::new();
    let mut dropped = Vec::new();
    for j in 0..z.ncols() {
        if !gs.push(m, &column(z, j), drop_tol) {
            dropped.push(j);
        }
    }
    (gs.to_mat(z.nrows()), dropped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::TripletBuilder;

    fn tridiag(n: usize, d: f64, o: f64) -> CsrMatrix {
        let mut b = TripletBuilder::new(n, n);
        for i in 0..n {
            b.push(i, i, d);
            if i + 1 < n {
                b.push(i, i + 1, o);
                b.push(i + 1, i, o);
            }
        }
        b.build()
    }

    #[test]
    fn identity_pencil_has_unit_spectrum() {
        let eye = Mat::<f64>::identity(3, 3);
        let (l, v) = sym_gevp(eye.as_ref(), eye.as_ref()).unwrap();
        for x in l {
            assert!((x - 1.0).abs() < 1e-14);
        }
        let g = v.transpose() * &v;
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((g[(i, j)] - e).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn pencil_vectors_are_mass_orthonormal_and_satisfy_residual() {
        let a = tridiag(6, 2.0, -1.0);
        let b = tridiag(6, 4.0, 1.0);
        let (lam, v) = sym_gevp(a.to_dense().as_ref(), b.to_dense().as_ref()).unwrap();
        assert!(lam.windows(2).all(|w| w[0] <= w[1]));
        let vtbv = project(v.as_ref(), &b);
        for i in 0..6 {
            for j in 0..6 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((vtbv[(i, j)] - e).abs() < 1e-12);
            }
            let x = column(v.as_ref(), i);
            let mut r = a.mul_vec(&x);
            axpy(-lam[i], &b.mul_vec(&x), &mut r);
            assert!(norm2(&r) < 1e-12);
        }
    }

    #[test]
    fn orthonormalization_drops_dependent_columns() {
        let m = tridiag(4, 3.0, 1.0);
        let z = Mat::from_fn(4, 3, |i, j| match j {
            0 => 1.0 + i as f64,
            1 => 2.0 * (1.0 + i as f64),
            _ => (i * i) as f64,
        });
        let (q, dropped) = mass_orthonormalize(z.as_ref(), &m, 1e-10);
        assert_eq!(dropped, vec![1]);
        assert_eq!(q.ncols(), 2);
        let g = project(q.as_ref(), &m);
        assert!((g[(0, 1)]).abs() < 1e-13);
        assert!((g[(1, 1)] - 1.0).abs() < 1e-13);
    }
}
