//! Generalized symmetric-definite eigensolver with null-space filtering.

use std::f64::consts::PI;
use std::ops::Range;

use faer::{Mat, MatRef};

use crate::error::{Error, Result};
use crate::linalg::{self, column, dense_mul_vec, norm2, sym_gevp};
use crate::sparse::CsrMatrix;

pub const DEFAULT_NULL_TOL: f64 = 1e-8;
pub const DEFAULT_DELTA_MULT: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct EigenSolution {
    pub t: f64,
    /// Ascending, all above the null threshold.
    pub lambdas: Vec<f64>,
    /// `B`-orthonormal eigenvectors, one per column.
    pub vectors: Mat<f64>,
    pub n_discarded_null: usize,
}

impl EigenSolution {
    pub fn with_t(mut self, t: f64) -> Self {
        self.t = t;
        self
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    pub fn vector(&self, k: usize) -> Vec<f64> {
        column(self.vectors.as_ref(), k)
    }

    /// `f_k = √λ_k / (2π)` with unit wave speed.
    pub fn frequencies(&self) -> Vec<f64> {
        self.lambdas.iter().map(|&l| frequency(l)).collect()
    }

    /// Keeps the first `k` pairs.
    pub fn truncate(&mut self, k: usize) {
        let k = k.min(self.len());
        self.lambdas.truncate(k);
        self.vectors = linalg::leading_columns(self.vectors.as_ref(), k);
    }
}

pub fn frequency(lambda: f64) -> f64 {
    lambda.max(0.0).sqrt() / (2.0 * PI)
}

/// The `k` smallest eigenpairs of `A v = λ B v` strictly above `null_tol · max|λ|`.
pub fn solve_gevp(a: &CsrMatrix, b: &CsrMatrix, k: usize, null_tol: f64) -> Result<EigenSolution> {
    if a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch {
            context: "stiffness and mass",
            expected: b.nrows(),
            got: a.nrows(),
        });
    }
    solve_dense_gevp(a.to_dense().as_ref(), b.to_dense().as_ref(), k, null_tol)
}

/// Dense counterpart of [`solve_gevp`], used for condensed and reduced pencils.
pub fn solve_dense_gevp(
    a: MatRef<'_, f64>,
    b: MatRef<'_, f64>,
    k: usize,
    null_tol: f64,
) -> Result<EigenSolution> {
    if k == 0 {
        return Err(Error::InvalidInput("requested eigenvalue count must be at least 1".into()));
    }
    let mut sol = solve_all(a, b, null_tol)?;
    if sol.len() < k {
        return Err(Error::NotEnoughEigenvalues { requested: k, available: sol.len() });
    }
    sol.truncate(k);
    Ok(sol)
}

/// Every eigenpair above the null threshold.
pub fn solve_all(a: MatRef<'_, f64>, b: MatRef<'_, f64>, null_tol: f64) -> Result<EigenSolution> {
    if !(null_tol >= 0.0) {
        return Err(Error::InvalidInput(format!("null tolerance must be non-negative, got {null_tol}")));
    }
    let (lambdas, vectors) = sym_gevp(a, b)?;
    let reference = lambdas.iter().fold(0.0f64, |m, l| m.max(l.abs()));
    let threshold = null_tol * reference;
    let first = lambdas.iter().position(|&l| l > threshold).unwrap_or(lambdas.len());
    let n = lambdas.len();
    Ok(EigenSolution {
        t: 0.0,
        lambdas: lambdas[first..].to_vec(),
        vectors: vectors.subcols(first, n - first).to_owned(),
        n_discarded_null: first,
    })
}

/// Scales `v` to unit `B`-norm.
pub fn b_normalize(v: &[f64], b: &CsrMatrix) -> Result<Vec<f64>> {
    normalize_with(v, linalg::mass_inner(b, v, v))
}

pub fn b_normalize_dense(v: &[f64], b: MatRef<'_, f64>) -> Result<Vec<f64>> {
    normalize_with(v, linalg::dense_inner(b, v, v))
}

fn normalize_with(v: &[f64], sq: f64) -> Result<Vec<f64>> {
    if !(sq > 0.0) || !sq.is_finite() {
        return Err(Error::ZeroVector);
    }
    let s = sq.sqrt();
    Ok(v.iter().map(|x| x / s).collect())
}

/// `‖A v − λ B v‖₂ / (|λ| ‖B v‖₂)`.
pub fn relative_residual(a: &CsrMatrix, b: &CsrMatrix, v: &[f64], lambda: f64) -> f64 {
    let bv = b.mul_vec(v);
    let mut r = a.mul_vec(v);
    linalg::axpy(-lambda, &bv, &mut r);
    norm2(&r) / (lambda.abs() * norm2(&bv))
}

pub fn relative_residual_dense(a: MatRef<'_, f64>, b: MatRef<'_, f64>, v: &[f64], lambda: f64) -> f64 {
    let bv = dense_mul_vec(b, v);
    let mut r = dense_mul_vec(a, v);
    linalg::axpy(-lambda, &bv, &mut r);
    norm2(&r) / (lambda.abs() * norm2(&bv))
}

/// Groups an ascending spectrum into maximal runs whose consecutive relative
/// gaps are at most `delta`.
pub fn clusters(lambdas: &[f64], delta: f64) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for j in 1..=lambdas.len() {
        if j == lambdas.len() || !same_cluster(lambdas[j - 1], lambdas[j], delta) {
            if j > start {
                out.push(start..j);
            }
            start = j;
        }
    }
    out
}

/// Cluster containing index `i`.
pub fn cluster_of(lambdas: &[f64], i: usize, delta: f64) -> Range<usize> {
    clusters(lambdas, delta)
        .into_iter()
        .find(|r| r.contains(&i))
        .unwrap_or(i..i + 1)
}

pub fn same_cluster(x: f64, y: f64, delta: f64) -> bool {
    let scale = x.abs().max(y.abs());
    (x - y).abs() <= delta * scale
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::{assemble, MappingFamily, ReferenceMesh};

    #[test]
    fn unit_square_spectrum_at_moderate_resolution() {
        let sys = assemble(&ReferenceMesh::new(16).unwrap(), &MappingFamily::identity(), 0.0).unwrap();
        let sol = solve_gevp(&sys.a, &sys.b, 5, DEFAULT_NULL_TOL).unwrap();
        let pi2 = PI * PI;
        for (l, e) in sol.lambdas.iter().zip([1.0, 1.0, 2.0, 4.0, 4.0]) {
            assert!((l / (pi2 * e) - 1.0).abs() < 0.02, "{l} vs {}", pi2 * e);
        }
        assert_eq!(sol.n_discarded_null, sys.n_grad());
        for k in 0..5 {
            assert!(relative_residual(&sys.a, &sys.b, &sol.vector(k), sol.lambdas[k]) < 1e-9);
        }
        let g = linalg::project(sol.vectors.as_ref(), &sys.b);
        for i in 0..5 {
            for j in 0..5 {
                assert!((g[(i, j)] - if i == j { 1.0 } else { 0.0 }).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn two_by_two_mesh_discards_one_null_mode() {
        let sys = assemble(&ReferenceMesh::new(2).unwrap(), &MappingFamily::identity(), 0.0).unwrap();
        let sol = solve_gevp(&sys.a, &sys.b, 1, DEFAULT_NULL_TOL).unwrap();
        assert_eq!(sol.n_discarded_null, 1);
        let all = solve_all(sys.a.to_dense().as_ref(), sys.b.to_dense().as_ref(), DEFAULT_NULL_TOL).unwrap();
        assert_eq!(all.len(), 7);
    }

    #[test]
    fn identity_pencil() {
        let eye = CsrMatrix::identity(3);
        let sol = solve_gevp(&eye, &eye, 3, DEFAULT_NULL_TOL).unwrap();
        assert!(sol.lambdas.iter().all(|l| (l - 1.0).abs() < 1e-14));
        assert_eq!(sol.n_discarded_null, 0);
    }

    #[test]
    fn too_many_requested() {
        let eye = CsrMatrix::identity(2);
        assert!(matches!(
            solve_gevp(&eye, &eye, 3, DEFAULT_NULL_TOL),
            Err(Error::NotEnoughEigenvalues { requested: 3, available: 2 })
        ));
        assert!(solve_gevp(&eye, &eye, 0, DEFAULT_NULL_TOL).is_err());
    }

    #[test]
    fn indefinite_mass_rejected() {
        let a = CsrMatrix::identity(2);
        let b = CsrMatrix::identity(2).scaled(-1.0);
        assert!(matches!(solve_gevp(&a, &b, 1, DEFAULT_NULL_TOL), Err(Error::Factorization(_))));
    }

    #[test]
    fn normalization() {
        let b = CsrMatrix::identity(2).scaled(4.0);
        let v = b_normalize(&[1.0, 0.0], &b).unwrap();
        assert!((v[0] - 0.5).abs() < 1e-15);
        let w = b_normalize(&v, &b).unwrap();
        assert!((w[0] - v[0]).abs() < 1e-15);
        assert!(matches!(b_normalize(&[0.0, 0.0], &b), Err(Error::ZeroVector)));
    }

    #[test]
    fn clustering_groups_near_equal_values() {
        let l = [1.0, 1.0 + 1e-9, 3.0, 4.0, 4.0 * (1.0 + 1e-7), 5.0];
        assert_eq!(clusters(&l, 1e-6), vec![0..2, 2..3, 3..5, 5..6]);
        assert_eq!(cluster_of(&l, 4, 1e-6), 3..5);
        assert!(clusters(&[], 1e-6).is_empty());
    }
}
