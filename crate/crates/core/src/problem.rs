//! High-fidelity problem: mesh, mapping, tree-cotree partition and a cache of
//! assembled systems keyed by the parameter value.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::{Duration, Instant};

use faer::{Mat, MatRef};

use crate::discretization::{assemble, matrix_derivatives, MappingFamily, MatrixDerivatives, ReferenceMesh};
use crate::eigensolve::{solve_all, EigenSolution};
use crate::error::{Error, Result};
use crate::gauge::{
    build_tree_cotree, tree_cotree_condense, CotreeSystem, GaugeStrategy, GradDivProjector,
    GradientOrthogonalizer, TreeCotree, DROP_TOL,
};
use crate::linalg::{self, column, MassOperator, SparseCholesky};
use crate::sparse::CsrMatrix;

/// Assembled matrices at one `t`, with lazily computed derivatives and factorizations.
pub struct SystemAt {
    pub t: f64,
    pub a: CsrMatrix,
    pub b: CsrMatrix,
    pub c: CsrMatrix,
    derivatives: OnceLock<MatrixDerivatives>,
    chol_b: OnceLock<SparseCholesky>,
}

impl SystemAt {
    pub fn chol_b(&self) -> Result<&SparseCholesky> {
        if let Some(c) = self.chol_b.get() {
            return Ok(c);
        }
        let c = SparseCholesky::new(&self.b).map_err(|e| e.at(self.t))?;
        Ok(self.chol_b.get_or_init(|| c))
    }
}

pub struct Problem {
    pub mesh: ReferenceMesh,
    pub family: MappingFamily,
    pub tree_cotree: TreeCotree,
    pub g: CsrMatrix,
    pub null_tol: f64,
    pub h_fd: f64,
    cache: Mutex<HashMap<u64, Arc<SystemAt>>>,
    assembly_time: Mutex<Duration>,
}

impl Problem {
    pub fn new(mesh: ReferenceMesh, family: MappingFamily, null_tol: f64, h_fd: f64) -> Result<Self> {
        let tree_cotree = build_tree_cotree(&mesh)?;
        let g = crate::discretization::discrete_gradient(&mesh);
        Ok(Self {
            mesh,
            family,
            tree_cotree,
            g,
            null_tol,
            h_fd,
            cache: Mutex::new(HashMap::new()),
            assembly_time: Mutex::new(Duration::ZERO),
        })
    }

    pub fn n_curl(&self) -> usize {
        self.mesh.n_curl()
    }

    pub fn n_cotree(&self) -> usize {
        self.tree_cotree.cotree().len()
    }

    /// Assembled system at `t`, from the cache when available.
    pub fn system(&self, t: f64) -> Result<Arc<SystemAt>> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::InvalidInput(format!("parameter {t} outside [0, 1]")));
        }
        if let Some(s) = self.cache.lock().expect("cache lock").get(&t.to_bits()) {
            return Ok(Arc::clone(s));
        }
        let start = Instant::now();
        let sys = assemble(&self.mesh, &self.family, t).map_err(|e| e.at(t))?;
        let entry = Arc::new(SystemAt {
            t,
            a: sys.a,
            b: sys.b,
            c: sys.c,
            derivatives: OnceLock::new(),
            chol_b: OnceLock::new(),
        });
        *self.assembly_time.lock().expect("timer lock") += start.elapsed();
        self.cache.lock().expect("cache lock").insert(t.to_bits(), Arc::clone(&entry));
        Ok(entry)
    }

    /// `A'(t)`, `B'(t)` by finite differences, cached with the system.
    pub fn derivatives(&self, sys: &SystemAt) -> Result<MatrixDerivatives> {
        if let Some(d) = sys.derivatives.get() {
            return Ok(d.clone());
        }
        let start = Instant::now();
        let d = matrix_derivatives(&self.mesh, &self.family, sys.t, self.h_fd).map_err(|e| e.at(sys.t))?;
        *self.assembly_time.lock().expect("timer lock") += start.elapsed();
        Ok(sys.derivatives.get_or_init(|| d).clone())
    }

    /// Assembly (including finite-difference derivative) time spent so far.
    pub fn assembly_time(&self) -> Duration {
        *self.assembly_time.lock().expect("timer lock")
    }

    /// Assembles (and differentiates) ahead of time so later timings exclude it.
    pub fn warm(&self, ts: &[f64], with_derivatives: bool) -> Result<()> {
        for &t in ts {
            let s = self.system(t)?;
            if with_derivatives {
                self.derivatives(&s)?;
            }
        }
        Ok(())
    }

    pub fn clear_cache(&self) {
        self.cache.lock().expect("cache lock").clear();
    }

    /// Ungauged solve with null-space filtering; vectors `B(t)`-orthonormal.
    pub fn solve_full(&self, t: f64, k: usize) -> Result<EigenSolution> {
        let s = self.system(t)?;
        let mut sol = solve_all(s.a.to_dense().as_ref(), s.b.to_dense().as_ref(), self.null_tol)
            .map_err(|e| e.at(t))?
            .with_t(t);
        if sol.len() < k {
            return Err(Error::NotEnoughEigenvalues { requested: k, available: sol.len() }.at(t));
        }
        sol.truncate(k);
        Ok(sol)
    }

    pub fn condense(&self, t: f64) -> Result<CotreeSystem> {
        let s = self.system(t)?;
        tree_cotree_condense(&s.a, &s.b, &self.tree_cotree).map_err(|e| e.at(t))
    }

    /// Solve of the condensed pencil; vectors in cotree coordinates, `B̂(t)`-orthonormal.
    pub fn solve_cotree(&self, t: f64, k: usize) -> Result<(EigenSolution, CotreeSystem)> {
        let cs = self.condense(t)?;
        let mut sol = solve_all(cs.a_hat.as_ref(), cs.b_hat.as_ref(), self.null_tol)
            .map_err(|e| e.at(t))?
            .with_t(t);
        if sol.len() < k {
            return Err(Error::NotEnoughEigenvalues { requested: k, available: sol.len() }.at(t));
        }
        sol.truncate(k);
        self.refine_cotree(&mut sol, &cs, t)?;
        Ok((sol, cs))
    }

    /// Eigenpairs in the coordinates a reduced basis of the given gauge lives in:
    /// cotree coordinates for tree-cotree, full edge coordinates otherwise.
    pub fn solve_in_basis_space(&self, t: f64, k: usize, gauge: GaugeStrategy) -> Result<EigenSolution> {
        match gauge {
            GaugeStrategy::TreeCotree => Ok(self.solve_cotree(t, k)?.0),
            _ => self.solve_full(t, k),
        }
    }

    /// Replaces the condensed eigenvalues by Rayleigh quotients of the expanded
    /// vectors on `(A, B)`; `B̂` is poorly conditioned, the quotient is not.
    fn refine_cotree(&self, sol: &mut EigenSolution, cs: &CotreeSystem, t: f64) -> Result<()> {
        let s = self.system(t)?;
        let x = cs.expand_mat(sol.vectors.as_ref());
        let ax = s.a.mul_dense(x.as_ref());
        let bx = s.b.mul_dense(x.as_ref());
        for (j, l) in sol.lambdas.iter_mut().enumerate() {
            let num: f64 = (0..x.nrows()).map(|i| x[(i, j)] * ax[(i, j)]).sum();
            let den: f64 = (0..x.nrows()).map(|i| x[(i, j)] * bx[(i, j)]).sum();
            *l = num / den;
        }
        if sol.lambdas.windows(2).any(|w| w[1] < w[0]) {
            let mut order: Vec<usize> = (0..sol.lambdas.len()).collect();
            order.sort_by(|&i, &j| sol.lambdas[i].total_cmp(&sol.lambdas[j]));
            sol.lambdas = order.iter().map(|&i| sol.lambdas[i]).collect();
            sol.vectors = Mat::from_fn(sol.vectors.nrows(), order.len(), |i, j| sol.vectors[(i, order[j])]);
        }
        Ok(())
    }

    /// Every nonzero eigenpair in the basis-space coordinates of `gauge`.
    pub fn solve_all_in_basis_space(&self, t: f64, gauge: GaugeStrategy) -> Result<EigenSolution> {
        let sol = match gauge {
            GaugeStrategy::TreeCotree => {
                let cs = self.condense(t)?;
                solve_all(cs.a_hat.as_ref(), cs.b_hat.as_ref(), self.null_tol).and_then(|mut sol| {
                    self.refine_cotree(&mut sol, &cs, t)?;
                    Ok(sol)
                })
            }
            _ => {
                let s = self.system(t)?;
                solve_all(s.a.to_dense().as_ref(), s.b.to_dense().as_ref(), self.null_tol)
            }
        };
        Ok(sol.map_err(|e| e.at(t))?.with_t(t))
    }

    /// Inner product of the basis space at `t_ref`: `B(t_ref)` or `B̂(t_ref)`.
    pub fn inner_product(&self, gauge: GaugeStrategy, t_ref: f64) -> Result<Box<dyn MassOperator + Send + Sync>> {
        match gauge {
            GaugeStrategy::TreeCotree => Ok(Box::new(self.condense(t_ref)?.b_hat)),
            _ => Ok(Box::new(self.system(t_ref)?.b.clone())),
        }
    }

    /// Full-space vectors `X(t)` represented by basis-space columns `z`.
    pub fn basis_at(&self, z: MatRef<'_, f64>, gauge: GaugeStrategy, sys: &SystemAt) -> Result<Mat<f64>> {
        match gauge {
            GaugeStrategy::TreeCotree => crate::gauge::tree_cotree_expand_mat(z, &sys.a, sys.chol_b()?, &self.tree_cotree),
            _ => Ok(z.to_owned()),
        }
    }

    /// `X'(t)` for the cotree parametrization, `B⁻¹ (A' E_C z − B' X)`; zero otherwise.
    pub fn basis_derivative(
        &self,
        z: MatRef<'_, f64>,
        x: MatRef<'_, f64>,
        gauge: GaugeStrategy,
        sys: &SystemAt,
        d: &MatrixDerivatives,
    ) -> Result<Option<Mat<f64>>> {
        match gauge {
            GaugeStrategy::TreeCotree => {
                let mut rhs = d.a.mul_dense(self.tree_cotree.inject_mat(z).as_ref());
                rhs -= d.b.mul_dense(x);
                Ok(Some(sys.chol_b()?.solve_mat(rhs.as_ref())))
            }
            _ => Ok(None),
        }
    }

    pub fn cleaner(&self, gauge: GaugeStrategy, t_ref: f64) -> Result<Cleaner> {
        Ok(match gauge {
            GaugeStrategy::None => Cleaner::Identity,
            GaugeStrategy::TreeCotree => Cleaner::Identity,
            GaugeStrategy::GramSchmidt => {
                Cleaner::GramSchmidt(GradientOrthogonalizer::new(&self.g, &self.system(t_ref)?.b)?)
            }
            GaugeStrategy::Projection => {
                let s = self.system(t_ref)?;
                Cleaner::Projection(Box::new(GradDivProjector::new(&self.g, &s.c)?), s.b.clone())
            }
        })
    }
}

/// Snapshot/greedy vector cleanup for the active gauge.
pub enum Cleaner {
    Identity,
    GramSchmidt(GradientOrthogonalizer),
    Projection(Box<GradDivProjector>, CsrMatrix),
}

impl Cleaner {
    /// Cleaned columns, with collapsed ones (pure gradients) removed.
    /// Returns the kept columns and the indices that were dropped.
    pub fn clean(&self, z: MatRef<'_, f64>) -> (Mat<f64>, Vec<usize>) {
        let (apply, mass): (Box<dyn Fn(&[f64]) -> Vec<f64> + '_>, Option<&CsrMatrix>) = match self {
            Cleaner::Identity => return (z.to_owned(), Vec::new()),
            Cleaner::GramSchmidt(o) => (Box::new(|v: &[f64]| o.clean_vec(v)), Some(o.mass())),
            Cleaner::Projection(p, b) => (Box::new(|v: &[f64]| p.apply(v)), Some(b)),
        };
        let m = mass.expect("mass for cleanup");
        let mut kept = Vec::new();
        let mut dropped = Vec::new();
        for j in 0..z.ncols() {
            let v = column(z, j);
            let cleaned = apply(&v);
            if linalg::mass_norm(m, &cleaned) <= DROP_TOL * linalg::mass_norm(m, &v) {
                dropped.push(j);
            } else {
                kept.push(cleaned);
            }
        }
        (linalg::from_columns(z.nrows(), &kept), dropped)
    }
}
