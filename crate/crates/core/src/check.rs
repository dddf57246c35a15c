//! Structural checks of the assembled system at given parameters.

use serde::Serialize;

use crate::error::Result;
use crate::problem::Problem;

pub const STRUCTURE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StructureCheck {
    pub t: f64,
    pub n_curl: usize,
    pub n_grad: usize,
    pub n_cotree: usize,
    /// `max|A G| / max|A|`.
    pub stiffness_on_gradients: f64,
    /// `max|C − B G| / max|C|`.
    pub gradient_identity: f64,
    /// Eigenvalues of `(A, B)` at or below the null threshold.
    pub null_dim: usize,
    pub symmetry: f64,
}

impl StructureCheck {
    pub fn passes(&self) -> bool {
        self.stiffness_on_gradients <= STRUCTURE_TOL
            && self.gradient_identity <= STRUCTURE_TOL
            && self.symmetry <= STRUCTURE_TOL
            && self.null_dim == self.n_grad
            && self.n_cotree == self.n_curl - self.n_grad
    }
}

pub fn structure_check(problem: &Problem, t: f64) -> Result<StructureCheck> {
    let s = problem.system(t)?;
    let ag = s.a.matmul(&problem.g);
    let bg = s.b.matmul(&problem.g);
    let diff = s.c.lincomb(1.0, &bg, -1.0)?;
    let sol = problem.solve_full(t, 0)?;
    Ok(StructureCheck {
        t,
        n_curl: problem.n_curl(),
        n_grad: problem.mesh.n_grad(),
        n_cotree: problem.n_cotree(),
        stiffness_on_gradients: ag.max_abs() / s.a.max_abs(),
        gradient_identity: diff.max_abs() / s.c.max_abs(),
        null_dim: sol.n_discarded_null,
        symmetry: (s.a.asymmetry() / s.a.max_abs()).max(s.b.asymmetry() / s.b.max_abs()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::{MappingFamily, ReferenceMesh};

    #[test]
    fn small_mesh_passes() {
        let p = Problem::new(ReferenceMesh::new(4).unwrap(), MappingFamily::sine_bump(0.3).unwrap(), 1e-8, 1e-4).unwrap();
        let c = structure_check(&p, 0.7).unwrap();
        assert!(c.passes(), "{c:?}");
    }
}
