//! Closed-form rectangle eigenpairs used for mode labels and crossing checks.
//!
//! On `[0, a] × [0, 1]` with perfectly conducting walls the nonzero eigenvalues
//! are `π² (m²/a² + n²)`, `(m, n) ≠ (0, 0)`, with fields `E = (ψ_y, −ψ_x)`,
//! `ψ = cos(mπx/a) cos(nπy)`.

use std::f64::consts::PI;
use std::fmt;

use serde::Serialize;

use crate::assignment::min_cost_assignment;
use crate::discretization::ReferenceMesh;
use crate::error::{Error, Result};
use crate::linalg::{self, MassOperator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct ModeIndex {
    pub m: usize,
    pub n: usize,
}

impl ModeIndex {
    pub fn new(m: usize, n: usize) -> Self {
        Self { m, n }
    }

    pub fn lambda(&self, a: f64) -> f64 {
        PI * PI * ((self.m * self.m) as f64 / (a * a) + (self.n * self.n) as f64)
    }
}

impl fmt::Display for ModeIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.m, self.n)
    }
}

/// The `count` smallest rectangle eigenvalues with their indices, ordered by
/// eigenvalue then `(m, n)`.
pub fn rectangle_spectrum(a: f64, count: usize) -> Vec<(ModeIndex, f64)> {
    let reach = count + 1;
    let mut all: Vec<(ModeIndex, f64)> = (0..=reach)
        .flat_map(|m| (0..=reach).map(move |n| ModeIndex::new(m, n)))
        .filter(|mode| mode.m + mode.n > 0)
        .map(|mode| (mode, mode.lambda(a)))
        .collect();
    all.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)));
    all.truncate(count);
    all
}

const GAUSS_5: [(f64, f64); 5] = [
    (0.046_910_077_030_668, 0.118_463_442_528_095),
    (0.230_765_344_947_158, 0.239_314_335_249_683),
    (0.5, 0.284_444_444_444_444),
    (0.769_234_655_052_842, 0.239_314_335_249_683),
    (0.953_089_922_969_332, 0.118_463_442_528_095),
];

/// Edge degrees of freedom of the pulled-back analytic field on the reference
/// mesh for the stretch `x = a x̂`: line integrals of `(a E_x, E_y)`.
pub fn interpolate_mode(mesh: &ReferenceMesh, mode: ModeIndex, a: f64) -> Vec<f64> {
    let (m, n) = (mode.m as f64, mode.n as f64);
    let field = |p: [f64; 2]| {
        let x = a * p[0];
        let y = p[1];
        let ex = -n * PI * (m * PI * x / a).cos() * (n * PI * y).sin();
        let ey = (m * PI / a) * (m * PI * x / a).sin() * (n * PI * y).cos();
        [a * ex, ey]
    };
    let mut dofs = vec![0.0; mesh.n_curl()];
    for &e in mesh.interior_edges() {
        let [lo, hi] = mesh.edges()[e];
        let p0 = mesh.vertices()[lo];
        let p1 = mesh.vertices()[hi];
        let d = [p1[0] - p0[0], p1[1] - p0[1]];
        let val: f64 = GAUSS_5
            .iter()
            .map(|&(s, w)| {
                let f = field([p0[0] + s * d[0], p0[1] + s * d[1]]);
                w * (f[0] * d[0] + f[1] * d[1])
            })
            .sum();
        if let Some(k) = mesh.edge_dof(e) {
            dofs[k] = val;
        }
    }
    dofs
}

/// Mass-weighted correlation `|uᵀ B v| / (‖u‖_B ‖v‖_B)`.
pub fn correlation<M: MassOperator + ?Sized>(b: &M, u: &[f64], v: &[f64]) -> f64 {
    let nu = linalg::mass_norm(b, u);
    let nv = linalg::mass_norm(b, v);
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    (linalg::mass_inner(b, u, v) / (nu * nv)).abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Classification {
    pub mode: ModeIndex,
    pub analytic: f64,
    pub relative_mismatch: f64,
    pub correlation: f64,
}

/// Maximum relative eigenvalue mismatch accepted by [`classify`].
pub const CLASSIFY_TOL: f64 = 0.05;

/// Labels computed eigenpairs on the stretched rectangle by a one-to-one
/// assignment minimizing relative eigenvalue mismatch; analytically degenerate
/// candidates are separated by field correlation. Pairs further than
/// [`CLASSIFY_TOL`] from every free candidate are left unlabeled.
pub fn classify<M: MassOperator + ?Sized>(
    mesh: &ReferenceMesh,
    a: f64,
    lambdas: &[f64],
    vectors: &[Vec<f64>],
    b: &M,
) -> Result<Vec<Option<Classification>>> {
    if lambdas.len() != vectors.len() {
        return Err(Error::DimensionMismatch { context: "classify", expected: lambdas.len(), got: vectors.len() });
    }
    let rows = lambdas.len();
    let table = rectangle_spectrum(a, 2 * rows + 4);
    let cols = table.len();
    let fields: Vec<Vec<f64>> = table.iter().map(|(mode, _)| interpolate_mode(mesh, *mode, a)).collect();
    let mut mismatch = vec![0.0; rows * cols];
    let mut corr = vec![0.0; rows * cols];
    let mut cost = vec![0.0; rows * cols];
    for i in 0..rows {
        for (j, (_, mu)) in table.iter().enumerate() {
            let rel = ((lambdas[i] - mu) / mu).abs();
            let rho = correlation(b, &vectors[i], &fields[j]);
            mismatch[i * cols + j] = rel;
            corr[i * cols + j] = rho;
            cost[i * cols + j] = if rel > CLASSIFY_TOL { 1e3 } else { rel } + 1e-3 * (1.0 - rho);
        }
    }
    let assignment = min_cost_assignment(&cost, rows, cols)?;
    Ok(assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| {
            let rel = mismatch[i * cols + j];
            (rel <= CLASSIFY_TOL).then(|| Classification {
                mode: table[j].0,
                analytic: table[j].1,
                relative_mismatch: rel,
                correlation: corr[i * cols + j],
            })
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnalyticCrossing {
    pub t: f64,
    pub first: ModeIndex,
    pub second: ModeIndex,
}

/// Parameters in `(0, 1]` where two of the given modes exchange order under
/// the stretch `a(t) = 1 + (a_end − 1) t`, sorted by `t`.
pub fn analytic_crossings(modes: &[ModeIndex], a_end: f64) -> Vec<AnalyticCrossing> {
    let mut out = Vec::new();
    for (p, u) in modes.iter().enumerate() {
        for v in &modes[p + 1..] {
            let dm = (u.m * u.m) as f64 - (v.m * v.m) as f64;
            let dn = (v.n * v.n) as f64 - (u.n * u.n) as f64;
            if dm == 0.0 || dn == 0.0 || dm / dn <= 0.0 {
                continue;
            }
            let a = (dm / dn).sqrt();
            let t = (a - 1.0) / (a_end - 1.0);
            if t > 0.0 && t <= 1.0 {
                let (first, second) = if u < v { (*u, *v) } else { (*v, *u) };
                out.push(AnalyticCrossing { t, first, second });
            }
        }
    }
    out.sort_by(|x, y| x.t.total_cmp(&y.t));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_spectrum_multiplicities() {
        let s = rectangle_spectrum(1.0, 5);
        let labels: Vec<String> = s.iter().map(|(m, _)| m.to_string()).collect();
        assert_eq!(labels, ["(0,1)", "(1,0)", "(1,1)", "(0,2)", "(2,0)"]);
        assert!((s[0].1 - PI * PI).abs() < 1e-12);
        assert!((s[2].1 - 2.0 * PI * PI).abs() < 1e-12);
    }

    #[test]
    fn stretched_spectrum() {
        let s = rectangle_spectrum(2.5, 4);
        assert_eq!(s[0].0, ModeIndex::new(1, 0));
        assert!((s[0].1 - PI * PI / 6.25).abs() < 1e-12);
    }

    #[test]
    fn crossings_of_square_modes() {
        let modes = [ModeIndex::new(1, 0), ModeIndex::new(0, 1), ModeIndex::new(1, 1), ModeIndex::new(2, 0), ModeIndex::new(0, 2)];
        let c = analytic_crossings(&modes, 2.5);
        assert_eq!(c.len(), 2);
        assert!((c[0].t - (3f64.sqrt() - 1.0) / 1.5).abs() < 1e-12);
        assert_eq!((c[0].first, c[0].second), (ModeIndex::new(1, 1), ModeIndex::new(2, 0)));
        assert!((c[1].t - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!((c[1].first, c[1].second), (ModeIndex::new(0, 1), ModeIndex::new(2, 0)));
    }

    #[test]
    fn interpolated_field_is_discrete_eigenvector() {
        use crate::discretization::{assemble, MappingFamily};
        let mesh = ReferenceMesh::new(24).unwrap();
        let fam = MappingFamily::affine_stretch(2.5).unwrap();
        let sys = assemble(&mesh, &fam, 0.4).unwrap();
        let a = fam.stretch(0.4);
        let mode = ModeIndex::new(1, 1);
        let v = interpolate_mode(&mesh, mode, a);
        let rq = linalg::mass_inner(&sys.a, &v, &v) / linalg::mass_inner(&sys.b, &v, &v);
        assert!(((rq - mode.lambda(a)) / mode.lambda(a)).abs() < 0.02, "rayleigh quotient {rq}");
    }
}
