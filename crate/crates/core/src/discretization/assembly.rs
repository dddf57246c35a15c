use crate::discretization::mapping::{det2, inverse_metric, MappingFamily};
use crate::discretization::mesh::ReferenceMesh;
use crate::discretization::quadrature::{TriangleRule, DEGREE_2, DEGREE_4};
use crate::error::{Error, Result};
use crate::sparse::{CsrMatrix, TripletBuilder};

/// Default finite-difference step in `t` for `A'(t)`, `B'(t)`.
pub const DEFAULT_FD_STEP: f64 = 1e-4;

/// High-fidelity matrices at one parameter value, boundary DoFs eliminated.
#[derive(Debug, Clone)]
pub struct AssembledSystem {
    pub t: f64,
    /// Curl-curl stiffness, `n_curl × n_curl`.
    pub a: CsrMatrix,
    /// Edge-element mass, `n_curl × n_curl`.
    pub b: CsrMatrix,
    /// Mixed matrix `C_ij = ∫ grad p_j · w_i`, `n_curl × n_grad`.
    pub c: CsrMatrix,
    /// Signed incidence (discrete gradient), `n_curl × n_grad`. Independent of `t`.
    pub g: CsrMatrix,
}

impl AssembledSystem {
    pub fn n_curl(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_grad(&self) -> usize {
        self.g.ncols()
    }
}

#[derive(Debug, Clone)]
pub struct MatrixDerivatives {
    pub a: CsrMatrix,
    pub b: CsrMatrix,
}

/// Degree-2 rule is exact for affine maps; curved maps get the degree-4 rule.
pub fn quadrature_for(family: &MappingFamily) -> TriangleRule {
    if family.is_affine() {
        DEGREE_2
    } else {
        DEGREE_4
    }
}

/// `G[e, v] = +1` if `v` is the head of edge `e`, `-1` if it is the tail.
pub fn discrete_gradient(mesh: &ReferenceMesh) -> CsrMatrix {
    let mut g = TripletBuilder::with_capacity(mesh.n_curl(), mesh.n_grad(), 2 * mesh.n_curl());
    for (dof, &e) in mesh.interior_edges().iter().enumerate() {
        let [lo, hi] = mesh.edges()[e];
        if let Some(j) = mesh.vertex_dof(hi) {
            g.push(dof, j, 1.0);
        }
        if let Some(j) = mesh.vertex_dof(lo) {
            g.push(dof, j, -1.0);
        }
    }
    g.build()
}

pub fn assemble(mesh: &ReferenceMesh, family: &MappingFamily, t: f64) -> Result<AssembledSystem> {
    let (a, b, c) = assemble_parts(mesh, family, t, true)?;
    Ok(AssembledSystem {
        t,
        a,
        b,
        c: c.expect("mixed matrix requested"),
        g: discrete_gradient(mesh),
    })
}

/// Only the pencil `(A(t), B(t))`.
pub fn assemble_pencil(
    mesh: &ReferenceMesh,
    family: &MappingFamily,
    t: f64,
) -> Result<(CsrMatrix, CsrMatrix)> {
    let (a, b, _) = assemble_parts(mesh, family, t, false)?;
    Ok((a, b))
}

fn cross(u: [f64; 2], v: [f64; 2]) -> f64 {
    u[0] * v[1] - u[1] * v[0]
}

fn metric_dot(m: &[[f64; 2]; 2], u: [f64; 2], v: [f64; 2]) -> f64 {
    u[0] * (m[0][0] * v[0] + m[0][1] * v[1]) + u[1] * (m[1][0] * v[0] + m[1][1] * v[1])
}

fn assemble_parts(
    mesh: &ReferenceMesh,
    family: &MappingFamily,
    t: f64,
    with_mixed: bool,
) -> Result<(CsrMatrix, CsrMatrix, Option<CsrMatrix>)> {
    let rule = quadrature_for(family);
    let (n_curl, n_grad) = (mesh.n_curl(), mesh.n_grad());
    let ntri = mesh.triangles().len();
    let mut a = TripletBuilder::with_capacity(n_curl, n_curl, 9 * ntri);
    let mut b = TripletBuilder::with_capacity(n_curl, n_curl, 9 * ntri);
    let mut c = TripletBuilder::with_capacity(n_curl, n_grad, if with_mixed { 9 * ntri } else { 0 });

    for (tri, tedges) in mesh.triangles().iter().zip(mesh.triangle_edges()) {
        let p = tri.map(|v| mesh.vertices()[v]);
        let area2 = cross([p[1][0] - p[0][0], p[1][1] - p[0][1]], [p[2][0] - p[0][0], p[2][1] - p[0][1]]);
        let area = 0.5 * area2;
        let grads: [[f64; 2]; 3] = std::array::from_fn(|k| {
            let (i, j) = ((k + 1) % 3, (k + 2) % 3);
            [(p[i][1] - p[j][1]) / area2, (p[j][0] - p[i][0]) / area2]
        });
        // local edge k runs from local vertex k to k+1
        let sign: [f64; 3] = std::array::from_fn(|k| if tri[k] < tri[(k + 1) % 3] { 1.0 } else { -1.0 });
        let dof: [Option<usize>; 3] = std::array::from_fn(|k| mesh.edge_dof(tedges[k]));
        let vdof: [Option<usize>; 3] = std::array::from_fn(|k| mesh.vertex_dof(tri[k]));
        let curl: [f64; 3] =
            std::array::from_fn(|k| sign[k] * 2.0 * cross(grads[k], grads[(k + 1) % 3]));

        let mut a_loc = [[0.0; 3]; 3];
        let mut b_loc = [[0.0; 3]; 3];
        let mut c_loc = [[0.0; 3]; 3];
        for (bary, w) in rule.points.iter().zip(rule.weights) {
            let x = [
                bary[0] * p[0][0] + bary[1] * p[1][0] + bary[2] * p[2][0],
                bary[0] * p[0][1] + bary[1] * p[1][1] + bary[2] * p[2][1],
            ];
            let jac = family.jacobian(t, x);
            let det = det2(&jac);
            if !(det > 0.0) {
                return Err(Error::Geometry { t, x: x[0], y: x[1], det });
            }
            let metric = inverse_metric(&jac);
            let whitney: [[f64; 2]; 3] = std::array::from_fn(|k| {
                let (i, j) = (k, (k + 1) % 3);
                [
                    sign[k] * (bary[i] * grads[j][0] - bary[j] * grads[i][0]),
                    sign[k] * (bary[i] * grads[j][1] - bary[j] * grads[i][1]),
                ]
            });
            let wq = w * area;
            for k in 0..3 {
                for l in 0..3 {
                    a_loc[k][l] += wq * curl[k] * curl[l] / det;
                    b_loc[k][l] += wq * metric_dot(&metric, whitney[k], whitney[l]) * det;
                    if with_mixed {
                        c_loc[k][l] += wq * metric_dot(&metric, whitney[k], grads[l]) * det;
                    }
                }
            }
        }

        for k in 0..3 {
            let Some(i) = dof[k] else { continue };
            for l in 0..3 {
                if let Some(j) = dof[l] {
                    a.push(i, j, a_loc[k][l]);
                    b.push(i, j, b_loc[k][l]);
                }
                if with_mixed {
                    if let Some(j) = vdof[l] {
                        c.push(i, j, c_loc[k][l]);
                    }
                }
            }
        }
    }
    Ok((a.build(), b.build(), with_mixed.then(|| c.build())))
}

/// Finite-difference `A'(t)`, `B'(t)`: central in the interior, second-order
/// one-sided where `t ± h` would leave `[0, 1]`.
pub fn matrix_derivatives(
    mesh: &ReferenceMesh,
    family: &MappingFamily,
    t: f64,
    h: f64,
) -> Result<MatrixDerivatives> {
    if !(h > 0.0) || h > 0.25 {
        return Err(Error::InvalidInput(format!(
            "finite-difference step must lie in (0, 0.25], got {h}"
        )));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidInput(format!("parameter {t} outside [0, 1]")));
    }
    let at = |s: f64| assemble_pencil(mesh, family, s);
    let combine = |terms: &[(f64, f64)]| -> Result<MatrixDerivatives> {
        let mut acc: Option<(CsrMatrix, CsrMatrix)> = None;
        for &(s, coeff) in terms {
            let (a, b) = at(s)?;
            acc = Some(match acc {
                None => (a.scaled(coeff), b.scaled(coeff)),
                Some((sa, sb)) => (sa.lincomb(1.0, &a, coeff)?, sb.lincomb(1.0, &b, coeff)?),
            });
        }
        let (a, b) = acc.expect("non-empty stencil");
        Ok(MatrixDerivatives { a, b })
    };
    let inv = 1.0 / (2.0 * h);
    if t - h >= 0.0 && t + h <= 1.0 {
        combine(&[(t + h, inv), (t - h, -inv)])
    } else if t - h < 0.0 {
        combine(&[(t, -3.0 * inv), (t + h, 4.0 * inv), (t + 2.0 * h, -inv)])
    } else {
        combine(&[(t, 3.0 * inv), (t - h, -4.0 * inv), (t - 2.0 * h, inv)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::mapping::DEFAULT_BUMP_AMPLITUDE;

    fn unit() -> ReferenceMesh {
        ReferenceMesh::new(1).unwrap()
    }

    #[test]
    fn single_cell_identity_entries() {
        let sys = assemble(&unit(), &MappingFamily::identity(), 0.0).unwrap();
        assert!((sys.a.get(0, 0) - 4.0).abs() < 1e-14);
        // ∫|w|² over both halves: 1/6 + 1/6 by hand integration
        assert!((sys.b.get(0, 0) - 1.0 / 3.0).abs() < 1e-14);
        assert_eq!(sys.g.ncols(), 0);
        assert_eq!(sys.c.ncols(), 0);
    }

    #[test]
    fn single_cell_affine_entries_follow_stretch() {
        // A₁₁ = 4/a, B₁₁ = (1/a + a)/6 on the stretched cell
        let fam = MappingFamily::affine_stretch(2.5).unwrap();
        for &t in &[0.0, 0.3, 1.0] {
            let a = fam.stretch(t);
            let sys = assemble(&unit(), &fam, t).unwrap();
            assert!((sys.a.get(0, 0) - 4.0 / a).abs() < 1e-13);
            assert!((sys.b.get(0, 0) - (1.0 / a + a) / 6.0).abs() < 1e-13);
        }
    }

    #[test]
    fn curl_of_gradient_vanishes_and_mixed_identity_holds() {
        let mesh = ReferenceMesh::new(4).unwrap();
        for fam in [
            MappingFamily::affine_stretch(2.0).unwrap(),
            MappingFamily::sine_bump(DEFAULT_BUMP_AMPLITUDE).unwrap(),
        ] {
            for &t in &[0.0, 0.37, 1.0] {
                let sys = assemble(&mesh, &fam, t).unwrap();
                let ag = sys.a.matmul(&sys.g);
                assert!(ag.max_abs() <= 1e-12 * sys.a.max_abs());
                let bg = sys.b.matmul(&sys.g);
                let diff = (0..sys.n_curl())
                    .flat_map(|i| (0..sys.n_grad()).map(move |j| (i, j)))
                    .map(|(i, j)| (sys.c.get(i, j) - bg.get(i, j)).abs())
                    .fold(0.0, f64::max);
                assert!(diff <= 1e-12 * sys.b.max_abs(), "C vs BG: {diff}");
                assert!(sys.a.asymmetry() < 1e-13 && sys.b.asymmetry() < 1e-13);
            }
        }
    }

    #[test]
    fn gradient_matrix_does_not_depend_on_t() {
        let mesh = ReferenceMesh::new(3).unwrap();
        let fam = MappingFamily::sine_bump(0.3).unwrap();
        let g0 = assemble(&mesh, &fam, 0.0).unwrap().g;
        let g1 = assemble(&mesh, &fam, 1.0).unwrap().g;
        assert_eq!(g0, g1);
        assert!(g0.values().iter().all(|v| v.abs() == 1.0));
    }

    #[test]
    fn folded_mapping_reports_geometry_error() {
        // |β| > 1 folds the domain; bypass the constructor check on purpose
        let fam = MappingFamily::SineBump { amplitude: -1.5 };
        let err = assemble(&ReferenceMesh::new(2).unwrap(), &fam, 1.0).unwrap_err();
        assert!(matches!(err, Error::Geometry { t, .. } if t == 1.0));
    }

    #[test]
    fn identity_family_has_zero_derivatives() {
        let d = matrix_derivatives(&ReferenceMesh::new(3).unwrap(), &MappingFamily::identity(), 0.5, 1e-4)
            .unwrap();
        assert_eq!(d.a.max_abs(), 0.0);
        assert_eq!(d.b.max_abs(), 0.0);
    }

    #[test]
    fn derivative_step_validated() {
        let mesh = unit();
        assert!(matrix_derivatives(&mesh, &MappingFamily::identity(), 0.5, 0.0).is_err());
        assert!(matrix_derivatives(&mesh, &MappingFamily::identity(), 0.5, -1.0).is_err());
    }

    // d/dt of the hand-assembled single-cell entries
    fn analytic_derivatives(t: f64) -> (f64, f64) {
        let a = 1.0 + 1.5 * t;
        (-4.0 * 1.5 / (a * a), 1.5 * (1.0 - 1.0 / (a * a)) / 6.0)
    }

    #[test]
    fn central_differences_converge_quadratically() {
        let mesh = unit();
        let fam = MappingFamily::affine_stretch(2.5).unwrap();
        let t = 0.4;
        let (da, db) = analytic_derivatives(t);
        let err = |h: f64| {
            let d = matrix_derivatives(&mesh, &fam, t, h).unwrap();
            ((d.a.get(0, 0) - da).abs(), (d.b.get(0, 0) - db).abs())
        };
        let (ea1, eb1) = err(0.02);
        let (ea2, eb2) = err(0.01);
        assert!(ea1 < 1e-3 && eb1 < 1e-3);
        assert!((ea1 / ea2 - 4.0).abs() < 0.2, "A ratio {}", ea1 / ea2);
        assert!((eb1 / eb2 - 4.0).abs() < 0.2, "B ratio {}", eb1 / eb2);
        let d = matrix_derivatives(&mesh, &fam, t, DEFAULT_FD_STEP).unwrap();
        assert!((d.a.get(0, 0) - da).abs() < 1e-7);
    }

    #[test]
    fn one_sided_differences_at_endpoints() {
        let mesh = unit();
        let fam = MappingFamily::affine_stretch(2.5).unwrap();
        for &t in &[0.0, 1.0] {
            let (da, db) = analytic_derivatives(t);
            let err = |h: f64| {
                let d = matrix_derivatives(&mesh, &fam, t, h).unwrap();
                ((d.a.get(0, 0) - da).abs(), (d.b.get(0, 0) - db).abs())
            };
            let (ea1, eb1) = err(2e-3);
            let (ea2, eb2) = err(1e-3);
            assert!(ea2 < 1e-4 && eb2 < 1e-4, "t={t}");
            assert!((ea1 / ea2 - 4.0).abs() < 0.3, "t={t} A ratio {}", ea1 / ea2);
            assert!((eb1 / eb2 - 4.0).abs() < 0.3, "t={t} B ratio {}", eb1 / eb2);
        }
    }
}
