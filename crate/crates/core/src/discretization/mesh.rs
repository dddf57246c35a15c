use std::collections::BTreeMap;
use std::io::Write;

use crate::error::{Error, Result};

/// Structured triangulation of the unit square.
///
/// Cell `(i, j)` is split along the diagonal from `(i, j)` to `(i + 1, j + 1)`.
/// Edges are oriented from the lower to the higher vertex index and numbered
/// in lexicographic order of their vertex pairs, so the discrete gradient is a
/// pure ±1 incidence matrix.
#[derive(Debug, Clone)]
pub struct ReferenceMesh {
    subdivisions: usize,
    vertices: Vec<[f64; 2]>,
    edges: Vec<[usize; 2]>,
    triangles: Vec<[usize; 3]>,
    /// Global edge index of local edges `(v0,v1)`, `(v1,v2)`, `(v2,v0)`.
    triangle_edges: Vec<[usize; 3]>,
    boundary_vertex: Vec<bool>,
    boundary_edge: Vec<bool>,
    edge_dof: Vec<Option<usize>>,
    vertex_dof: Vec<Option<usize>>,
    interior_edges: Vec<usize>,
    interior_vertices: Vec<usize>,
}

impl ReferenceMesh {
    pub fn new(subdivisions: usize) -> Result<Self> {
        let n = subdivisions;
        if n == 0 {
            return Err(Error::InvalidInput("mesh needs at least one subdivision".into()));
        }
        let vid = |i: usize, j: usize| j * (n + 1) + i;
        let h = 1.0 / n as f64;
        let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
        let mut boundary_vertex = Vec::with_capacity((n + 1) * (n + 1));
        for j in 0..=n {
            for i in 0..=n {
                vertices.push([i as f64 * h, j as f64 * h]);
                boundary_vertex.push(i == 0 || j == 0 || i == n || j == n);
            }
        }

        let mut triangles = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let (v00, v10, v11, v01) = (vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1));
                triangles.push([v00, v10, v11]);
                triangles.push([v00, v11, v01]);
            }
        }

        let mut edge_triangles: BTreeMap<[usize; 2], usize> = BTreeMap::new();
        for tri in &triangles {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                *edge_triangles.entry([a.min(b), a.max(b)]).or_insert(0) += 1;
            }
        }
        let edges: Vec<[usize; 2]> = edge_triangles.keys().copied().collect();
        let boundary_edge: Vec<bool> = edge_triangles.values().map(|&c| c == 1).collect();
        let index: BTreeMap<[usize; 2], usize> =
            edges.iter().enumerate().map(|(e, &k)| (k, e)).collect();
        let triangle_edges = triangles
            .iter()
            .map(|tri| {
                let mut out = [0; 3];
                for (k, slot) in out.iter_mut().enumerate() {
                    let (a, b) = (tri[k], tri[(k + 1) % 3]);
                    *slot = index[&[a.min(b), a.max(b)]];
                }
                out
            })
            .collect();

        let mut edge_dof = vec![None; edges.len()];
        let mut interior_edges = Vec::new();
        for (e, &bnd) in boundary_edge.iter().enumerate() {
            if !bnd {
                edge_dof[e] = Some(interior_edges.len());
                interior_edges.push(e);
            }
        }
        let mut vertex_dof = vec![None; vertices.len()];
        let mut interior_vertices = Vec::new();
        for (v, &bnd) in boundary_vertex.iter().enumerate() {
            if !bnd {
                vertex_dof[v] = Some(interior_vertices.len());
                interior_vertices.push(v);
            }
        }

        Ok(Self {
            subdivisions: n,
            vertices,
            edges,
            triangles,
            triangle_edges,
            boundary_vertex,
            boundary_edge,
            edge_dof,
            vertex_dof,
            interior_edges,
            interior_vertices,
        })
    }

    pub fn subdivisions(&self) -> usize {
        self.subdivisions
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn triangle_edges(&self) -> &[[usize; 3]] {
        &self.triangle_edges
    }

    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        self.boundary_vertex[v]
    }

    pub fn is_boundary_edge(&self, e: usize) -> bool {
        self.boundary_edge[e]
    }

    /// Curl-space degree of freedom of an edge, `None` on the boundary.
    pub fn edge_dof(&self, e: usize) -> Option<usize> {
        self.edge_dof[e]
    }

    /// Grad-space degree of freedom of a vertex, `None` on the boundary.
    pub fn vertex_dof(&self, v: usize) -> Option<usize> {
        self.vertex_dof[v]
    }

    /// Global edge index of each curl degree of freedom.
    pub fn interior_edges(&self) -> &[usize] {
        &self.interior_edges
    }

    pub fn interior_vertices(&self) -> &[usize] {
        &self.interior_vertices
    }

    pub fn n_curl(&self) -> usize {
        self.interior_edges.len()
    }

    pub fn n_grad(&self) -> usize {
        self.interior_vertices.len()
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edges.len() as i64 + self.triangles.len() as i64
    }

    /// Plain-text dump: vertex coordinates, oriented edges with their DoF index
    /// (-1 on the boundary) and triangles, 17 significant digits.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "vertices {}", self.vertices.len())?;
        for p in &self.vertices {
            writeln!(w, "{:.16e} {:.16e}", p[0], p[1])?;
        }
        writeln!(w, "edges {}", self.edges.len())?;
        for (e, [a, b]) in self.edges.iter().enumerate() {
            let dof = self.edge_dof[e].map(|d| d as i64).unwrap_or(-1);
            writeln!(w, "{a} {b} {dof}")?;
        }
        writeln!(w, "triangles {}", self.triangles.len())?;
        for [a, b, c] in &self.triangles {
            writeln!(w, "{a} {b} {c}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_subdivisions_rejected() {
        assert!(ReferenceMesh::new(0).is_err());
    }

    #[test]
    fn single_cell_counts() {
        let m = ReferenceMesh::new(1).unwrap();
        assert_eq!(m.vertices().len(), 4);
        assert_eq!(m.edges().len(), 5);
        assert_eq!(m.triangles().len(), 2);
        assert_eq!(m.n_curl(), 1);
        assert_eq!(m.n_grad(), 0);
        // the diagonal is the only interior edge
        assert_eq!(m.edges()[m.interior_edges()[0]], [0, 3]);
    }

    #[test]
    fn two_by_two_counts() {
        let m = ReferenceMesh::new(2).unwrap();
        assert_eq!(m.vertices().len(), 9);
        assert_eq!(m.edges().len(), 16);
        assert_eq!(m.triangles().len(), 8);
        assert_eq!(m.n_curl(), 8);
        assert_eq!(m.n_grad(), 1);
        assert_eq!(m.interior_vertices(), &[4]);
    }

    #[test]
    fn euler_relation_and_edge_multiplicity() {
        for n in 1..=7 {
            let m = ReferenceMesh::new(n).unwrap();
            assert_eq!(m.euler_characteristic(), 1);
            assert_eq!(m.n_curl(), 3 * n * n - 2 * n);
            assert_eq!(m.n_grad(), (n - 1) * (n - 1));
            let mut count = vec![0; m.edges().len()];
            for te in m.triangle_edges() {
                for &e in te {
                    count[e] += 1;
                }
            }
            for (e, &c) in count.iter().enumerate() {
                assert_eq!(c, if m.is_boundary_edge(e) { 1 } else { 2 });
            }
        }
    }

    #[test]
    fn triangles_are_counterclockwise_and_edges_low_to_high() {
        let m = ReferenceMesh::new(3).unwrap();
        for [a, b, c] in m.triangles() {
            let (p, q, r) = (m.vertices()[*a], m.vertices()[*b], m.vertices()[*c]);
            let area2 = (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]);
            assert!(area2 > 0.0);
        }
        assert!(m.edges().iter().all(|[a, b]| a < b));
    }
}
