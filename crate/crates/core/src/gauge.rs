//! Removal of gradient (spurious) content: Gram-Schmidt against the gradient
//! space, the grad-div projector, and tree-cotree condensation.

use std::collections::VecDeque;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use faer::linalg::solvers::Solve;
use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::discretization::ReferenceMesh;
use crate::error::{Error, Result};
use crate::linalg::{self, column, norm2, MassGramSchmidt, SparseCholesky};
use crate::sparse::CsrMatrix;

/// Cleaned columns whose norm falls below this fraction of the input are dropped.
pub const DROP_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GaugeStrategy {
    None,
    GramSchmidt,
    Projection,
    TreeCotree,
}

impl FromStr for GaugeStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "gram-schmidt" => Ok(Self::GramSchmidt),
            "projection" => Ok(Self::Projection),
            "tree-cotree" => Ok(Self::TreeCotree),
            other => Err(Error::Config(format!(
                "unknown gauge `{other}` (expected none, gram-schmidt, projection or tree-cotree)"
            ))),
        }
    }
}

impl fmt::Display for GaugeStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::GramSchmidt => "gram-schmidt",
            Self::Projection => "projection",
            Self::TreeCotree => "tree-cotree",
        })
    }
}

/// Partition of the curl DoFs into spanning-tree and cotree edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeCotree {
    tree: Vec<usize>,
    cotree: Vec<usize>,
    /// Tree edge (curl DoF) through which each interior vertex was reached.
    parent_edge: Vec<usize>,
    /// Position of each curl DoF inside `cotree`.
    cotree_slot: Vec<Option<usize>>,
}

/// Breadth-first spanning tree over the interior vertices plus one node for the
/// whole boundary, visiting neighbors in increasing index order.
pub fn build_tree_cotree(mesh: &ReferenceMesh) -> Result<TreeCotree> {
    let (n_curl, n_grad) = (mesh.n_curl(), mesh.n_grad());
    let root = n_grad;
    let node = |v: usize| mesh.vertex_dof(v).unwrap_or(root);
    let mut adjacency: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_grad + 1];
    for (dof, &e) in mesh.interior_edges().iter().enumerate() {
        let [lo, hi] = mesh.edges()[e];
        let (a, b) = (node(lo), node(hi));
        if a == b {
            // both ends on the boundary: a loop at the root
            continue;
        }
        adjacency[a].push((b, dof));
        adjacency[b].push((a, dof));
    }
    for list in &mut adjacency {
        list.sort_unstable();
    }

    let mut visited = vec![false; n_grad + 1];
    let mut parent_edge = vec![usize::MAX; n_grad];
    let mut is_tree = vec![false; n_curl];
    let mut queue = VecDeque::from([root]);
    visited[root] = true;
    while let Some(u) = queue.pop_front() {
        for &(w, dof) in &adjacency[u] {
            if !visited[w] {
                visited[w] = true;
                parent_edge[w] = dof;
                is_tree[dof] = true;
                queue.push_back(w);
            }
        }
    }
    if let Some(v) = visited.iter().position(|&seen| !seen) {
        return Err(Error::InvalidInput(format!(
            "interior vertex {v} is not connected to the boundary"
        )));
    }

    let tree: Vec<usize> = (0..n_curl).filter(|&d| is_tree[d]).collect();
    let cotree: Vec<usize> = (0..n_curl).filter(|&d| !is_tree[d]).collect();
    let mut cotree_slot = vec![None; n_curl];
    for (k, &d) in cotree.iter().enumerate() {
        cotree_slot[d] = Some(k);
    }
    Ok(TreeCotree { tree, cotree, parent_edge, cotree_slot })
}

impl TreeCotree {
    pub fn tree(&self) -> &[usize] {
        &self.tree
    }

    pub fn cotree(&self) -> &[usize] {
        &self.cotree
    }

    pub fn parent_edges(&self) -> &[usize] {
        &self.parent_edge
    }

    pub fn n_curl(&self) -> usize {
        self.cotree_slot.len()
    }

    /// Column order `[C, T]` of the block form `H = [A_CC, A_CT]`.
    pub fn block_order(&self) -> Vec<usize> {
        self.cotree.iter().chain(&self.tree).copied().collect()
    }

    /// Scatters cotree coordinates into a full-length vector (zero on the tree).
    pub fn inject(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_curl()];
        for (k, &d) in self.cotree.iter().enumerate() {
            out[d] = y[k];
        }
        out
    }

    pub fn inject_mat(&self, y: MatRef<'_, f64>) -> Mat<f64> {
        let mut out = Mat::zeros(self.n_curl(), y.ncols());
        for j in 0..y.ncols() {
            for (k, &d) in self.cotree.iter().enumerate() {
                out[(d, j)] = y[(k, j)];
            }
        }
        out
    }

    pub fn restrict(&self, v: &[f64]) -> Vec<f64> {
        self.cotree.iter().map(|&d| v[d]).collect()
    }

    pub fn cotree_slot(&self, dof: usize) -> Option<usize> {
        self.cotree_slot[dof]
    }

    /// Two index lists, one per line, prefixed by their labels.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        for (label, set) in [("tree", &self.tree), ("cotree", &self.cotree)] {
            write!(w, "{label} {}", set.len())?;
            for d in set {
                write!(w, " {d}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// `Hᵀ = A[:, C]` (A is symmetric), applied to cotree coordinates.
fn h_transpose_apply(a: &CsrMatrix, tc: &TreeCotree, y: MatRef<'_, f64>) -> Mat<f64> {
    a.mul_dense(tc.inject_mat(y).as_ref())
}

/// Condensed pencil on the cotree DoFs at one parameter value.
#[derive(Debug, Clone)]
pub struct CotreeSystem {
    pub a_hat: Mat<f64>,
    pub b_hat: Mat<f64>,
    /// Cotree rows of `A`, `|C| × n_curl`, columns in global DoF order.
    pub h: CsrMatrix,
    /// `B⁻¹ Hᵀ`, the change of variables.
    pub w: Mat<f64>,
}

impl CotreeSystem {
    pub fn dim(&self) -> usize {
        self.a_hat.nrows()
    }

    /// `v = B⁻¹ Hᵀ y`.
    pub fn expand(&self, y: &[f64]) -> Vec<f64> {
        linalg::dense_mul_vec(self.w.as_ref(), y)
    }

    pub fn expand_mat(&self, y: MatRef<'_, f64>) -> Mat<f64> {
        &self.w * y
    }
}

/// `Â = (H B⁻¹) A (H B⁻¹)ᵀ`, `B̂ = (H B⁻¹) B (H B⁻¹)ᵀ = H B⁻¹ Hᵀ`.
pub fn tree_cotree_condense(a: &CsrMatrix, b: &CsrMatrix, tc: &TreeCotree) -> Result<CotreeSystem> {
    check_dim(a, tc)?;
    let chol = SparseCholesky::new(b)?;
    let h = a.select_rows(tc.cotree());
    let eye = Mat::<f64>::identity(tc.cotree().len(), tc.cotree().len());
    let w = chol.solve_mat(h_transpose_apply(a, tc, eye.as_ref()).as_ref());
    let aw = a.mul_dense(w.as_ref());
    let mut a_hat = w.transpose() * &aw;
    linalg::symmetrize(&mut a_hat);
    let mut b_hat = Mat::from_fn(tc.cotree().len(), tc.cotree().len(), |i, j| aw[(tc.cotree()[i], j)]);
    linalg::symmetrize(&mut b_hat);
    Ok(CotreeSystem { a_hat, b_hat, h, w })
}

/// `v = B⁻¹ Hᵀ y` without forming the condensed pencil.
pub fn tree_cotree_expand(y: &[f64], b: &CsrMatrix, h: &CsrMatrix) -> Result<Vec<f64>> {
    if y.len() != h.nrows() {
        return Err(Error::DimensionMismatch { context: "cotree coordinates", expected: h.nrows(), got: y.len() });
    }
    Ok(SparseCholesky::new(b)?.solve_vec(&h.tr_mul_vec(y)))
}

/// `X = B⁻¹ Hᵀ Y` for a block of cotree coordinate vectors, with `H` taken from `A`.
pub fn tree_cotree_expand_mat(
    y: MatRef<'_, f64>,
    a: &CsrMatrix,
    chol_b: &SparseCholesky,
    tc: &TreeCotree,
) -> Result<Mat<f64>> {
    check_dim(a, tc)?;
    if y.nrows() != tc.cotree().len() {
        return Err(Error::DimensionMismatch {
            context: "cotree coordinates",
            expected: tc.cotree().len(),
            got: y.nrows(),
        });
    }
    Ok(chol_b.solve_mat(h_transpose_apply(a, tc, y).as_ref()))
}

fn check_dim(a: &CsrMatrix, tc: &TreeCotree) -> Result<()> {
    if a.nrows() != tc.n_curl() {
        return Err(Error::DimensionMismatch { context: "tree-cotree partition", expected: tc.n_curl(), got: a.nrows() });
    }
    Ok(())
}

/// Orthogonalization against the gradient space in the fixed `B(t₀)` inner product.
///
/// The columns of `G` are first made `B(t₀)`-orthonormal, so that a sequential
/// sweep is an exact projection.
#[derive(Debug, Clone)]
pub struct GradientOrthogonalizer {
    gradients: MassGramSchmidt,
    b0: CsrMatrix,
}

impl GradientOrthogonalizer {
    pub fn new(g: &CsrMatrix, b0: &CsrMatrix) -> Result<Self> {
        if g.nrows() != b0.nrows() {
            return Err(Error::DimensionMismatch { context: "gradient matrix", expected: b0.nrows(), got: g.nrows() });
        }
        let mut gradients = MassGramSchmidt::new();
        let gt = g.transpose();
        for j in 0..g.ncols() {
            let mut col = vec![0.0; g.nrows()];
            for (i, v) in gt.row(j) {
                col[i] = v;
            }
            if !gradients.push(b0, &col, DROP_TOL) {
                return Err(Error::Factorization(format!("gradient column {j} is linearly dependent")));
            }
        }
        Ok(Self { gradients, b0: b0.clone() })
    }

    pub fn mass(&self) -> &CsrMatrix {
        &self.b0
    }

    /// Removes the gradient component of `z`, without normalization.
    pub fn clean_vec(&self, z: &[f64]) -> Vec<f64> {
        self.gradients.orthogonalize(z)
    }

    /// Cleans every column, drops collapsed ones, and `B(t₀)`-orthonormalizes the rest.
    /// Returns the cleaned basis and the indices of dropped input columns.
    pub fn clean(&self, z: MatRef<'_, f64>) -> (Mat<f64>, Vec<usize>) {
        let mut out = MassGramSchmidt::new();
        let mut dropped = Vec::new();
        for j in 0..z.ncols() {
            let zj = column(z, j);
            let before = linalg::mass_norm(&self.b0, &zj);
            let cleaned = self.clean_vec(&zj);
            let collapsed = linalg::mass_norm(&self.b0, &cleaned) <= DROP_TOL * before;
            if collapsed || !out.push(&self.b0, &cleaned, DROP_TOL) {
                dropped.push(j);
            }
        }
        (out.to_mat(z.nrows()), dropped)
    }
}

pub fn gram_schmidt_clean(z: MatRef<'_, f64>, g: &CsrMatrix, b0: &CsrMatrix) -> Result<(Mat<f64>, Vec<usize>)> {
    Ok(GradientOrthogonalizer::new(g, b0)?.clean(z))
}

/// `P = I − G (Cᵀ G)⁻¹ Cᵀ` with the mixed matrix stored as `n_curl × n_grad`.
pub struct GradDivProjector {
    g: CsrMatrix,
    ct: CsrMatrix,
    lu: Option<faer::linalg::solvers::PartialPivLu<f64>>,
}

impl GradDivProjector {
    pub fn new(g: &CsrMatrix, c: &CsrMatrix) -> Result<Self> {
        if g.nrows() != c.nrows() || g.ncols() != c.ncols() {
            return Err(Error::DimensionMismatch { context: "mixed matrix", expected: g.ncols(), got: c.ncols() });
        }
        let ct = c.transpose();
        if g.ncols() == 0 {
            return Ok(Self { g: g.clone(), ct, lu: None });
        }
        let ctg = ct.matmul(g).to_dense();
        let lu = ctg.partial_piv_lu();
        let u = lu.U();
        let diag: Vec<f64> = (0..u.nrows()).map(|i| u[(i, i)].abs()).collect();
        let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
        if !(lo > 1e-13 * hi) {
            return Err(Error::Factorization(format!(
                "Cᵀ G is numerically singular (pivot ratio {:.3e})",
                lo / hi
            )));
        }
        Ok(Self { g: g.clone(), ct, lu: Some(lu) })
    }

    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        let Some(lu) = &self.lu else { return z.to_vec() };
        let rhs = self.ct.mul_vec(z);
        let mut m = Mat::from_fn(rhs.len(), 1, |i, _| rhs[i]);
        lu.solve_in_place(m.as_mut());
        let mut out = z.to_vec();
        linalg::axpy(-1.0, &self.g.mul_vec(&column(m.as_ref(), 0)), &mut out);
        out
    }

    pub fn project(&self, z: MatRef<'_, f64>) -> Mat<f64> {
        let cols: Vec<Vec<f64>> = (0..z.ncols()).map(|j| self.apply(&column(z, j))).collect();
        linalg::from_columns(z.nrows(), &cols)
    }
}

pub fn graddiv_project(z: MatRef<'_, f64>, g: &CsrMatrix, c0: &CsrMatrix) -> Result<Mat<f64>> {
    Ok(GradDivProjector::new(g, c0)?.project(z))
}

/// `‖Cᵀ v‖₂ / ‖v‖_B = ‖Gᵀ B v‖₂ / ‖v‖_B`; zero iff `v` is discretely divergence-free.
pub fn divergence_defect(v: &[f64], c: &CsrMatrix, b: &CsrMatrix) -> f64 {
    let norm = linalg::mass_norm(b, v);
    if norm == 0.0 {
        return 0.0;
    }
    norm2(&c.tr_mul_vec(v)) / norm
}
