//! Snapshot POD, the reduced basis, Galerkin projection and upscaling.

use std::fmt;
use std::io::{BufRead, Write};

use faer::{Mat, MatRef, Side};
use serde::{Deserialize, Serialize};

use crate::eigensolve::EigenSolution;
use crate::error::{Error, Result};
use crate::gauge::GaugeStrategy;
use crate::linalg::{self, column, dense_mul_vec, MassGramSchmidt, MassOperator};
use crate::problem::Problem;
use crate::sparse::CsrMatrix;

/// POD modes with `λ̄_i < POD_RANK_TOL · λ̄_1` are treated as numerically zero.
pub const POD_RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnapshotInfo {
    pub t: f64,
    pub mode: usize,
    pub lambda: f64,
}

#[derive(Debug, Clone)]
pub struct SnapshotSet {
    pub params: Vec<f64>,
    pub y: Mat<f64>,
    pub info: Vec<SnapshotInfo>,
    /// Columns removed by the gauge cleanup (pure gradients), as `(t, mode)`.
    pub dropped: Vec<(f64, usize)>,
}

/// First `k` eigenvectors at each parameter, gauged per `gauge`, in `(t, mode)` order.
pub fn collect_snapshots(problem: &Problem, params: &[f64], k: usize, gauge: GaugeStrategy, t_ref: f64) -> Result<SnapshotSet> {
    if params.is_empty() || k == 0 {
        return Err(Error::InvalidInput("snapshot collection needs parameters and k >= 1".into()));
    }
    let cleaner = problem.cleaner(gauge, t_ref)?;
    let mut cols = Vec::with_capacity(params.len() * k);
    let mut info = Vec::with_capacity(params.len() * k);
    let mut dropped = Vec::new();
    for &t in params {
        let sol = problem.solve_in_basis_space(t, k, gauge)?;
        let (clean, gone) = cleaner.clean(sol.vectors.as_ref());
        let kept: Vec<usize> = (0..k).filter(|j| !gone.contains(j)).collect();
        for (c, &mode) in kept.iter().enumerate() {
            cols.push(column(clean.as_ref(), c));
            info.push(SnapshotInfo { t, mode, lambda: sol.lambdas[mode] });
        }
        dropped.extend(gone.into_iter().map(|m| (t, m)));
    }
    let nrows = cols.first().map_or(0, Vec::len);
    Ok(SnapshotSet { params: params.to_vec(), y: linalg::from_columns(nrows, &cols), info, dropped })
}

/// Where a basis column came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "origin", rename_all = "kebab-case")]
pub enum Provenance {
    Pod { rank: usize, value: f64 },
    Greedy { iteration: usize, t: f64, mode: usize },
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Pod { rank, value } => write!(f, "pod {rank} {value:.16e}"),
            Provenance::Greedy { iteration, t, mode } => write!(f, "greedy {iteration} {t:.16e} {mode}"),
        }
    }
}

impl Provenance {
    fn parse(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("bad provenance line `{s}`"));
        let parts: Vec<&str> = s.split_whitespace().collect();
        match parts.as_slice() {
            ["pod", r, v] => Ok(Provenance::Pod { rank: r.parse().map_err(|_| bad())?, value: v.parse().map_err(|_| bad())? }),
            ["greedy", i, t, m] => Ok(Provenance::Greedy {
                iteration: i.parse().map_err(|_| bad())?,
                t: t.parse().map_err(|_| bad())?,
                mode: m.parse().map_err(|_| bad())?,
            }),
            _ => Err(bad()),
        }
    }
}

/// Basis matrix `Z` (full edge coordinates, or cotree coordinates for the
/// tree-cotree gauge), orthonormal in the inner product at `t_ref`.
#[derive(Debug, Clone)]
pub struct ReducedBasis {
    pub z: Mat<f64>,
    pub t_ref: f64,
    pub gauge: GaugeStrategy,
    pub provenance: Vec<Provenance>,
}

impl ReducedBasis {
    pub fn len(&self) -> usize {
        self.z.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.z.ncols() == 0
    }

    pub fn nrows(&self) -> usize {
        self.z.nrows()
    }

    /// The first `n` columns, which is the basis at an earlier stage of growth.
    pub fn prefix(&self, n: usize) -> ReducedBasis {
        let n = n.min(self.len());
        ReducedBasis {
            z: linalg::leading_columns(self.z.as_ref(), n),
            t_ref: self.t_ref,
            gauge: self.gauge,
            provenance: self.provenance[..n].to_vec(),
        }
    }

    /// Plain-text artifact: header lines, one provenance line per column,
    /// then the entries in column-major order with 17 significant digits.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "rb-maxwell-basis 1")?;
        writeln!(w, "rows {}", self.nrows())?;
        writeln!(w, "cols {}", self.len())?;
        writeln!(w, "t_ref {:.16e}", self.t_ref)?;
        writeln!(w, "gauge {}", self.gauge)?;
        for p in &self.provenance {
            writeln!(w, "{p}")?;
        }
        for j in 0..self.len() {
            let c = self.z.col(j);
            for i in 0..self.nrows() {
                writeln!(w, "{:.16e}", c[i])?;
            }
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let mut next = |what: &str| -> Result<String> {
            lines
                .next()
                .ok_or_else(|| Error::Parse(format!("basis file truncated before {what}")))?
                .map_err(Error::from)
        };
        if next("header")?.trim() != "rb-maxwell-basis 1" {
            return Err(Error::Parse("not a basis file (bad header)".into()));
        }
        let field = |line: String, key: &str| -> Result<String> {
            line.strip_prefix(key)
                .map(|v| v.trim().to_string())
                .ok_or_else(|| Error::Parse(format!("expected `{key}` line, got `{line}`")))
        };
        let num = |s: String| -> Result<usize> { s.parse().map_err(|_| Error::Parse(format!("bad count `{s}`"))) };
        let rows = num(field(next("rows")?, "rows ")?)?;
        let cols = num(field(next("cols")?, "cols ")?)?;
        let t_ref: f64 = field(next("t_ref")?, "t_ref ")?
            .parse()
            .map_err(|_| Error::Parse("bad t_ref".into()))?;
        let gauge: GaugeStrategy = field(next("gauge")?, "gauge ")?.parse()?;
        let provenance = (0..cols).map(|_| Provenance::parse(&next("provenance")?)).collect::<Result<Vec<_>>>()?;
        let mut z = Mat::zeros(rows, cols);
        for j in 0..cols {
            for i in 0..rows {
                let line = next("matrix entries")?;
                z[(i, j)] = line.trim().parse().map_err(|_| Error::Parse(format!("bad entry `{line}`")))?;
            }
        }
        Ok(Self { z, t_ref, gauge, provenance })
    }
}

/// Method of snapshots: `K = Yᵀ M Y = Ū Λ̄ Ūᵀ`, `z_i = Y ū_i / √λ̄_i` for the
/// `n_init` largest `λ̄_i`. Also returns all POD eigenvalues in descending order.
pub fn pod_basis<M: MassOperator + ?Sized>(y: MatRef<'_, f64>, m: &M, n_init: usize) -> Result<(Mat<f64>, Vec<f64>)> {
    if y.nrows() != m.dim() {
        return Err(Error::DimensionMismatch { context: "snapshot inner product", expected: m.dim(), got: y.nrows() });
    }
    if n_init == 0 || y.ncols() == 0 {
        return Err(Error::RankDeficient { requested: n_init, achievable: 0 });
    }
    let mut gram = y.transpose() * m.apply_mat(y);
    linalg::symmetrize(&mut gram);
    let evd = gram
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Factorization(format!("POD Gram matrix: {e:?}")))?;
    let s = evd.S().column_vector();
    let n = y.ncols();
    let values: Vec<f64> = (0..n).rev().map(|i| s[i]).collect();
    let lead = values[0];
    let rank = values.iter().take_while(|&&v| lead > 0.0 && v >= POD_RANK_TOL * lead).count();
    if n_init > rank {
        return Err(Error::RankDeficient { requested: n_init, achievable: rank });
    }
    let u = evd.U();
    let cols: Vec<Vec<f64>> = (0..n_init)
        .map(|r| {
            let idx = n - 1 - r;
            let ur = column(u, idx);
            dense_mul_vec(y, &ur).into_iter().map(|x| x / values[r].sqrt()).collect()
        })
        .collect();
    // one orthonormalization sweep removes the round-off amplified by 1/√λ̄
    let mut gs = MassGramSchmidt::new();
    for (r, c) in cols.iter().enumerate() {
        if !gs.push(m, c, 1e-8) {
            return Err(Error::RankDeficient { requested: n_init, achievable: r });
        }
    }
    Ok((gs.to_mat(y.nrows()), values))
}

/// POD on snapshots with the inner product of the gauge's basis space at `t_ref`.
pub fn initial_basis(problem: &Problem, snapshots: &SnapshotSet, gauge: GaugeStrategy, t_ref: f64, n_init: usize) -> Result<ReducedBasis> {
    let m = problem.inner_product(gauge, t_ref)?;
    let (z, values) = pod_basis(snapshots.y.as_ref(), m.as_ref(), n_init)?;
    let provenance = (0..n_init).map(|rank| Provenance::Pod { rank, value: values[rank] }).collect();
    Ok(ReducedBasis { z, t_ref, gauge, provenance })
}

/// `(Zᵀ A Z, Zᵀ B Z)`.
pub fn reduce_system(z: MatRef<'_, f64>, a: &CsrMatrix, b: &CsrMatrix) -> Result<(Mat<f64>, Mat<f64>)> {
    if z.nrows() != a.nrows() || z.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch { context: "reduced projection", expected: a.nrows(), got: z.nrows() });
    }
    Ok((linalg::project(z, a), linalg::project(z, b)))
}

/// `v = Z v_red`.
pub fn upscale(z: MatRef<'_, f64>, v_red: &[f64]) -> Result<Vec<f64>> {
    if v_red.len() != z.ncols() {
        return Err(Error::DimensionMismatch { context: "upscaling", expected: z.ncols(), got: v_red.len() });
    }
    Ok(dense_mul_vec(z, v_red))
}

/// Reduced pencil at one `t`, together with the full-space vectors `X(t)` the
/// reduced coordinates refer to (`X = Z` unless the basis is in cotree coordinates).
#[derive(Debug, Clone)]
pub struct ReducedSystem {
    pub t: f64,
    pub x: Mat<f64>,
    pub a: Mat<f64>,
    pub b: Mat<f64>,
}

impl ReducedSystem {
    pub fn new(problem: &Problem, basis: &ReducedBasis, t: f64) -> Result<Self> {
        let sys = problem.system(t)?;
        let x = problem.basis_at(basis.z.as_ref(), basis.gauge, &sys)?;
        let (a, b) = reduce_system(x.as_ref(), &sys.a, &sys.b)?;
        Ok(Self { t, x, a, b })
    }

    /// Leading `n × n` block, i.e. the system of the basis prefix of size `n`.
    pub fn leading(&self, n: usize) -> ReducedSystem {
        ReducedSystem {
            t: self.t,
            x: linalg::leading_columns(self.x.as_ref(), n),
            a: self.a.submatrix(0, 0, n, n).to_owned(),
            b: self.b.submatrix(0, 0, n, n).to_owned(),
        }
    }

    /// All reduced eigenpairs, ascending, unfiltered (spurious near-zero values included).
    pub fn solve(&self) -> Result<EigenSolution> {
        let (lambdas, vectors) = linalg::sym_gevp(self.a.as_ref(), self.b.as_ref()).map_err(|e| e.at(self.t))?;
        Ok(EigenSolution { t: self.t, lambdas, vectors, n_discarded_null: 0 })
    }

    pub fn upscale(&self, v_red: &[f64]) -> Result<Vec<f64>> {
        upscale(self.x.as_ref(), v_red)
    }
}
