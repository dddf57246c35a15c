//! Eigenvalue tracking along `t` by first-order Taylor prediction from the
//! bordered derivative system and correlation matching of the new solutions.

use std::fmt;
use std::sync::{Arc, OnceLock};

use faer::linalg::solvers::Solve;
use faer::{Mat, MatRef};
use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

use crate::analytic::{classify, Classification};
use crate::assignment::max_score_assignment;
use crate::discretization::{MatrixDerivatives, ReferenceMesh};
use crate::eigensolve::{clusters, EigenSolution, DEFAULT_DELTA_MULT};
use crate::error::{Error, Result};
use crate::gauge::{CotreeSystem, GaugeStrategy};
use crate::linalg::{self, column, dense_mul_vec, dense_tr_mul_vec, MassOperator};
use crate::problem::{Problem, SystemAt};
use crate::reduced::{ReducedBasis, ReducedSystem};
use crate::sparse::CsrMatrix;

/// `A(t) − λ B(t)` in the storage the model naturally has.
pub enum Shifted {
    Dense(Mat<f64>),
    Sparse(CsrMatrix),
}

/// A parameter-dependent symmetric-definite pencil in some coordinates.
pub trait EigenModel {
    fn label(&self) -> String;
    fn dim(&self) -> usize;
    fn at(&self, t: f64) -> Result<Box<dyn ModelState + '_>>;
}

/// The model frozen at one parameter value.
pub trait ModelState {
    fn t(&self) -> f64;
    fn dim(&self) -> usize;
    /// Up to `count` smallest eigenpairs, ascending, `B`-orthonormal.
    fn solve(&self, count: usize) -> Result<EigenSolution>;
    fn mass_apply(&self, v: &[f64]) -> Vec<f64>;
    fn stiffness_apply(&self, v: &[f64]) -> Vec<f64>;
    /// `(A'(t) v, B'(t) v)`.
    fn derivative_apply(&self, v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)>;
    fn shifted(&self, lambda: f64) -> Result<Shifted>;
    /// Frobenius norms `(‖A‖, ‖B‖)`.
    fn norms(&self) -> (f64, f64);
    /// Edge-coordinate representation of a model vector.
    fn upscale(&self, v: &[f64]) -> Result<Vec<f64>>;
}

struct StateMass<'a>(&'a dyn ModelState);

impl MassOperator for StateMass<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.0.mass_apply(x)
    }

    fn apply_mat(&self, x: MatRef<'_, f64>) -> Mat<f64> {
        let cols: Vec<Vec<f64>> = (0..x.ncols()).map(|j| self.0.mass_apply(&column(x, j))).collect();
        linalg::from_columns(x.nrows(), &cols)
    }
}

/// Ungauged high-fidelity pencil in edge coordinates.
pub struct FullModel<'a> {
    pub problem: &'a Problem,
}

struct FullState<'a> {
    problem: &'a Problem,
    sys: Arc<SystemAt>,
}

impl EigenModel for FullModel<'_> {
    fn label(&self) -> String {
        "high-fidelity".into()
    }

    fn dim(&self) -> usize {
        self.problem.n_curl()
    }

    fn at(&self, t: f64) -> Result<Box<dyn ModelState + '_>> {
        Ok(Box::new(FullState { problem: self.problem, sys: self.problem.system(t)? }))
    }
}

impl ModelState for FullState<'_> {
    fn t(&self) -> f64 {
        self.sys.t
    }

    fn dim(&self) -> usize {
        self.sys.a.nrows()
    }

    fn solve(&self, count: usize) -> Result<EigenSolution> {
        let mut sol = self.problem.solve_all_in_basis_space(self.sys.t, GaugeStrategy::None)?;
        sol.truncate(count.min(sol.len()));
        Ok(sol)
    }

    fn mass_apply(&self, v: &[f64]) -> Vec<f64> {
        self.sys.b.mul_vec(v)
    }

    fn stiffness_apply(&self, v: &[f64]) -> Vec<f64> {
        self.sys.a.mul_vec(v)
    }

    fn derivative_apply(&self, v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let d = self.problem.derivatives(&self.sys)?;
        Ok((d.a.mul_vec(v), d.b.mul_vec(v)))
    }

    fn shifted(&self, lambda: f64) -> Result<Shifted> {
        Ok(Shifted::Sparse(self.sys.a.lincomb(1.0, &self.sys.b, -lambda)?))
    }

    fn norms(&self) -> (f64, f64) {
        (frobenius_sparse(&self.sys.a), frobenius_sparse(&self.sys.b))
    }

    fn upscale(&self, v: &[f64]) -> Result<Vec<f64>> {
        Ok(v.to_vec())
    }
}

/// Tree-cotree condensed high-fidelity pencil in cotree coordinates.
pub struct CotreeModel<'a> {
    pub problem: &'a Problem,
}

struct CotreeState<'a> {
    problem: &'a Problem,
    sys: Arc<SystemAt>,
    cs: CotreeSystem,
}

impl EigenModel for CotreeModel<'_> {
    fn label(&self) -> String {
        "high-fidelity-cotree".into()
    }

    fn dim(&self) -> usize {
        self.problem.n_cotree()
    }

    fn at(&self, t: f64) -> Result<Box<dyn ModelState + '_>> {
        let sys = self.problem.system(t)?;
        let cs = self.problem.condense(t)?;
        Ok(Box::new(CotreeState { problem: self.problem, sys, cs }))
    }
}

impl CotreeState<'_> {
    fn inject(&self, y: &[f64]) -> Vec<f64> {
        self.problem.tree_cotree.inject(y)
    }

    fn restrict(&self, v: &[f64]) -> Vec<f64> {
        self.problem.tree_cotree.restrict(v)
    }
}

impl ModelState for CotreeState<'_> {
    fn t(&self) -> f64 {
        self.sys.t
    }

    fn dim(&self) -> usize {
        self.cs.dim()
    }

    fn solve(&self, count: usize) -> Result<EigenSolution> {
        let mut sol = crate::eigensolve::solve_all(self.cs.a_hat.as_ref(), self.cs.b_hat.as_ref(), self.problem.null_tol)
            .map_err(|e| e.at(self.sys.t))?
            .with_t(self.sys.t);
        sol.truncate(count.min(sol.len()));
        Ok(sol)
    }

    fn mass_apply(&self, v: &[f64]) -> Vec<f64> {
        dense_mul_vec(self.cs.b_hat.as_ref(), v)
    }

    fn stiffness_apply(&self, v: &[f64]) -> Vec<f64> {
        dense_mul_vec(self.cs.a_hat.as_ref(), v)
    }

    /// With `W = B⁻¹ A E_C`, `Â = Wᵀ A W`, `B̂ = E_Cᵀ A W` and
    /// `W' = B⁻¹ (A' E_C − B' W)`, applied to `y` without forming `Â'`.
    fn derivative_apply(&self, y: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let d = self.problem.derivatives(&self.sys)?;
        let chol = self.sys.chol_b()?;
        let wt = |x: &[f64]| dense_tr_mul_vec(self.cs.w.as_ref(), x);
        let v = self.cs.expand(y);
        let mut rhs = d.a.mul_vec(&self.inject(y));
        linalg::axpy(-1.0, &d.b.mul_vec(&v), &mut rhs);
        let wdy = chol.solve_vec(&rhs);
        let u = chol.solve_vec(&self.sys.a.mul_vec(&v));
        let a_wdy = self.sys.a.mul_vec(&wdy);

        let mut da = self.restrict(&d.a.mul_vec(&u));
        linalg::axpy(-1.0, &wt(&d.b.mul_vec(&u)), &mut da);
        linalg::axpy(1.0, &wt(&d.a.mul_vec(&v)), &mut da);
        linalg::axpy(1.0, &wt(&a_wdy), &mut da);

        let mut db = self.restrict(&d.a.mul_vec(&v));
        linalg::axpy(1.0, &self.restrict(&a_wdy), &mut db);
        Ok((da, db))
    }

    fn shifted(&self, lambda: f64) -> Result<Shifted> {
        Ok(Shifted::Dense(&self.cs.a_hat - &self.cs.b_hat * faer::Scale(lambda)))
    }

    fn norms(&self) -> (f64, f64) {
        (self.cs.a_hat.norm_l2(), self.cs.b_hat.norm_l2())
    }

    fn upscale(&self, v: &[f64]) -> Result<Vec<f64>> {
        Ok(self.cs.expand(v))
    }
}

/// Galerkin projection onto a reduced basis.
pub struct ReducedModel<'a> {
    pub problem: &'a Problem,
    pub basis: &'a ReducedBasis,
}

struct ReducedState<'a> {
    problem: &'a Problem,
    basis: &'a ReducedBasis,
    sys: Arc<SystemAt>,
    rs: ReducedSystem,
    x_dot: OnceLock<Option<Mat<f64>>>,
}

impl EigenModel for ReducedModel<'_> {
    fn label(&self) -> String {
        format!("rb-{}", self.basis.gauge)
    }

    fn dim(&self) -> usize {
        self.basis.len()
    }

    fn at(&self, t: f64) -> Result<Box<dyn ModelState + '_>> {
        let sys = self.problem.system(t)?;
        let rs = ReducedSystem::new(self.problem, self.basis, t)?;
        Ok(Box::new(ReducedState { problem: self.problem, basis: self.basis, sys, rs, x_dot: OnceLock::new() }))
    }
}

impl ReducedState<'_> {
    fn derivs(&self) -> Result<MatrixDerivatives> {
        self.problem.derivatives(&self.sys)
    }

    fn x_dot(&self, d: &MatrixDerivatives) -> Result<Option<&Mat<f64>>> {
        if let Some(x) = self.x_dot.get() {
            return Ok(x.as_ref());
        }
        let x = self.problem.basis_derivative(self.basis.z.as_ref(), self.rs.x.as_ref(), self.basis.gauge, &self.sys, d)?;
        Ok(self.x_dot.get_or_init(|| x).as_ref())
    }
}

impl ModelState for ReducedState<'_> {
    fn t(&self) -> f64 {
        self.rs.t
    }

    fn dim(&self) -> usize {
        self.rs.a.nrows()
    }

    fn solve(&self, count: usize) -> Result<EigenSolution> {
        let mut sol = self.rs.solve()?;
        sol.truncate(count.min(sol.len()));
        Ok(sol)
    }

    fn mass_apply(&self, v: &[f64]) -> Vec<f64> {
        dense_mul_vec(self.rs.b.as_ref(), v)
    }

    fn stiffness_apply(&self, v: &[f64]) -> Vec<f64> {
        dense_mul_vec(self.rs.a.as_ref(), v)
    }

    fn derivative_apply(&self, u: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let d = self.derivs()?;
        let x = self.rs.x.as_ref();
        let xu = dense_mul_vec(x, u);
        let mut da = dense_tr_mul_vec(x, &d.a.mul_vec(&xu));
        let mut db = dense_tr_mul_vec(x, &d.b.mul_vec(&xu));
        if let Some(xd) = self.x_dot(&d)? {
            let xdu = dense_mul_vec(xd.as_ref(), u);
            let axu = self.sys.a.mul_vec(&xu);
            let bxu = self.sys.b.mul_vec(&xu);
            linalg::axpy(1.0, &dense_tr_mul_vec(xd.as_ref(), &axu), &mut da);
            linalg::axpy(1.0, &dense_tr_mul_vec(x, &self.sys.a.mul_vec(&xdu)), &mut da);
            linalg::axpy(1.0, &dense_tr_mul_vec(xd.as_ref(), &bxu), &mut db);
            linalg::axpy(1.0, &dense_tr_mul_vec(x, &self.sys.b.mul_vec(&xdu)), &mut db);
        }
        Ok((da, db))
    }

    fn shifted(&self, lambda: f64) -> Result<Shifted> {
        Ok(Shifted::Dense(&self.rs.a - &self.rs.b * faer::Scale(lambda)))
    }

    fn norms(&self) -> (f64, f64) {
        (self.rs.a.norm_l2(), self.rs.b.norm_l2())
    }

    fn upscale(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.rs.upscale(v)
    }
}

fn frobenius_sparse(m: &CsrMatrix) -> f64 {
    m.values().iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Relative residual accepted for eigenpairs entering the derivative solve and
/// for the solved bordered system.
pub const BORDERED_TOL: f64 = 1e-8;

/// Pivot ratio below which the bordered matrix is treated as singular.
const SINGULAR_RATIO: f64 = 1e-10;

/// Solves `[[A − λB, −Bv], [(Bv)ᵀ, 0]] [v'; λ'] = [−A'v + λB'v; −vᵀB'v]`,
/// i.e. the derivative system with normalization vector `c = v`.
pub fn eigen_derivatives(state: &dyn ModelState, v: &[f64], lambda: f64) -> Result<(Vec<f64>, f64)> {
    let n = state.dim();
    if v.len() != n {
        return Err(Error::DimensionMismatch { context: "eigenvector", expected: n, got: v.len() });
    }
    let bv = state.mass_apply(v);
    let mut res = state.stiffness_apply(v);
    linalg::axpy(-lambda, &bv, &mut res);
    let (na, nb) = state.norms();
    let backward = linalg::norm2(&res) / ((na + lambda.abs() * nb) * linalg::norm2(v));
    if !(backward <= BORDERED_TOL) {
        return Err(Error::InvalidInput(format!("not an eigenpair: backward error {backward:.3e} at lambda = {lambda}")));
    }
    if linalg::dot(v, &bv) == 0.0 {
        return Err(Error::ZeroVector);
    }
    let (dav, dbv) = state.derivative_apply(v)?;
    let mut rhs = dav.iter().zip(&dbv).map(|(a, b)| -a + lambda * b).collect::<Vec<_>>();
    rhs.push(-linalg::dot(v, &dbv));
    let x = solve_bordered(state.shifted(lambda)?, &bv, &rhs, lambda)?;
    let lambda_dot = x[n];
    Ok((x[..n].to_vec(), lambda_dot))
}

fn solve_bordered(shifted: Shifted, border: &[f64], rhs: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let n = border.len();
    let singular = |diagnosis: String| Error::SingularBordered { lambda, diagnosis };
    let (x, residual, scale) = match shifted {
        Shifted::Dense(s) => {
            let m = Mat::from_fn(n + 1, n + 1, |i, j| match (i < n, j < n) {
                (true, true) => s[(i, j)],
                (true, false) => -border[i],
                (false, true) => border[j],
                (false, false) => 0.0,
            });
            let lu = m.partial_piv_lu();
            let u = lu.U();
            let (lo, hi) = (0..=n).fold((f64::INFINITY, 0.0f64), |(lo, hi), i| (lo.min(u[(i, i)].abs()), hi.max(u[(i, i)].abs())));
            if !(lo > SINGULAR_RATIO * hi) {
                return Err(singular(format!("pivot ratio {:.3e}, eigenvalue is numerically multiple", lo / hi)));
            }
            let mut sol = Mat::from_fn(n + 1, 1, |i, _| rhs[i]);
            lu.solve_in_place(sol.as_mut());
            let x = column(sol.as_ref(), 0);
            let r = &m * &sol;
            let residual = (0..=n).map(|i| (r[(i, 0)] - rhs[i]).powi(2)).sum::<f64>().sqrt();
            let scale = linalg::dense_max_abs(m.as_ref()) * linalg::norm2(&x) + linalg::norm2(rhs);
            (x, residual, scale)
        }
        Shifted::Sparse(s) => {
            let mut triplets: Vec<_> = s.triplets().map(|(i, j, v)| faer::sparse::Triplet::new(i, j, v)).collect();
            for (i, &b) in border.iter().enumerate() {
                triplets.push(faer::sparse::Triplet::new(i, n, -b));
                triplets.push(faer::sparse::Triplet::new(n, i, b));
            }
            let csc = faer::sparse::SparseColMat::<usize, f64>::try_new_from_triplets(n + 1, n + 1, &triplets)
                .map_err(|e| Error::Factorization(format!("bordered matrix: {e:?}")))?;
            let lu = csc.sp_lu().map_err(|e| singular(format!("sparse LU: {e:?}")))?;
            let mut sol = Mat::from_fn(n + 1, 1, |i, _| rhs[i]);
            lu.solve_in_place(sol.as_mut());
            let x = column(sol.as_ref(), 0);
            let mut r = s.mul_vec(&x[..n]);
            linalg::axpy(-x[n], border, &mut r);
            r.push(linalg::dot(border, &x[..n]));
            let residual = r.iter().zip(rhs).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let m_max = s.max_abs().max(linalg::max_abs(border));
            let scale = m_max * linalg::norm2(&x) + linalg::norm2(rhs);
            // a huge solution against a moderate right-hand side signals a near-singular matrix
            if SINGULAR_RATIO * m_max * linalg::norm2(&x) > linalg::norm2(rhs).max(f64::MIN_POSITIVE) {
                return Err(singular("solution norm blow-up, eigenvalue is numerically multiple".into()));
            }
            (x, residual, scale)
        }
    };
    if x.iter().any(|v| !v.is_finite()) {
        return Err(singular("non-finite solution".into()));
    }
    if residual > BORDERED_TOL * scale {
        return Err(singular(format!("bordered residual {:.3e} exceeds tolerance", residual / scale)));
    }
    Ok(x)
}

/// `(v + h v', λ + h λ')`.
pub fn taylor_predict(v: &[f64], lambda: f64, v_dot: &[f64], lambda_dot: f64, h: f64) -> (Vec<f64>, f64) {
    let mut out = v.to_vec();
    linalg::axpy(h, v_dot, &mut out);
    (out, lambda + h * lambda_dot)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Candidate index assigned to each predicted vector.
    pub assignment: Vec<usize>,
    pub rho: Vec<f64>,
    pub low_correlation: bool,
}

/// Correlation matrix `ρ_kj = |ṽ_kᵀ B v_j| / (‖ṽ_k‖_B ‖v_j‖_B)` (row-major, `K × K'`).
pub fn correlation_matrix<M: MassOperator + ?Sized>(predicted: &[Vec<f64>], candidates: &[Vec<f64>], b: &M) -> Vec<f64> {
    let bc: Vec<Vec<f64>> = candidates.iter().map(|c| b.apply(c)).collect();
    let cn: Vec<f64> = candidates.iter().zip(&bc).map(|(c, bc)| linalg::dot(c, bc).max(0.0).sqrt()).collect();
    let mut out = Vec::with_capacity(predicted.len() * candidates.len());
    for p in predicted {
        let pn = linalg::mass_norm(b, p);
        for (bcj, cnj) in bc.iter().zip(&cn) {
            let denom = pn * cnj;
            out.push(if denom > 0.0 { (linalg::dot(p, bcj) / denom).abs() } else { 0.0 });
        }
    }
    out
}

/// Optimal assignment of predicted vectors to candidates maximizing total correlation.
pub fn correlation_match<M: MassOperator + ?Sized>(
    predicted: &[Vec<f64>],
    candidates: &[Vec<f64>],
    b: &M,
    rho_min: f64,
) -> Result<MatchResult> {
    let rho = correlation_matrix(predicted, candidates, b);
    assign_by_score(&rho, predicted.len(), candidates.len(), rho_min)
}

fn assign_by_score(score: &[f64], rows: usize, cols: usize, rho_min: f64) -> Result<MatchResult> {
    if rows > cols {
        return Err(Error::InvalidInput(format!("{rows} predicted vectors but only {cols} candidates")));
    }
    let assignment = max_score_assignment(score, rows, cols)?;
    let rho: Vec<f64> = assignment.iter().enumerate().map(|(k, &j)| score[k * cols + j]).collect();
    let low_correlation = rho.iter().any(|&r| r < rho_min);
    Ok(MatchResult { assignment, rho, low_correlation })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// `c = v(t)`, re-set every step, so `cᵀ B v = 1`.
    #[default]
    Current,
}

pub const DEFAULT_NEAR_DEGENERATE_TOL: f64 = 1e-2;

#[derive(Debug, Clone)]
pub struct TrackingConfig {
    pub k: usize,
    /// Extra candidates solved beyond `K`.
    pub tau: usize,
    pub h: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub rho_min: f64,
    pub max_halvings: usize,
    pub delta_mult: f64,
    /// Relative gap below which tracked modes may rotate into each other within
    /// one step and are matched as a group when individual correlations fail.
    pub near_degenerate_tol: f64,
    pub normalization: Normalization,
    /// Zero-order prediction when the derivative system is singular.
    pub derivative_fallback: bool,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        Self {
            k: 5,
            tau: 2,
            h: 0.05,
            t_start: 0.0,
            t_end: 1.0,
            rho_min: 0.7,
            max_halvings: 4,
            delta_mult: DEFAULT_DELTA_MULT,
            near_degenerate_tol: DEFAULT_NEAR_DEGENERATE_TOL,
            normalization: Normalization::Current,
            derivative_fallback: true,
        }
    }
}

impl TrackingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("K must be at least 1".into()));
        }
        if !(self.h > 0.0 && self.h <= 1.0) {
            return Err(Error::Config(format!("step size must lie in (0, 1], got {}", self.h)));
        }
        if !(self.rho_min > 0.0 && self.rho_min <= 1.0) {
            return Err(Error::Config(format!("rho_min must lie in (0, 1], got {}", self.rho_min)));
        }
        if !(self.delta_mult >= 0.0 && self.near_degenerate_tol >= self.delta_mult) {
            return Err(Error::Config("need 0 <= delta_mult <= near_degenerate_tol".into()));
        }
        if !(0.0 <= self.t_start && self.t_start < self.t_end && self.t_end <= 1.0) {
            return Err(Error::Config(format!("invalid parameter range [{}, {}]", self.t_start, self.t_end)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct StepFlags {
    pub crossing: bool,
    pub derivative_fallback: bool,
    pub low_correlation: bool,
}

impl fmt::Display for StepFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = [
            (self.crossing, "crossing"),
            (self.derivative_fallback, "derivative-fallback"),
            (self.low_correlation, "low-correlation"),
        ]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, n)| *n)
        .collect();
        if names.is_empty() {
            f.write_str("-")
        } else {
            f.write_str(&names.join("|"))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackingStep {
    pub t: f64,
    /// Tracked eigenvalues in tracked order.
    pub lambdas: Vec<f64>,
    /// Position of each tracked mode in the sorted spectrum at `t`.
    pub rank: Vec<usize>,
    pub rho: Vec<f64>,
    /// `λ'_k(t)`; NaN where the zero-order fallback was used.
    pub derivatives: Vec<f64>,
    pub flags: Vec<StepFlags>,
    /// Step-size halvings needed to reach this step.
    pub halvings: usize,
}

impl TrackingStep {
    /// True when the tracked order differs from the sorted order.
    pub fn is_permuted(&self) -> bool {
        let mut sorted = self.rank.clone();
        sorted.sort_unstable();
        sorted != self.rank
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Crossing {
    /// Tracked indices, `first < second`.
    pub first: usize,
    pub second: usize,
    pub t_before: f64,
    pub t_after: f64,
    /// Linear interpolation of the zero of `λ_first − λ_second`.
    pub t_estimate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "status")]
pub enum TraceStatus {
    Complete,
    Aborted { t: f64, reason: String },
}

#[derive(Debug, Clone)]
pub struct TrackingTrace {
    pub model: String,
    pub k: usize,
    pub steps: Vec<TrackingStep>,
    pub crossings: Vec<Crossing>,
    pub status: TraceStatus,
    /// Tracked vectors at the last step in edge coordinates.
    pub endpoint_vectors: Vec<Vec<f64>>,
    pub labels: Vec<Option<Classification>>,
}

impl TrackingTrace {
    pub fn is_complete(&self) -> bool {
        self.status == TraceStatus::Complete
    }

    pub fn last(&self) -> &TrackingStep {
        self.steps.last().expect("trace has an initial step")
    }

    pub fn mode_label(&self, k: usize) -> String {
        match self.labels.get(k).copied().flatten() {
            Some(c) => c.mode.to_string(),
            None => format!("mode{k}"),
        }
    }

    /// One row per (step, tracked mode): t, mode_label, lambda, freq, rho, perm_index, flags.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "mode_label", "lambda", "freq", "rho", "perm_index", "flags"])?;
        for step in &self.steps {
            for k in 0..self.k {
                out.write_record([
                    format!("{:.16e}", step.t),
                    self.mode_label(k),
                    format!("{:.16e}", step.lambdas[k]),
                    format!("{:.16e}", crate::eigensolve::frequency(step.lambdas[k])),
                    format!("{:.16e}", step.rho[k]),
                    step.rank[k].to_string(),
                    step.flags[k].to_string(),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

struct Tracked {
    lambda: f64,
    v: Vec<f64>,
    rank: usize,
    /// Last vector taken while the mode had no near-degenerate neighbor.
    reference: Vec<f64>,
}

/// True when the sorted spectrum has another value within relative `tol` of entry `j`.
fn has_close_neighbor(spectrum: &[f64], j: usize, tol: f64) -> bool {
    let close = |l: usize| crate::eigensolve::same_cluster(spectrum[l], spectrum[j], tol);
    (j > 0 && close(j - 1)) || (j + 1 < spectrum.len() && close(j + 1))
}

/// Marches `t_start → t_end` with step `h`, tracking `K` eigenpairs of the model.
/// A low-correlation step first widens the candidate window, then halves the
/// step (up to `max_halvings` times); after that the trace is returned aborted.
pub fn track(model: &dyn EigenModel, config: &TrackingConfig) -> Result<TrackingTrace> {
    config.validate()?;
    let k = config.k;
    let base_window = k + config.tau;
    let mut t = config.t_start;
    let mut state = model.at(t)?;
    let sol = state.solve(base_window)?;
    if sol.len() < k {
        return Err(Error::NotEnoughEigenvalues { requested: k, available: sol.len() }.at(t));
    }
    let mut spectrum = sol.lambdas.clone();
    let mut tracked: Vec<Tracked> =
        (0..k).map(|i| Tracked { lambda: sol.lambdas[i], v: sol.vector(i), rank: i, reference: sol.vector(i) }).collect();
    let mut steps = vec![TrackingStep {
        t,
        lambdas: tracked.iter().map(|m| m.lambda).collect(),
        rank: (0..k).collect(),
        rho: vec![1.0; k],
        derivatives: vec![f64::NAN; k],
        flags: vec![StepFlags::default(); k],
        halvings: 0,
    }];
    let mut signs = vec![0i8; k * k];
    update_signs(&mut signs, &tracked, config.delta_mult);
    let mut crossings = Vec::new();
    let mut status = TraceStatus::Complete;

    while t < config.t_end {
        // derivatives at t; clusters in the solved spectrum use the zero-order fallback
        let in_cluster: Vec<bool> = {
            let cl = clusters(&spectrum, config.delta_mult);
            tracked.iter().map(|m| cl.iter().any(|r| r.len() > 1 && r.contains(&m.rank))).collect()
        };
        let mut v_dot = vec![None; k];
        let mut lambda_dot = vec![f64::NAN; k];
        let mut fallback = vec![false; k];
        for (i, m) in tracked.iter().enumerate() {
            if in_cluster[i] {
                fallback[i] = true;
                continue;
            }
            match eigen_derivatives(state.as_ref(), &m.v, m.lambda) {
                Ok((vd, ld)) => {
                    v_dot[i] = Some(vd);
                    lambda_dot[i] = ld;
                }
                Err(e @ Error::SingularBordered { .. }) if config.derivative_fallback => {
                    debug!("derivative fallback for mode {i} at t = {t}: {e}");
                    fallback[i] = true;
                }
                Err(e) => return Err(e.at(t)),
            }
        }
        if !config.derivative_fallback && fallback.iter().any(|&f| f) {
            return Err(Error::Tracking { t, reason: "multiple eigenvalue and derivative fallback disabled".into() });
        }
        let last = steps.last_mut().expect("initial step");
        last.derivatives = lambda_dot.clone();
        for (f, &fb) in last.flags.iter_mut().zip(&fallback) {
            f.derivative_fallback |= fb;
        }
        let groups = near_degenerate_groups(&tracked, config.near_degenerate_tol);

        let mut h = config.h.min(config.t_end - t);
        let mut halvings = 0;
        let max_rank = tracked.iter().map(|m| m.rank).max().unwrap_or(0);
        let mut window = base_window.max(max_rank + config.tau + 1);
        let accepted = loop {
            let t_new = if t + h >= config.t_end - 1e-12 { config.t_end } else { t + h };
            let h_eff = t_new - t;
            let next = model.at(t_new)?;
            let cand = next.solve(window)?;
            if cand.len() < k {
                return Err(Error::NotEnoughEigenvalues { requested: k, available: cand.len() }.at(t_new));
            }
            // near a (possibly avoided) degeneracy the eigenvector rotates too fast for a
            // first-order prediction; the last clean vector follows the mode across
            let predicted: Vec<Vec<f64>> = tracked
                .iter()
                .zip(&v_dot)
                .map(|(m, vd)| match vd {
                    Some(vd) if !has_close_neighbor(&spectrum, m.rank, config.near_degenerate_tol) => {
                        taylor_predict(&m.v, m.lambda, vd, 0.0, h_eff).0
                    }
                    _ => m.reference.clone(),
                })
                .collect();
            let cand_vecs: Vec<Vec<f64>> = (0..cand.len()).map(|j| cand.vector(j)).collect();
            let mass = StateMass(next.as_ref());
            let mut score = correlation_matrix(&predicted, &cand_vecs, &mass);
            let mut m = assign_by_score(&score, k, cand.len(), config.rho_min)?;
            // groups whose members cannot be told apart individually are matched as a subspace
            let rotated: Vec<&Vec<usize>> =
                groups.iter().filter(|g| g.iter().any(|&i| m.rho[i] < config.rho_min)).collect();
            if !rotated.is_empty() {
                for g in &rotated {
                    subspace_scores(&mut score, g, &predicted, &cand_vecs, &mass);
                }
                m = assign_by_score(&score, k, cand.len(), config.rho_min)?;
                for g in &rotated {
                    sort_group(&mut m, g, &tracked);
                }
            }
            if m.low_correlation {
                if cand.len() == window && window < next.dim() {
                    window = (2 * window).min(next.dim());
                    debug!("widening candidate window to {window} at t = {t_new}");
                    continue;
                }
                if halvings < config.max_halvings {
                    halvings += 1;
                    h /= 2.0;
                    debug!("low correlation at t = {t_new}; halving step to {h}");
                    continue;
                }
                break Err((t_new, m));
            }
            break Ok((t_new, next, cand, cand_vecs, predicted, m, halvings));
        };
        let (t_new, next, cand, cand_vecs, predicted, m, halvings) = match accepted {
            Ok(a) => a,
            Err((t_bad, m)) => {
                let worst = m.rho.iter().copied().fold(f64::INFINITY, f64::min);
                warn!("tracking aborted at t = {t_bad}: correlation {worst:.3} below {}", config.rho_min);
                status = TraceStatus::Aborted {
                    t: t_bad,
                    reason: format!("correlation {worst:.3} below {} after {} halvings", config.rho_min, config.max_halvings),
                };
                break;
            }
        };

        let prev_lambdas: Vec<f64> = tracked.iter().map(|m| m.lambda).collect();
        let mass = StateMass(next.as_ref());
        for (i, &j) in m.assignment.iter().enumerate() {
            let mut v = cand_vecs[j].clone();
            if linalg::mass_inner(&mass, &predicted[i], &v) < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            let reference = if has_close_neighbor(&cand.lambdas, j, config.near_degenerate_tol) {
                std::mem::take(&mut tracked[i].reference)
            } else {
                v.clone()
            };
            tracked[i] = Tracked { lambda: cand.lambdas[j], v, rank: j, reference };
        }
        let mut flags = vec![StepFlags::default(); k];
        for (i, f) in flags.iter_mut().enumerate() {
            f.low_correlation = m.rho[i] < config.rho_min;
        }
        for (p, q) in detect_crossings(&mut signs, &tracked, config.delta_mult) {
            let d0 = prev_lambdas[p] - prev_lambdas[q];
            let d1 = tracked[p].lambda - tracked[q].lambda;
            let t_estimate = if d0 != d1 { t + (t_new - t) * d0 / (d0 - d1) } else { 0.5 * (t + t_new) };
            info!("crossing of tracked modes {p} and {q} between t = {t:.4} and {t_new:.4}");
            crossings.push(Crossing { first: p, second: q, t_before: t, t_after: t_new, t_estimate });
            flags[p].crossing = true;
            flags[q].crossing = true;
        }
        steps.push(TrackingStep {
            t: t_new,
            lambdas: tracked.iter().map(|m| m.lambda).collect(),
            rank: tracked.iter().map(|m| m.rank).collect(),
            rho: m.rho.clone(),
            derivatives: vec![f64::NAN; k],
            flags,
            halvings,
        });
        spectrum = cand.lambdas.clone();
        t = t_new;
        state = next;
    }

    let endpoint_vectors = if status == TraceStatus::Complete {
        tracked.iter().map(|m| state.upscale(&m.v)).collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    Ok(TrackingTrace { model: model.label(), k, steps, crossings, status, endpoint_vectors, labels: Vec::new() })
}

/// Tracked modes whose eigenvalues form chains with relative gaps below `tol`.
fn near_degenerate_groups(tracked: &[Tracked], tol: f64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..tracked.len()).collect();
    order.sort_by(|&a, &b| tracked[a].lambda.total_cmp(&tracked[b].lambda).then(a.cmp(&b)));
    let lambdas: Vec<f64> = order.iter().map(|&i| tracked[i].lambda).collect();
    clusters(&lambdas, tol)
        .into_iter()
        .filter(|r| r.len() > 1)
        .map(|r| {
            let mut g: Vec<usize> = order[r].to_vec();
            g.sort_unstable();
            g
        })
        .collect()
}

/// Replaces the scores of a degenerate group by the fraction of each candidate
/// lying in the span of the group's (arbitrarily rotated) vectors.
fn subspace_scores<M: MassOperator + ?Sized>(
    score: &mut [f64],
    group: &[usize],
    predicted: &[Vec<f64>],
    candidates: &[Vec<f64>],
    mass: &M,
) {
    let mut gs = linalg::MassGramSchmidt::new();
    for &i in group {
        gs.push(mass, &predicted[i], crate::gauge::DROP_TOL);
    }
    let cols = candidates.len();
    for (j, c) in candidates.iter().enumerate() {
        let cn = linalg::mass_norm(mass, c);
        let rest = gs.orthogonalize(c);
        let inside = (cn * cn - linalg::mass_inner(mass, &rest, &rest)).max(0.0).sqrt();
        let s = if cn > 0.0 { inside / cn } else { 0.0 };
        for &i in group {
            score[i * cols + j] = s;
        }
    }
}

/// Within a degenerate group, hands the matched candidates out in ascending
/// eigenvalue order following the current order of the group members.
fn sort_group(m: &mut MatchResult, group: &[usize], tracked: &[Tracked]) {
    let mut members = group.to_vec();
    members.sort_by(|&a, &b| tracked[a].lambda.total_cmp(&tracked[b].lambda).then(a.cmp(&b)));
    let mut cands: Vec<usize> = group.iter().map(|&i| m.assignment[i]).collect();
    let mut rhos: Vec<f64> = group.iter().map(|&i| m.rho[i]).collect();
    let order = {
        let mut idx: Vec<usize> = (0..cands.len()).collect();
        idx.sort_by_key(|&p| cands[p]);
        idx
    };
    cands = order.iter().map(|&p| cands[p]).collect();
    rhos = order.iter().map(|&p| rhos[p]).collect();
    for ((&i, c), r) in members.iter().zip(cands).zip(rhos) {
        m.assignment[i] = c;
        m.rho[i] = r;
    }
}

fn pair_sign(a: f64, b: f64, delta: f64) -> i8 {
    if crate::eigensolve::same_cluster(a, b, delta) {
        0
    } else if a < b {
        -1
    } else {
        1
    }
}

fn update_signs(signs: &mut [i8], tracked: &[Tracked], delta: f64) {
    let k = tracked.len();
    for p in 0..k {
        for q in p + 1..k {
            let s = pair_sign(tracked[p].lambda, tracked[q].lambda, delta);
            if s != 0 {
                signs[p * k + q] = s;
            }
        }
    }
}

/// Pairs whose order flipped relative to their last strict order.
fn detect_crossings(signs: &mut [i8], tracked: &[Tracked], delta: f64) -> Vec<(usize, usize)> {
    let k = tracked.len();
    let mut out = Vec::new();
    for p in 0..k {
        for q in p + 1..k {
            let s = pair_sign(tracked[p].lambda, tracked[q].lambda, delta);
            if s == 0 {
                continue;
            }
            if signs[p * k + q] != 0 && signs[p * k + q] != s {
                out.push((p, q));
            }
            signs[p * k + q] = s;
        }
    }
    out
}

/// Labels the endpoint of a complete trace on the stretched rectangle `[0, a] × [0, 1]`
/// using the edge-coordinate mass matrix `b` of the endpoint.
pub fn classify_endpoint(trace: &TrackingTrace, mesh: &ReferenceMesh, a: f64, b: &CsrMatrix) -> Result<Vec<Option<Classification>>> {
    if !trace.is_complete() {
        return Err(Error::Tracking { t: trace.last().t, reason: "trace did not reach the end of the parameter range".into() });
    }
    let labels = classify(mesh, a, &trace.last().lambdas, &trace.endpoint_vectors, b)?;
    for (k, l) in labels.iter().enumerate() {
        if l.is_none() {
            warn!("tracked mode {k} (lambda = {}) has no analytic match within 5%", trace.last().lambdas[k]);
        }
    }
    Ok(labels)
}

/// Tracks and, for the affine family ending at `t = 1`, classifies the endpoint.
pub fn track_and_classify(problem: &Problem, model: &dyn EigenModel, config: &TrackingConfig) -> Result<TrackingTrace> {
    let mut trace = track(model, config)?;
    if trace.is_complete() && problem.family.is_affine() {
        let t_end = trace.last().t;
        let b = problem.system(t_end)?;
        trace.labels = classify_endpoint(&trace, &problem.mesh, problem.family.stretch(t_end), &b.b)?;
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::MappingFamily;
    use crate::eigensolve::DEFAULT_NULL_TOL;

    fn problem(n: usize, family: MappingFamily) -> Problem {
        Problem::new(ReferenceMesh::new(n).unwrap(), family, DEFAULT_NULL_TOL, 1e-4).unwrap()
    }

    #[test]
    fn taylor_trivial_cases() {
        let (v, l) = taylor_predict(&[1.0, 2.0], 3.0, &[5.0, 5.0], 7.0, 0.0);
        assert_eq!((v, l), (vec![1.0, 2.0], 3.0));
        let (_, l) = taylor_predict(&[1.0], 3.0, &[1.0], 0.0, 0.5);
        assert_eq!(l, 3.0);
    }

    #[test]
    fn match_identity_and_swap() {
        let b = CsrMatrix::identity(3);
        let p = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
        let m = correlation_match(&p, &p, &b, 0.9).unwrap();
        assert_eq!(m.assignment, vec![0, 1]);
        assert!(m.rho.iter().all(|&r| (r - 1.0).abs() < 1e-15));
        let swapped = vec![p[1].clone(), p[0].clone(), vec![0.0, 0.0, 1.0]];
        let m = correlation_match(&p, &swapped, &b, 0.9).unwrap();
        assert_eq!(m.assignment, vec![1, 0]);
        assert!(!m.low_correlation);
    }

    #[test]
    fn match_rotated_degenerate_pair() {
        let b = CsrMatrix::identity(2);
        let th = 10f64.to_radians();
        let p = vec![vec![th.cos(), th.sin()], vec![-th.sin(), th.cos()]];
        let c = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let m = correlation_match(&p, &c, &b, 0.5).unwrap();
        assert!(m.rho.iter().sum::<f64>() >= 2.0 * th.cos() - 1e-12);
    }

    #[test]
    fn stationary_family_has_zero_derivative() {
        let p = problem(6, MappingFamily::identity());
        let model = FullModel { problem: &p };
        let s = model.at(0.3).unwrap();
        let sol = s.solve(3).unwrap();
        let (vd, ld) = eigen_derivatives(s.as_ref(), &sol.vector(2), sol.lambdas[2]).unwrap();
        assert!(ld.abs() < 1e-10);
        assert!(linalg::norm2(&vd) < 1e-8);
    }

    /// Constant diagonal pencil `diag(d)`, `I` with `A' = diag(d')`.
    struct DiagState {
        d: Vec<f64>,
        dd: Vec<f64>,
    }

    impl ModelState for DiagState {
        fn t(&self) -> f64 {
            0.0
        }
        fn dim(&self) -> usize {
            self.d.len()
        }
        fn solve(&self, _count: usize) -> Result<EigenSolution> {
            unreachable!()
        }
        fn mass_apply(&self, v: &[f64]) -> Vec<f64> {
            v.to_vec()
        }
        fn stiffness_apply(&self, v: &[f64]) -> Vec<f64> {
            v.iter().zip(&self.d).map(|(x, d)| x * d).collect()
        }
        fn derivative_apply(&self, v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
            Ok((v.iter().zip(&self.dd).map(|(x, d)| x * d).collect(), vec![0.0; v.len()]))
        }
        fn shifted(&self, lambda: f64) -> Result<Shifted> {
            Ok(Shifted::Dense(Mat::from_fn(self.d.len(), self.d.len(), |i, j| if i == j { self.d[i] - lambda } else { 0.0 })))
        }
        fn norms(&self) -> (f64, f64) {
            (linalg::norm2(&self.d), (self.d.len() as f64).sqrt())
        }
        fn upscale(&self, v: &[f64]) -> Result<Vec<f64>> {
            Ok(v.to_vec())
        }
    }

    #[test]
    fn multiple_eigenvalue_is_singular() {
        let s = DiagState { d: vec![1.0, 1.0, 2.0], dd: vec![0.5, -0.5, 1.0] };
        let err = eigen_derivatives(&s, &[1.0, 0.0, 0.0], 1.0).unwrap_err();
        assert!(matches!(err, Error::SingularBordered { .. }), "{err}");
        let (vd, ld) = eigen_derivatives(&s, &[0.0, 0.0, 1.0], 2.0).unwrap();
        assert!((ld - 1.0).abs() < 1e-14);
        assert!(linalg::norm2(&vd) < 1e-14);
    }

    #[test]
    fn diagonal_split_mesh_separates_square_pairs() {
        // the mesh is symmetric under x <-> y only, so the analytic double modes split at O(h^2)
        let p = problem(6, MappingFamily::identity());
        let l = p.solve_full(0.0, 2).unwrap().lambdas;
        assert!((l[1] - l[0]) / l[0] > 1e-3);
    }

    #[test]
    fn rejects_non_eigenpair() {
        let p = problem(4, MappingFamily::affine_stretch(2.5).unwrap());
        let model = FullModel { problem: &p };
        let s = model.at(0.5).unwrap();
        let v = vec![1.0; s.dim()];
        assert!(matches!(eigen_derivatives(s.as_ref(), &v, 1.0), Err(Error::InvalidInput(_))));
    }

    fn fd_check(model: &dyn EigenModel, t: f64, mode: usize) {
        let s = model.at(t).unwrap();
        let sol = s.solve(mode + 2).unwrap();
        let (_, ld) = eigen_derivatives(s.as_ref(), &sol.vector(mode), sol.lambdas[mode]).unwrap();
        let d = 1e-3;
        let lp = model.at(t + d).unwrap().solve(mode + 2).unwrap().lambdas[mode];
        let lm = model.at(t - d).unwrap().solve(mode + 2).unwrap().lambdas[mode];
        let fd = (lp - lm) / (2.0 * d);
        assert!(((ld - fd) / fd).abs() < 1e-4, "{}: {ld} vs {fd}", model.label());
    }

    #[test]
    fn derivatives_agree_with_finite_differences_in_all_models() {
        let p = problem(6, MappingFamily::sine_bump(0.3).unwrap());
        fd_check(&FullModel { problem: &p }, 0.4, 1);
        fd_check(&CotreeModel { problem: &p }, 0.4, 1);
        let snaps = crate::reduced::collect_snapshots(&p, &[0.2, 0.4, 0.6], 4, GaugeStrategy::TreeCotree, 0.0).unwrap();
        let basis = crate::reduced::initial_basis(&p, &snaps, GaugeStrategy::TreeCotree, 0.0, 10).unwrap();
        fd_check(&ReducedModel { problem: &p, basis: &basis }, 0.4, 1);
        let snaps = crate::reduced::collect_snapshots(&p, &[0.2, 0.4, 0.6], 4, GaugeStrategy::GramSchmidt, 0.0).unwrap();
        let basis = crate::reduced::initial_basis(&p, &snaps, GaugeStrategy::GramSchmidt, 0.0, 10).unwrap();
        fd_check(&ReducedModel { problem: &p, basis: &basis }, 0.4, 1);
    }

    #[test]
    fn identity_family_trace_is_constant() {
        let p = problem(6, MappingFamily::identity());
        let cfg = TrackingConfig { k: 4, h: 0.25, ..Default::default() };
        let trace = track(&CotreeModel { problem: &p }, &cfg).unwrap();
        assert!(trace.is_complete());
        assert_eq!(trace.steps.len(), 5);
        assert!(trace.crossings.is_empty());
        let first = &trace.steps[0].lambdas;
        for s in &trace.steps {
            assert!(!s.is_permuted());
            for (a, b) in s.lambdas.iter().zip(first) {
                assert!(((a - b) / b).abs() < 1e-10);
            }
        }
        assert_eq!(trace.last().t, 1.0);
    }

    #[test]
    fn config_validation() {
        assert!(TrackingConfig { h: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrackingConfig { k: 0, ..Default::default() }.validate().is_err());
        assert!(TrackingConfig { rho_min: 1.5, ..Default::default() }.validate().is_err());
        assert!(TrackingConfig::default().validate().is_ok());
    }

    #[test]
    fn flags_display() {
        assert_eq!(StepFlags::default().to_string(), "-");
        let f = StepFlags { crossing: true, low_correlation: true, ..Default::default() };
        assert_eq!(f.to_string(), "crossing|low-correlation");
    }
}
