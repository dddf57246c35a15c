//! Multi-eigenvalue greedy enrichment driven by the residual/gap estimator.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use faer::{Mat, MatRef};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::eigensolve::{cluster_of, clusters, EigenSolution};
use crate::error::{Error, Result};
use crate::gauge::DROP_TOL;
use crate::linalg::{self, column, dense_mul_vec, MassGramSchmidt};
use crate::problem::{Problem, SystemAt};
use crate::reduced::{upscale, Provenance, ReducedBasis};
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ResidualNorm {
    /// `rᵀ B r`.
    #[default]
    Mass,
    /// `rᵀ B⁻¹ r`, the dual norm.
    Dual,
}

impl FromStr for ResidualNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mass" => Ok(Self::Mass),
            "dual" => Ok(Self::Dual),
            other => Err(Error::Config(format!("unknown residual norm `{other}` (expected mass or dual)"))),
        }
    }
}

impl fmt::Display for ResidualNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Mass => "mass",
            Self::Dual => "dual",
        })
    }
}

#[derive(Debug, Clone)]
pub struct GreedyConfig {
    pub k: usize,
    pub tau: usize,
    pub n_init: usize,
    pub train: Vec<f64>,
    pub tol: f64,
    pub n_max: usize,
    /// Coercivity constant, fixed to 1.
    pub g: f64,
    pub delta_mult: f64,
    pub residual_norm: ResidualNorm,
    /// Accept `n_init` below `⌈1.5 (K + τ)⌉` (with a warning).
    pub allow_small_init: bool,
}

impl GreedyConfig {
    pub fn recommended_n_init(k: usize, tau: usize) -> usize {
        (3 * (k + tau)).div_ceil(2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("K must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("greedy tolerance must be positive, got {}", self.tol)));
        }
        if self.train.is_empty() {
            return Err(Error::Config("training set is empty".into()));
        }
        if self.train.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::Config("training parameters must lie in [0, 1]".into()));
        }
        if !(self.g > 0.0) {
            return Err(Error::Config("coercivity constant must be positive".into()));
        }
        let rec = Self::recommended_n_init(self.k, self.tau);
        if self.n_init < rec {
            if self.allow_small_init {
                warn!("N_init = {} is below the recommended {rec} = ceil(1.5 (K + tau))", self.n_init);
            } else {
                return Err(Error::Config(format!(
                    "N_init = {} is below ceil(1.5 (K + tau)) = {rec}; set the override to accept",
                    self.n_init
                )));
            }
        }
        Ok(())
    }
}

/// Equidistant points `0, 1/(n-1), …, 1`.
pub fn equidistant(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| if i == n - 1 { 1.0 } else { i as f64 / (n - 1) as f64 }).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorEstimate {
    pub t: f64,
    pub mode: usize,
    /// `+∞` when the estimate is invalid (no gap, missing mode, non-positive eigenvalue).
    pub eta: f64,
    pub residual_form: f64,
    pub gap: Option<f64>,
    pub lambda_red: f64,
}

impl ErrorEstimate {
    pub fn is_valid(&self) -> bool {
        self.eta.is_finite()
    }

    /// `η = rᵀ B r / (g · d · λ_red)` from the stored components.
    pub fn recombine(&self, g: f64) -> f64 {
        match self.gap {
            Some(d) if self.lambda_red > 0.0 => self.residual_form / (g * d * self.lambda_red),
            _ => f64::INFINITY,
        }
    }
}

/// Relative distance `|λ_l − λ_i| / |λ_l|` to the nearest eigenvalue outside the
/// multiplicity cluster of `λ_i`.
pub fn gap(lambdas: &[f64], i: usize, delta_mult: f64) -> Result<f64> {
    if i >= lambdas.len() {
        return Err(Error::InvalidInput(format!("mode {i} outside spectrum of length {}", lambdas.len())));
    }
    let own = cluster_of(lambdas, i, delta_mult);
    let li = lambdas[i];
    lambdas
        .iter()
        .enumerate()
        .filter(|(j, _)| !own.contains(j))
        .min_by(|(_, a), (_, b)| (*a - li).abs().total_cmp(&(*b - li).abs()))
        .map(|(_, &l)| ((l - li) / l).abs())
        .ok_or(Error::GapUndefined)
}

/// `r = A (Z v) − λ B (Z v)`.
pub fn residual(z: MatRef<'_, f64>, v_red: &[f64], lambda: f64, a: &CsrMatrix, b: &CsrMatrix) -> Result<Vec<f64>> {
    if z.nrows() != a.nrows() || z.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch { context: "residual", expected: a.nrows(), got: z.nrows() });
    }
    let v = upscale(z, v_red)?;
    let mut r = a.mul_vec(&v);
    linalg::axpy(-lambda, &b.mul_vec(&v), &mut r);
    Ok(r)
}

fn residual_form(r: &[f64], sys: &SystemAt, norm: ResidualNorm) -> Result<f64> {
    Ok(match norm {
        ResidualNorm::Mass => linalg::mass_inner(&sys.b, r, r),
        ResidualNorm::Dual => linalg::dot(r, &sys.chol_b()?.solve_vec(r)),
    })
}

struct Estimator {
    count: usize,
    delta_mult: f64,
    g: f64,
    norm: ResidualNorm,
}

impl Estimator {
    /// Estimates for modes `0..k` given the reduced spectrum and the residual builder.
    fn estimates(
        &self,
        t: f64,
        k: usize,
        lambdas: &[f64],
        residual_of: impl Fn(usize) -> Vec<f64>,
        sys: &SystemAt,
    ) -> Result<Vec<ErrorEstimate>> {
        let window = &lambdas[..self.count.min(lambdas.len())];
        (0..k)
            .map(|i| {
                if i >= window.len() {
                    return Ok(ErrorEstimate { t, mode: i, eta: f64::INFINITY, residual_form: f64::NAN, gap: None, lambda_red: f64::NAN });
                }
                let r = residual_of(i);
                let form = residual_form(&r, sys, self.norm)?;
                let mut est = ErrorEstimate {
                    t,
                    mode: i,
                    eta: f64::INFINITY,
                    residual_form: form,
                    gap: gap(window, i, self.delta_mult).ok(),
                    lambda_red: window[i],
                };
                est.eta = est.recombine(self.g);
                Ok(est)
            })
            .collect()
    }
}

/// Estimates for modes `0..k` at one parameter, reduced spectrum truncated to `count`.
pub fn estimate(
    problem: &Problem,
    basis: &ReducedBasis,
    t: f64,
    k: usize,
    count: usize,
    delta_mult: f64,
    norm: ResidualNorm,
) -> Result<Vec<ErrorEstimate>> {
    let sys = problem.system(t)?;
    let rs = crate::reduced::ReducedSystem::new(problem, basis, t)?;
    let sol = rs.solve()?;
    let est = Estimator { count, delta_mult, g: 1.0, norm };
    est.estimates(
        t,
        k,
        &sol.lambdas,
        |i| residual(rs.x.as_ref(), &sol.vector(i), sol.lambdas[i], &sys.a, &sys.b).expect("conformal residual"),
        &sys,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GreedyLogEntry {
    pub iteration: usize,
    pub t_star: f64,
    pub mode_star: usize,
    pub max_eta: f64,
    /// Basis size after this iteration.
    pub basis_size: usize,
    pub cluster_size: usize,
    pub appended: usize,
    /// Cluster vectors skipped as numerically dependent or pure gradients.
    pub skipped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GreedyStatus {
    Converged,
    /// Stopped at `N_max` above tolerance.
    MaxSize,
    /// Every remaining candidate appended nothing new.
    Exhausted,
}

#[derive(Debug, Clone)]
pub struct GreedyOutcome {
    pub basis: ReducedBasis,
    pub log: Vec<GreedyLogEntry>,
    pub status: GreedyStatus,
    /// Largest estimate seen in the final sweep.
    pub final_max_eta: f64,
    /// Basis sizes after initialization and after every growing iteration.
    pub sizes: Vec<usize>,
}

struct TrainPoint {
    t: f64,
    sys: std::sync::Arc<SystemAt>,
    x: Mat<f64>,
    ax: Mat<f64>,
    bx: Mat<f64>,
}

impl TrainPoint {
    fn extend(&mut self, problem: &Problem, basis: &ReducedBasis) -> Result<()> {
        let have = self.x.ncols();
        if have == basis.len() {
            return Ok(());
        }
        let new = basis.z.subcols(have, basis.len() - have);
        let x_new = problem.basis_at(new, basis.gauge, &self.sys)?;
        let ax_new = self.sys.a.mul_dense(x_new.as_ref());
        let bx_new = self.sys.b.mul_dense(x_new.as_ref());
        self.x = hcat(self.x.as_ref(), x_new.as_ref());
        self.ax = hcat(self.ax.as_ref(), ax_new.as_ref());
        self.bx = hcat(self.bx.as_ref(), bx_new.as_ref());
        Ok(())
    }
}

fn hcat(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Mat<f64> {
    Mat::from_fn(a.nrows().max(b.nrows()), a.ncols() + b.ncols(), |i, j| if j < a.ncols() { a[(i, j)] } else { b[(i, j - a.ncols())] })
}

/// Greedy loop: evaluate the estimator on the training set, add the whole
/// high-fidelity eigenspace of the worst `(t, i)`, repeat until `max η < tol`
/// or the basis reaches `N_max`.
pub fn greedy_extend(problem: &Problem, basis: ReducedBasis, config: &GreedyConfig) -> Result<GreedyOutcome> {
    config.validate()?;
    let mut basis = basis;
    let mut log = Vec::new();
    let mut sizes = vec![basis.len()];
    if config.tol.is_infinite() {
        return Ok(GreedyOutcome { basis, log, status: GreedyStatus::Converged, final_max_eta: f64::NAN, sizes });
    }
    let m = problem.inner_product(basis.gauge, basis.t_ref)?;
    let cleaner = problem.cleaner(basis.gauge, basis.t_ref)?;
    let mut gs = MassGramSchmidt::from_orthonormal(basis.z.as_ref(), m.as_ref());
    let estimator = Estimator { count: config.k + config.tau, delta_mult: config.delta_mult, g: config.g, norm: config.residual_norm };

    let mut points = config
        .train
        .iter()
        .map(|&t| {
            let sys = problem.system(t)?;
            let n = problem.n_curl();
            Ok(TrainPoint { t, sys, x: Mat::zeros(n, 0), ax: Mat::zeros(n, 0), bx: Mat::zeros(n, 0) })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut exhausted: HashSet<(usize, usize)> = HashSet::new();
    let mut iteration = 0;
    // estimates stay valid until the basis grows
    let mut sweep: Option<(Vec<(usize, ErrorEstimate)>, f64)> = None;
    // leading high-fidelity eigenpairs per training point
    let mut hf_cache: HashMap<usize, EigenSolution> = HashMap::new();
    let keep = 2 * (config.k + config.tau) + 8;

    loop {
        if sweep.is_none() {
            let mut all = Vec::with_capacity(points.len() * config.k);
            let mut sweep_max = 0.0f64;
            for (p_idx, p) in points.iter_mut().enumerate() {
                p.extend(problem, &basis).map_err(|e| e.at(p.t))?;
                let mut ar = p.x.transpose() * &p.ax;
                let mut br = p.x.transpose() * &p.bx;
                linalg::symmetrize(&mut ar);
                linalg::symmetrize(&mut br);
                let (lambdas, vecs) = linalg::sym_gevp(ar.as_ref(), br.as_ref()).map_err(|e| e.at(p.t))?;
                let residual_of = |i: usize| {
                    let u = column(vecs.as_ref(), i);
                    let mut r = dense_mul_vec(p.ax.as_ref(), &u);
                    linalg::axpy(-lambdas[i], &dense_mul_vec(p.bx.as_ref(), &u), &mut r);
                    r
                };
                for est in estimator.estimates(p.t, config.k, &lambdas, residual_of, &p.sys)? {
                    sweep_max = sweep_max.max(est.eta);
                    all.push((p_idx, est));
                }
            }
            sweep = Some((all, sweep_max));
        }
        let (estimates, sweep_max) = sweep.as_ref().expect("sweep computed above");
        let sweep_max = *sweep_max;
        let mut best: Option<(usize, ErrorEstimate)> = None;
        for (p_idx, est) in estimates {
            if exhausted.contains(&(*p_idx, est.mode)) {
                continue;
            }
            // strict comparison keeps the smallest t, then the smallest mode
            if best.as_ref().is_none_or(|(_, b)| est.eta > b.eta) {
                best = Some((*p_idx, *est));
            }
        }
        let Some((p_idx, star)) = best else {
            warn!("greedy: every training candidate is exhausted");
            return Ok(GreedyOutcome { basis, log, status: GreedyStatus::Exhausted, final_max_eta: sweep_max, sizes });
        };
        if sweep_max < config.tol {
            info!("greedy converged: max eta {sweep_max:.3e} < {:.3e} with N = {}", config.tol, basis.len());
            return Ok(GreedyOutcome { basis, log, status: GreedyStatus::Converged, final_max_eta: sweep_max, sizes });
        }
        if basis.len() >= config.n_max {
            warn!("greedy stopped at N_max = {} with max eta {sweep_max:.3e}", config.n_max);
            return Ok(GreedyOutcome { basis, log, status: GreedyStatus::MaxSize, final_max_eta: sweep_max, sizes });
        }

        let t_star = points[p_idx].t;
        let cached = hf_cache.get(&p_idx).filter(|hf| {
            let mode = star.mode.min(hf.lambdas.len().saturating_sub(1));
            cluster_of(&hf.lambdas, mode, config.delta_mult).end < hf.lambdas.len()
        });
        let hf = match cached {
            Some(hf) => hf.clone(),
            None => {
                let mut hf = problem.solve_all_in_basis_space(t_star, basis.gauge)?;
                hf.truncate(keep);
                hf_cache.insert(p_idx, hf.clone());
                hf
            }
        };
        let mode = star.mode.min(hf.lambdas.len().saturating_sub(1));
        let cluster = cluster_of(&hf.lambdas, mode, config.delta_mult);
        let block = hf.vectors.subcols(cluster.start, cluster.len());
        let (cleaned, gone) = cleaner.clean(block);
        let mut appended = 0;
        for j in 0..cleaned.ncols() {
            if gs.push(m.as_ref(), &column(cleaned.as_ref(), j), DROP_TOL) {
                appended += 1;
            }
        }
        let skipped = cluster.len() - appended;
        if skipped > 0 {
            info!(
                "greedy iteration {iteration}: {skipped} of {} cluster vectors skipped ({} pure gradients)",
                cluster.len(),
                gone.len()
            );
        }
        if appended == 0 {
            exhausted.insert((p_idx, star.mode));
        } else {
            basis.z = gs.to_mat(basis.nrows());
            sweep = None;
            basis.provenance.extend((0..appended).map(|_| Provenance::Greedy { iteration, t: t_star, mode: star.mode }));
            sizes.push(basis.len());
        }
        log.push(GreedyLogEntry {
            iteration,
            t_star,
            mode_star: star.mode,
            max_eta: star.eta,
            basis_size: basis.len(),
            cluster_size: cluster.len(),
            appended,
            skipped,
        });
        info!("greedy iteration {iteration}: t* = {t_star:.4}, mode {}, eta {:.3e}, N = {}", star.mode, star.eta, basis.len());
        iteration += 1;
    }
}

/// Number of distinct clusters among the first `k` values (diagnostics).
pub fn cluster_count(lambdas: &[f64], k: usize, delta_mult: f64) -> usize {
    clusters(&lambdas[..k.min(lambdas.len())], delta_mult).len()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gap_examples() {
        assert!((gap(&[1.0, 2.0], 0, 1e-6).unwrap() - 0.5).abs() < 1e-15);
        assert!((gap(&[1.0, 1.0 + 1e-9, 3.0], 0, 1e-6).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((gap(&[2.0, 4.0, 5.0], 1, 1e-6).unwrap() - 0.2).abs() < 1e-15);
        assert!(matches!(gap(&[1.0, 1.0], 0, 1e-6), Err(Error::GapUndefined)));
    }

    #[test]
    fn recommended_init_size() {
        assert_eq!(GreedyConfig::recommended_n_init(5, 2), 11);
        assert_eq!(GreedyConfig::recommended_n_init(10, 2), 18);
    }

    #[test]
    fn estimate_components_recombine() {
        let e = ErrorEstimate { t: 0.0, mode: 0, eta: 0.0, residual_form: 2.0, gap: Some(0.5), lambda_red: 4.0 };
        assert_eq!(e.recombine(1.0), 1.0);
        let doubled = ErrorEstimate { gap: Some(1.0), ..e };
        assert_eq!(doubled.recombine(1.0), 0.5);
        assert!(ErrorEstimate { gap: None, ..e }.recombine(1.0).is_infinite());
    }

    #[test]
    fn equidistant_grid() {
        assert_eq!(equidistant(3), vec![0.0, 0.5, 1.0]);
        assert_eq!(equidistant(1), vec![0.0]);
        assert_eq!(*equidistant(100).last().unwrap(), 1.0);
    }
}
