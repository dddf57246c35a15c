//! Offline basis construction from a run configuration and the average-error study.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::Result;
use crate::gauge::GaugeStrategy;
use crate::greedy::{equidistant, greedy_extend, GreedyOutcome};
use crate::problem::Problem;
use crate::reduced::{collect_snapshots, initial_basis, ReducedBasis, SnapshotSet};

/// Relative margin below the smallest physical eigenvalue under which a reduced
/// eigenvalue is counted as spurious (gradient content).
pub const SPURIOUS_MARGIN: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct OfflineBuild {
    pub snapshots: SnapshotSet,
    pub outcome: GreedyOutcome,
}

/// Snapshots on `n_pod` equidistant parameters, POD to `n_init`, then greedy extension.
pub fn build_basis(problem: &Problem, cfg: &RunConfig, gauge: GaugeStrategy) -> Result<OfflineBuild> {
    let greedy = cfg.greedy_config(equidistant(cfg.n_train))?;
    greedy.validate()?;
    let snapshots = collect_snapshots(problem, &equidistant(cfg.n_pod), cfg.k, gauge, cfg.t_ref)?;
    let basis = initial_basis(problem, &snapshots, gauge, cfg.t_ref, cfg.n_init())?;
    let outcome = greedy_extend(problem, basis, &greedy)?;
    Ok(OfflineBuild { snapshots, outcome })
}

/// `n` uniform parameters in `[0, 1)` from a seeded ChaCha8 stream.
pub fn test_points(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen::<f64>()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorRow {
    pub basis_size: usize,
    /// 1-based mode index.
    pub mode: usize,
    /// `(1/#test) Σ (λ_red − λ) / λ`.
    pub mean_signed: f64,
    pub max_abs: f64,
    /// Largest number of spurious reduced eigenvalues at any test point.
    pub spurious: usize,
}

/// Average relative eigenvalue error of every basis prefix in `sizes` over `test`.
/// The `i`-th reduced eigenvalue is compared with the `i`-th high-fidelity one,
/// spurious values included, so contamination shows up as error.
pub fn error_study(problem: &Problem, basis: &ReducedBasis, sizes: &[usize], test: &[f64], k: usize) -> Result<Vec<ErrorRow>> {
    let sizes: Vec<usize> = sizes.iter().copied().filter(|&n| n >= k && n <= basis.len()).collect();
    let mut sum = vec![vec![0.0; k]; sizes.len()];
    let mut max_abs = vec![vec![0.0f64; k]; sizes.len()];
    let mut spurious = vec![0usize; sizes.len()];
    for &t in test {
        let hf = problem.solve_full(t, k)?;
        let floor = hf.lambdas[0] * (1.0 - SPURIOUS_MARGIN);
        let full = crate::reduced::ReducedSystem::new(problem, basis, t)?;
        for (s, &n) in sizes.iter().enumerate() {
            let red = full.leading(n).solve()?;
            spurious[s] = spurious[s].max(red.lambdas.iter().filter(|&&l| l < floor).count());
            for i in 0..k {
                let rel = (red.lambdas[i] - hf.lambdas[i]) / hf.lambdas[i];
                sum[s][i] += rel;
                max_abs[s][i] = max_abs[s][i].max(rel.abs());
            }
        }
    }
    let count = test.len().max(1) as f64;
    Ok(sizes
        .iter()
        .enumerate()
        .flat_map(|(s, &n)| {
            let (sum, max_abs, spurious) = (&sum, &max_abs, &spurious);
            (0..k).map(move |i| ErrorRow {
                basis_size: n,
                mode: i + 1,
                mean_signed: sum[s][i] / count,
                max_abs: max_abs[s][i],
                spurious: spurious[s],
            })
        })
        .collect())
}

pub fn write_error_csv<W: std::io::Write>(rows: &[ErrorRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["basis_size", "mode", "mean_signed_error", "max_abs_error", "spurious"])?;
    for r in rows {
        out.write_record([
            r.basis_size.to_string(),
            r.mode.to_string(),
            format!("{:.16e}", r.mean_signed),
            format!("{:.16e}", r.max_abs),
            r.spurious.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
