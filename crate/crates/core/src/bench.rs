//! Timing comparison of high-fidelity and reduced solvers: one eigenvalue solve
//! and one full tracking run per variant. Assembly (matrices and their
//! parameter derivatives) and offline basis construction are excluded.

use std::time::{Duration, Instant};

use serde::Serialize;

use crate::error::Result;
use crate::problem::Problem;
use crate::reduced::{ReducedBasis, ReducedSystem};
use crate::tracking::{track, CotreeModel, EigenModel, FullModel, ReducedModel, TrackingConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    HighFidelity,
    HighFidelityCotree,
    ReducedTreeCotree,
    ReducedGramSchmidt,
}

impl Variant {
    pub fn label(&self) -> &'static str {
        match self {
            Variant::HighFidelity => "high-fidelity (no gauge)",
            Variant::HighFidelityCotree => "high-fidelity (cotree)",
            Variant::ReducedTreeCotree => "rb (tree-cotree)",
            Variant::ReducedGramSchmidt => "rb (gram-schmidt)",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Timing {
    pub median_s: f64,
    pub mean_s: f64,
    pub samples_s: Vec<f64>,
}

impl Timing {
    fn from_samples(samples: Vec<Duration>) -> Self {
        let s: Vec<f64> = samples.iter().map(Duration::as_secs_f64).collect();
        let mean_s = s.iter().sum::<f64>() / s.len().max(1) as f64;
        let mut sorted = s.clone();
        sorted.sort_by(f64::total_cmp);
        let m = sorted.len();
        let median_s = if m == 0 {
            f64::NAN
        } else if m % 2 == 1 {
            sorted[m / 2]
        } else {
            0.5 * (sorted[m / 2 - 1] + sorted[m / 2])
        };
        Self { median_s, mean_s, samples_s: s }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub variant: Variant,
    pub label: String,
    pub dof_count: usize,
    pub evp: Option<Timing>,
    pub tracking: Option<Timing>,
    /// Reference median over this median, reference being the ungauged high-fidelity system.
    pub evp_speedup: Option<f64>,
    pub tracking_speedup: Option<f64>,
    pub tracking_steps: Option<usize>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub n_curl: usize,
    pub t_evp: f64,
    pub repetitions: usize,
    pub warmup_runs: usize,
    pub aggregation: String,
    pub excluded: String,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn row(&self, v: Variant) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.variant == v)
    }
}

fn time<T>(f: impl FnOnce() -> Result<T>) -> Result<(Duration, T)> {
    let start = Instant::now();
    let out = f()?;
    Ok((start.elapsed(), out))
}

struct Samples {
    evp: Vec<Duration>,
    tracking: Vec<Duration>,
    steps: usize,
}

fn run_variant(
    problem: &Problem,
    model: &dyn EigenModel,
    evp: &dyn Fn() -> Result<()>,
    tracking: &TrackingConfig,
    t_evp: f64,
    reps: usize,
) -> Result<Samples> {
    // warm-up, discarded; it also yields the parameters the tracker visits
    problem.warm(&[t_evp], false)?;
    evp()?;
    let trace = track(model, tracking)?;
    let mut ts: Vec<f64> = trace.steps.iter().map(|s| s.t).collect();
    ts.push(t_evp);
    let mut out = Samples { evp: Vec::with_capacity(reps), tracking: Vec::with_capacity(reps), steps: trace.steps.len() };
    for _ in 0..reps {
        // fresh systems so factorizations are rebuilt inside the timed region
        problem.clear_cache();
        problem.warm(&ts, true)?;
        out.evp.push(time(evp)?.0);
        problem.clear_cache();
        problem.warm(&ts, true)?;
        out.tracking.push(time(|| track(model, tracking))?.0);
    }
    Ok(out)
}

/// Runs all four variants single-threaded. A failing variant is reported with
/// its error and the others still run.
pub fn run_bench(
    problem: &Problem,
    tree_cotree: &ReducedBasis,
    gram_schmidt: &ReducedBasis,
    tracking: &TrackingConfig,
    t_evp: f64,
    reps: usize,
) -> BenchReport {
    let previous = faer::get_global_parallelism();
    faer::set_global_parallelism(faer::Par::Seq);
    let k = tracking.k;
    let full = FullModel { problem };
    let cotree = CotreeModel { problem };
    let rb_tc = ReducedModel { problem, basis: tree_cotree };
    let rb_gs = ReducedModel { problem, basis: gram_schmidt };
    let reduced_evp = |basis: &ReducedBasis| ReducedSystem::new(problem, basis, t_evp)?.solve().map(|_| ());
    let cases: [(Variant, &dyn EigenModel, Box<dyn Fn() -> Result<()>>); 4] = [
        (Variant::HighFidelity, &full, Box::new(|| problem.solve_full(t_evp, k).map(|_| ()))),
        (Variant::HighFidelityCotree, &cotree, Box::new(|| problem.solve_cotree(t_evp, k).map(|_| ()))),
        (Variant::ReducedTreeCotree, &rb_tc, Box::new(|| reduced_evp(tree_cotree))),
        (Variant::ReducedGramSchmidt, &rb_gs, Box::new(|| reduced_evp(gram_schmidt))),
    ];
    let mut rows: Vec<BenchRow> = cases
        .iter()
        .map(|(variant, model, evp)| {
            let mut row = BenchRow {
                variant: *variant,
                label: variant.label().into(),
                dof_count: model.dim(),
                evp: None,
                tracking: None,
                evp_speedup: None,
                tracking_speedup: None,
                tracking_steps: None,
                failure: None,
            };
            match run_variant(problem, *model, evp.as_ref(), tracking, t_evp, reps) {
                Ok(s) => {
                    row.evp = Some(Timing::from_samples(s.evp));
                    row.tracking = Some(Timing::from_samples(s.tracking));
                    row.tracking_steps = Some(s.steps);
                }
                Err(e) => {
                    log::warn!("bench variant `{}` failed: {e}", variant.label());
                    row.failure = Some(e.to_string());
                }
            }
            row
        })
        .collect();
    faer::set_global_parallelism(previous);

    let reference = rows.first().map(|r| (r.evp.as_ref().map(|t| t.median_s), r.tracking.as_ref().map(|t| t.median_s)));
    if let Some((ref_evp, ref_track)) = reference {
        for row in &mut rows {
            row.evp_speedup = ref_evp.zip(row.evp.as_ref()).map(|(r, t)| r / t.median_s);
            row.tracking_speedup = ref_track.zip(row.tracking.as_ref()).map(|(r, t)| r / t.median_s);
        }
    }
    BenchReport {
        n_curl: problem.n_curl(),
        t_evp,
        repetitions: reps,
        warmup_runs: 1,
        aggregation: "median (headline) and mean of the timed repetitions; speedup from medians".into(),
        excluded: "system matrix assembly, finite-difference matrix derivatives, offline basis construction".into(),
        rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timing_statistics() {
        let t = Timing::from_samples(vec![Duration::from_secs(3), Duration::from_secs(1), Duration::from_secs(2)]);
        assert_eq!(t.median_s, 2.0);
        assert_eq!(t.mean_s, 2.0);
        let t = Timing::from_samples(vec![Duration::from_secs(1), Duration::from_secs(4)]);
        assert_eq!(t.median_s, 2.5);
    }
}
