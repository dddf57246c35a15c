//! End-to-end run: snapshots, POD, greedy, basis artifact, tracking with
//! endpoint classification, error study and benchmark, plus a manifest.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::warn;
use serde::Serialize;
use serde_json::{json, Value};

use crate::bench::run_bench;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::gauge::GaugeStrategy;
use crate::greedy::GreedyLogEntry;
use crate::problem::Problem;
use crate::reduced::ReducedBasis;
use crate::study::{build_basis, error_study, test_points, write_error_csv, OfflineBuild};
use crate::tracking::{track_and_classify, ReducedModel, TrackingTrace};

pub const MANIFEST_SCHEMA: &str = "rb-maxwell-manifest/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageStatus {
    Ok,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageRecord {
    pub name: String,
    pub status: StageStatus,
    pub artifacts: Vec<String>,
    pub summary: Value,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub schema: String,
    pub config: RunConfig,
    pub warnings: Vec<String>,
    pub stages: Vec<StageRecord>,
}

impl Manifest {
    pub fn succeeded(&self) -> bool {
        self.stages.iter().all(|s| s.status == StageStatus::Ok)
    }

    pub fn failure(&self) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.status == StageStatus::Failed)
    }
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn write_greedy_log<W: Write>(log: &[GreedyLogEntry], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["iteration", "t_star", "mode_star", "max_eta", "basis_size", "cluster_size", "appended", "skipped"])?;
    for e in log {
        out.write_record([
            e.iteration.to_string(),
            format!("{:.16e}", e.t_star),
            e.mode_star.to_string(),
            format!("{:.16e}", e.max_eta),
            e.basis_size.to_string(),
            e.cluster_size.to_string(),
            e.appended.to_string(),
            e.skipped.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Writes the basis artifact and the greedy log into `dir`; returns the file names.
pub fn write_build(build: &OfflineBuild, dir: &Path, stem: &str) -> Result<Vec<String>> {
    let basis_name = format!("{stem}.txt");
    let log_name = format!("{stem}_greedy_log.csv");
    let mut w = create(&dir.join(&basis_name))?;
    build.outcome.basis.write_text(&mut w)?;
    w.flush()?;
    let mut w = create(&dir.join(&log_name))?;
    write_greedy_log(&build.outcome.log, &mut w)?;
    w.flush()?;
    Ok(vec![basis_name, log_name])
}

pub fn build_summary(build: &OfflineBuild) -> Value {
    json!({
        "snapshots": build.snapshots.info.len(),
        "snapshots_dropped": build.snapshots.dropped.len(),
        "status": build.outcome.status,
        "basis_size": build.outcome.basis.len(),
        "iterations": build.outcome.log.len(),
        "final_max_eta": build.outcome.final_max_eta,
    })
}

pub fn trace_summary(trace: &TrackingTrace) -> Value {
    json!({
        "model": trace.model,
        "status": trace.status,
        "steps": trace.steps.len(),
        "crossings": trace.crossings,
        "endpoint_lambdas": trace.last().lambdas,
        "endpoint_labels": (0..trace.k).map(|k| trace.mode_label(k)).collect::<Vec<_>>(),
    })
}

/// Basis of `gauge` for the benchmark: the primary one when it matches, otherwise
/// built with the same budget but capped at the size of the primary basis.
pub fn bench_basis(problem: &Problem, cfg: &RunConfig, primary: &ReducedBasis, gauge: GaugeStrategy) -> Result<Option<OfflineBuild>> {
    if primary.gauge == gauge {
        return Ok(None);
    }
    let capped = RunConfig { n_max: primary.len().max(cfg.n_init()), ..cfg.clone() };
    build_basis(problem, &capped, gauge).map(Some)
}

struct Runner {
    stages: Vec<StageRecord>,
    failed: bool,
}

impl Runner {
    fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> Result<(T, Vec<String>, Value)>) -> Option<T> {
        if self.failed {
            self.stages.push(StageRecord {
                name: name.into(),
                status: StageStatus::Skipped,
                artifacts: Vec::new(),
                summary: Value::Null,
                error: None,
            });
            return None;
        }
        match f() {
            Ok((value, artifacts, summary)) => {
                self.stages.push(StageRecord { name: name.into(), status: StageStatus::Ok, artifacts, summary, error: None });
                Some(value)
            }
            Err(e) => {
                warn!("stage `{name}` failed: {e}");
                self.failed = true;
                self.stages.push(StageRecord {
                    name: name.into(),
                    status: StageStatus::Failed,
                    artifacts: Vec::new(),
                    summary: Value::Null,
                    error: Some(e.to_string()),
                });
                None
            }
        }
    }
}

/// Runs every stage into `cfg.out_dir` and writes `manifest.json`. Stage
/// failures are recorded in the manifest and later stages are skipped.
pub fn run_pipeline(cfg: &RunConfig) -> Result<Manifest> {
    cfg.validate()?;
    let dir: PathBuf = cfg.out_dir.clone();
    std::fs::create_dir_all(&dir)?;
    let mut warnings = Vec::new();
    if cfg.gauge == GaugeStrategy::None {
        let msg = "gauge = none: snapshots may contain spurious gradient content; see the spurious column of the error study";
        warn!("{msg}");
        warnings.push(msg.to_string());
    }
    let problem = cfg.problem()?;
    let mut run = Runner { stages: Vec::new(), failed: false };

    let build = run.stage("build-rb", || {
        let build = build_basis(&problem, cfg, cfg.gauge)?;
        let files = write_build(&build, &dir, "basis")?;
        let summary = build_summary(&build);
        Ok((build, files, summary))
    });

    let tracking = cfg.tracking_config();
    run.stage("track", || {
        let basis = &build.as_ref().ok_or_else(|| Error::InvalidInput("no basis".into()))?.outcome.basis;
        let trace = track_and_classify(&problem, &ReducedModel { problem: &problem, basis }, &tracking)?;
        let mut w = create(&dir.join("trace.csv"))?;
        trace.write_csv(&mut w)?;
        w.flush()?;
        if !trace.is_complete() {
            return Err(Error::Tracking { t: trace.last().t, reason: format!("{:?}", trace.status) });
        }
        Ok(((), vec!["trace.csv".into()], trace_summary(&trace)))
    });

    run.stage("error-study", || {
        let outcome = &build.as_ref().ok_or_else(|| Error::InvalidInput("no basis".into()))?.outcome;
        let test = test_points(cfg.n_test, cfg.seed);
        let rows = error_study(&problem, &outcome.basis, &outcome.sizes, &test, cfg.k)?;
        let mut w = create(&dir.join("error_study.csv"))?;
        write_error_csv(&rows, &mut w)?;
        w.flush()?;
        let final_rows: Vec<_> = rows.iter().filter(|r| r.basis_size == outcome.basis.len()).collect();
        let summary = json!({
            "test_points": test.len(),
            "basis_sizes": outcome.sizes,
            "final_mean_signed": final_rows.iter().map(|r| r.mean_signed).collect::<Vec<_>>(),
            "final_max_abs": final_rows.iter().map(|r| r.max_abs).collect::<Vec<_>>(),
            "spurious": rows.iter().map(|r| r.spurious).max().unwrap_or(0),
        });
        Ok(((), vec!["error_study.csv".into()], summary))
    });

    run.stage("bench", || {
        let primary = &build.as_ref().ok_or_else(|| Error::InvalidInput("no basis".into()))?.outcome.basis;
        let tc_build = bench_basis(&problem, cfg, primary, GaugeStrategy::TreeCotree)?;
        let gs_build = bench_basis(&problem, cfg, primary, GaugeStrategy::GramSchmidt)?;
        let mut files = Vec::new();
        let mut companions = Vec::new();
        for (build, stem) in [(&tc_build, "bench_basis_tree_cotree"), (&gs_build, "bench_basis_gram_schmidt")] {
            if let Some(b) = build {
                files.extend(write_build(b, &dir, stem)?);
                companions.push(build_summary(b));
            }
        }
        let tc = tc_build.as_ref().map_or(primary, |b| &b.outcome.basis);
        let gs = gs_build.as_ref().map_or(primary, |b| &b.outcome.basis);
        let report = run_bench(&problem, tc, gs, &tracking, 0.5, cfg.bench_reps);
        write_json(&dir.join("bench.json"), &report)?;
        files.push("bench.json".into());
        // timings stay out of the manifest so it is reproducible
        let summary = json!({
            "companions": companions,
            "variants": report.rows.iter().map(|r| json!({"label": r.label, "dof_count": r.dof_count, "failure": r.failure})).collect::<Vec<_>>(),
        });
        Ok(((), files, summary))
    });

    let manifest = Manifest { schema: MANIFEST_SCHEMA.into(), config: cfg.clone(), warnings, stages: run.stages };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}
