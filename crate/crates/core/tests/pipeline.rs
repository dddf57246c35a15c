use rb_maxwell::config::RunConfig;
use rb_maxwell::pipeline::{run_pipeline, StageStatus};

fn small(out: &std::path::Path) -> RunConfig {
    RunConfig {
        mesh_n: 4,
        k: 3,
        tau: 1,
        n_init: Some(6),
        n_pod: 6,
        n_train: 8,
        n_test: 5,
        n_max: 12,
        h: 0.1,
        bench_reps: 3,
        out_dir: out.to_path_buf(),
        ..RunConfig::default()
    }
}

#[test]
fn pipeline_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let ma = run_pipeline(&small(&a)).unwrap();
    let mb = run_pipeline(&small(&b)).unwrap();
    assert!(ma.succeeded(), "{:?}", ma.failure());
    assert!(ma.stages.iter().all(|s| s.status == StageStatus::Ok));
    assert_eq!(ma.stages, mb.stages);
    for file in ["basis.txt", "basis_greedy_log.csv", "trace.csv", "error_study.csv"] {
        let x = std::fs::read(a.join(file)).unwrap();
        let y = std::fs::read(b.join(file)).unwrap();
        assert!(x == y, "{file} differs between runs");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["schema"], "rb-maxwell-manifest/1");
    assert!(a.join("bench.json").exists());
}

#[test]
fn ungauged_run_warns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig { gauge: "none".parse().unwrap(), ..small(dir.path()) };
    let m = run_pipeline(&cfg).unwrap();
    assert!(!m.warnings.is_empty());
}
