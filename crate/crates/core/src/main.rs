use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde_json::json;

use rb_maxwell::analytic::classify;
use rb_maxwell::bench::run_bench;
use rb_maxwell::check::structure_check;
use rb_maxwell::config::RunConfig;
use rb_maxwell::eigensolve::frequency;
use rb_maxwell::gauge::GaugeStrategy;
use rb_maxwell::pipeline::{
    bench_basis, build_summary, create, run_pipeline, trace_summary, write_build, write_json,
};
use rb_maxwell::problem::Problem;
use rb_maxwell::reduced::ReducedBasis;
use rb_maxwell::study::{build_basis, error_study, test_points, write_error_csv};
use rb_maxwell::tracking::{track_and_classify, CotreeModel, EigenModel, FullModel, ReducedModel};
use rb_maxwell::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "rb-maxwell", version, about = "Reduced-basis eigenvalue tracking for the 2D curl-curl cavity problem")]
struct Cli {
    /// TOML run configuration (defaults are used when omitted).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overrides `out_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Random seed for the test set, overrides `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Gauge strategy, overrides `gauge`: none, gram-schmidt, projection, tree-cotree.
    #[arg(long, global = true)]
    gauge: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum System {
    /// Ungauged high-fidelity pencil.
    Full,
    /// Tree-cotree condensed high-fidelity pencil.
    Cotree,
    /// Reduced basis (built from the configuration or read with --basis).
    Rb,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Structural checks of the assembled system.
    Check {
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.5, 1.0])]
        t: Vec<f64>,
    },
    /// One eigenvalue solve.
    Solve {
        #[arg(long, default_value_t = 0.0)]
        t: f64,
        #[arg(long, value_enum, default_value_t = System::Full)]
        system: System,
    },
    /// POD and greedy basis construction.
    BuildRb,
    /// Eigenvalue tracking over t in [0, 1].
    Track {
        #[arg(long, value_enum, default_value_t = System::Rb)]
        system: System,
        /// Basis artifact written by build-rb.
        #[arg(long)]
        basis: Option<PathBuf>,
    },
    /// Average eigenvalue error against basis size on seeded random test points.
    ErrorStudy,
    /// Timing of one solve and one tracking run for the four solver variants.
    Bench,
    /// Every stage with a manifest.
    Pipeline,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(g) = &cli.gauge {
        cfg.gauge = g.parse()?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read_basis(path: &Path) -> Result<ReducedBasis> {
    let file = std::fs::File::open(path).map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?;
    ReducedBasis::read_text(std::io::BufReader::new(file))
}

fn cmd_check(problem: &Problem, cfg: &RunConfig, ts: &[f64]) -> Result<()> {
    let checks = ts.iter().map(|&t| structure_check(problem, t)).collect::<Result<Vec<_>>>()?;
    for c in &checks {
        println!(
            "t = {:.4}: |AG| {:.2e}, |C - BG| {:.2e}, null dim {} (n_grad {}), cotree {} = {} - {}: {}",
            c.t,
            c.stiffness_on_gradients,
            c.gradient_identity,
            c.null_dim,
            c.n_grad,
            c.n_cotree,
            c.n_curl,
            c.n_grad,
            if c.passes() { "ok" } else { "FAILED" }
        );
    }
    write_json(&cfg.out_dir.join("check.json"), &checks)?;
    match checks.iter().find(|c| !c.passes()) {
        Some(c) => Err(Error::CheckFailed(format!("t = {}", c.t))),
        None => Ok(()),
    }
}

fn cmd_solve(problem: &Problem, cfg: &RunConfig, t: f64, system: System) -> Result<()> {
    let sol = match system {
        System::Full => problem.solve_full(t, cfg.k)?,
        System::Cotree => problem.solve_cotree(t, cfg.k)?.0,
        System::Rb => return Err(Error::Config("solve supports --system full or cotree".into())),
    };
    let labels = if problem.family.is_affine() {
        let sys = problem.system(t)?;
        let vectors: Vec<Vec<f64>> = match system {
            System::Cotree => {
                let cs = problem.condense(t)?;
                (0..sol.len()).map(|i| cs.expand(&sol.vector(i))).collect()
            }
            _ => (0..sol.len()).map(|i| sol.vector(i)).collect(),
        };
        classify(&problem.mesh, problem.family.stretch(t), &sol.lambdas, &vectors, &sys.b)?
    } else {
        vec![None; sol.len()]
    };
    let path = cfg.out_dir.join("solve.csv");
    let mut out = csv::Writer::from_writer(create(&path)?);
    out.write_record(["index", "lambda", "freq", "label"])?;
    for (i, l) in sol.lambdas.iter().enumerate() {
        let label = labels[i].map_or(String::new(), |c| c.mode.to_string());
        println!("{i:>3}  {l:>22.16e}  {label}");
        out.write_record([i.to_string(), format!("{l:.16e}"), format!("{:.16e}", frequency(*l)), label])?;
    }
    out.flush()?;
    Ok(())
}

fn cmd_track(problem: &Problem, cfg: &RunConfig, system: System, basis_path: Option<&Path>) -> Result<()> {
    let tracking = cfg.tracking_config();
    let basis = match (system, basis_path) {
        (System::Rb, Some(p)) => Some(read_basis(p)?),
        (System::Rb, None) => {
            let build = build_basis(problem, cfg, cfg.gauge)?;
            write_build(&build, &cfg.out_dir, "basis")?;
            Some(build.outcome.basis)
        }
        _ => None,
    };
    let full = FullModel { problem };
    let cotree = CotreeModel { problem };
    let model: Box<dyn EigenModel + '_> = match (&basis, system) {
        (Some(b), _) => Box::new(ReducedModel { problem, basis: b }),
        (None, System::Cotree) => Box::new(cotree),
        _ => Box::new(full),
    };
    let trace = track_and_classify(problem, model.as_ref(), &tracking)?;
    let mut w = create(&cfg.out_dir.join("trace.csv"))?;
    trace.write_csv(&mut w)?;
    w.flush()?;
    write_json(&cfg.out_dir.join("trace.json"), &trace_summary(&trace))?;
    for c in &trace.crossings {
        println!("crossing of {} and {} near t = {:.4}", trace.mode_label(c.first), trace.mode_label(c.second), c.t_estimate);
    }
    let last = trace.last();
    for k in 0..trace.k {
        println!("{:>6}  lambda(t = {:.3}) = {:.12e}", trace.mode_label(k), last.t, last.lambdas[k]);
    }
    if !trace.is_complete() {
        return Err(Error::Tracking { t: last.t, reason: format!("{:?}", trace.status) });
    }
    Ok(())
}

fn cmd_error_study(problem: &Problem, cfg: &RunConfig) -> Result<()> {
    let build = build_basis(problem, cfg, cfg.gauge)?;
    write_build(&build, &cfg.out_dir, "basis")?;
    let test = test_points(cfg.n_test, cfg.seed);
    let rows = error_study(problem, &build.outcome.basis, &build.outcome.sizes, &test, cfg.k)?;
    let mut w = create(&cfg.out_dir.join("error_study.csv"))?;
    write_error_csv(&rows, &mut w)?;
    w.flush()?;
    for r in rows.iter().filter(|r| r.basis_size == build.outcome.basis.len()) {
        println!("N = {}, mode {}: mean signed {:.3e}, max abs {:.3e}", r.basis_size, r.mode, r.mean_signed, r.max_abs);
    }
    if let Some(r) = rows.iter().find(|r| r.spurious > 0) {
        warn!("spurious reduced eigenvalues present (first at N = {})", r.basis_size);
    }
    Ok(())
}

fn cmd_bench(problem: &Problem, cfg: &RunConfig) -> Result<()> {
    let primary = build_basis(problem, cfg, cfg.gauge)?;
    let basis = &primary.outcome.basis;
    let tc = bench_basis(problem, cfg, basis, GaugeStrategy::TreeCotree)?;
    let gs = bench_basis(problem, cfg, basis, GaugeStrategy::GramSchmidt)?;
    info!("bench bases: primary {}", build_summary(&primary));
    let report = run_bench(
        problem,
        tc.as_ref().map_or(basis, |b| &b.outcome.basis),
        gs.as_ref().map_or(basis, |b| &b.outcome.basis),
        &cfg.tracking_config(),
        0.5,
        cfg.bench_reps,
    );
    write_json(&cfg.out_dir.join("bench.json"), &report)?;
    println!("{:<26} {:>6} {:>12} {:>9} {:>12} {:>9}", "system", "dofs", "evp [s]", "speedup", "track [s]", "speedup");
    for r in &report.rows {
        match (&r.evp, &r.tracking) {
            (Some(e), Some(t)) => println!(
                "{:<26} {:>6} {:>12.4e} {:>9.2} {:>12.4e} {:>9.2}",
                r.label,
                r.dof_count,
                e.median_s,
                r.evp_speedup.unwrap_or(f64::NAN),
                t.median_s,
                r.tracking_speedup.unwrap_or(f64::NAN)
            ),
            _ => println!("{:<26} {:>6} failed: {}", r.label, r.dof_count, r.failure.as_deref().unwrap_or("?")),
        }
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    if let Command::Pipeline = cli.command {
        let manifest = run_pipeline(&cfg)?;
        for s in &manifest.stages {
            println!("{:<12} {:?}", s.name, s.status);
        }
        return match manifest.failure() {
            Some(s) => Err(Error::Stage { stage: s.name.clone(), message: s.error.clone().unwrap_or_default() }),
            None => Ok(()),
        };
    }
    let problem = cfg.problem()?;
    match &cli.command {
        Command::Check { t } => cmd_check(&problem, &cfg, t),
        Command::Solve { t, system } => cmd_solve(&problem, &cfg, *t, *system),
        Command::BuildRb => {
            let build = build_basis(&problem, &cfg, cfg.gauge)?;
            write_build(&build, &cfg.out_dir, "basis")?;
            let summary = build_summary(&build);
            write_json(&cfg.out_dir.join("build.json"), &json!({ "config": cfg, "build": summary }))?;
            println!("{summary}");
            Ok(())
        }
        Command::Track { system, basis } => cmd_track(&problem, &cfg, *system, basis.as_deref()),
        Command::ErrorStudy => cmd_error_study(&problem, &cfg),
        Command::Bench => cmd_bench(&problem, &cfg),
        Command::Pipeline => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
