use std::sync::OnceLock;

use faer::Mat;
use proptest::prelude::*;

use rb_maxwell::discretization::{MappingFamily, ReferenceMesh};
use rb_maxwell::eigensolve::DEFAULT_NULL_TOL;
use rb_maxwell::gauge::{GaugeStrategy, GradDivProjector};
use rb_maxwell::problem::Problem;
use rb_maxwell::reduced::{collect_snapshots, initial_basis, ReducedBasis, ReducedSystem};

struct Fixture {
    problem: Problem,
    tree_cotree: ReducedBasis,
    gram_schmidt: ReducedBasis,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let mesh = ReferenceMesh::new(5).unwrap();
        let problem = Problem::new(mesh, MappingFamily::sine_bump(0.3).unwrap(), DEFAULT_NULL_TOL, 1e-4).unwrap();
        let params = [0.0, 0.25, 0.5, 0.75, 1.0];
        let build = |gauge| {
            let snaps = collect_snapshots(&problem, &params, 4, gauge, 0.0).unwrap();
            initial_basis(&problem, &snaps, gauge, 0.0, 8).unwrap()
        };
        let tree_cotree = build(GaugeStrategy::TreeCotree);
        let gram_schmidt = build(GaugeStrategy::GramSchmidt);
        Fixture { problem, tree_cotree, gram_schmidt }
    })
}

fn gram(basis: &ReducedBasis, p: &Problem) -> Mat<f64> {
    let m = p.inner_product(basis.gauge, basis.t_ref).unwrap();
    basis.z.transpose() * m.apply_mat(basis.z.as_ref())
}

#[test]
fn bases_are_orthonormal_in_their_inner_product() {
    let f = fixture();
    for basis in [&f.tree_cotree, &f.gram_schmidt] {
        let g = gram(basis, &f.problem);
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((g[(i, j)] - target).abs() < 1e-10, "{:?} entry ({i},{j}) = {}", basis.gauge, g[(i, j)]);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn tree_cotree_reduced_eigenvalues_bound_from_above(t in 0.0f64..=1.0) {
        let f = fixture();
        let hf = f.problem.solve_full(t, 4).unwrap();
        let red = ReducedSystem::new(&f.problem, &f.tree_cotree, t).unwrap().solve().unwrap();
        for i in 0..4 {
            prop_assert!(red.lambdas[i] >= hf.lambdas[i] * (1.0 - 1e-10), "mode {i}: {} < {}", red.lambdas[i], hf.lambdas[i]);
        }
    }

    #[test]
    fn leading_subspaces_are_monotone(t in 0.0f64..=1.0, n in 4usize..8) {
        let f = fixture();
        let sys = ReducedSystem::new(&f.problem, &f.tree_cotree, t).unwrap();
        let small = sys.leading(n).solve().unwrap();
        let large = sys.leading(n + 1).solve().unwrap();
        for i in 0..small.len().min(3) {
            prop_assert!(large.lambdas[i] <= small.lambdas[i] * (1.0 + 1e-10));
        }
    }

    #[test]
    fn cotree_and_full_spectra_agree(t in 0.0f64..=1.0) {
        let f = fixture();
        let full = f.problem.solve_full(t, 6).unwrap();
        let (cot, _) = f.problem.solve_cotree(t, 6).unwrap();
        for i in 0..6 {
            prop_assert!(((full.lambdas[i] - cot.lambdas[i]) / full.lambdas[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn projector_is_idempotent_and_kills_gradients(t in 0.0f64..=1.0, seed in proptest::collection::vec(-1.0f64..1.0, 8)) {
        let f = fixture();
        let p = &f.problem;
        let s = p.system(t).unwrap();
        let proj = GradDivProjector::new(&p.g, &s.c).unwrap();
        let n = p.n_curl();
        let x = Mat::from_fn(n, 1, |i, _| seed[i % seed.len()] * (1.0 + i as f64).sin());
        let px = proj.project(x.as_ref());
        let ppx = proj.project(px.as_ref());
        let scale = (0..n).map(|i| px[(i, 0)].abs()).fold(1e-300, f64::max);
        for i in 0..n {
            prop_assert!((ppx[(i, 0)] - px[(i, 0)]).abs() <= 1e-12 * scale);
        }
        let g = p.g.to_dense();
        let pg = proj.project(g.as_ref());
        for j in 0..pg.ncols() {
            for i in 0..n {
                prop_assert!(pg[(i, j)].abs() <= 1e-12);
            }
        }
    }
}
