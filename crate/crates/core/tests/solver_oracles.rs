use hwm_ruin::grid::{build_grid, DiscreteField, Grid, NodeKind};
use hwm_ruin::model::{self, Model};
use hwm_ruin::params::{AmbiguitySet, ControlSet, MarketParams};
use hwm_ruin::solver::{assemble_residual, assemble_residual_with, boundary_residuals, extract_policy, howard_solve, SolverConfig};
use hwm_ruin::verify;

fn no_invest() -> Model {
    let mut p = MarketParams::reference();
    p.control_set = ControlSet::zero();
    p.q = [0.0, 0.0];
    Model::new(p).unwrap()
}

fn frictionless_wide() -> Model {
    let mut p = MarketParams::reference();
    p.q = [0.0, 0.0];
    p.ambiguity_set = AmbiguitySet::Zero;
    p.control_set = ControlSet::symmetric_box(15.0, 31);
    Model::new(p).unwrap()
}

fn small_grid(m: &Model, nx: usize) -> Grid {
    build_grid(m, nx, 5, 5, [2.0, 2.0]).unwrap()
}

fn interior_sup(res: &[f64], g: &Grid) -> f64 {
    (0..g.len())
        .filter(|&n| g.kind(n) == NodeKind::Interior)
        .map(|n| res[n].abs())
        .fold(0.0, f64::max)
}

#[test]
fn sampled_no_invest_value_has_first_order_residual() {
    let m = no_invest();
    let mut prev = None;
    for nx in [41, 81, 161] {
        let g = small_grid(&m, nx);
        let f = DiscreteField::from_fn(&g, |z| model::no_invest_value(&m, z.x).unwrap());
        let r = assemble_residual(&f, &m, &g).unwrap();
        let e = interior_sup(&r.per_node, &g);
        if let Some(p) = prev {
            let ratio: f64 = p / e;
            assert!((1.7..2.3).contains(&ratio), "nx {nx}: ratio {ratio}");
        }
        prev = Some(e);
    }
}

#[test]
fn sampled_frictionless_value_residual_shrinks_with_refinement() {
    let m = frictionless_wide();
    let mut errs = Vec::new();
    for nx in [41, 81, 161] {
        let g = small_grid(&m, nx);
        let f = DiscreteField::from_fn(&g, |z| model::frictionless_value(&m, z.x).unwrap());
        let r = assemble_residual_with(&f, &m, &g, Some(121)).unwrap();
        errs.push(interior_sup(&r.per_node, &g));
    }
    assert!(errs[1] < 0.7 * errs[0] && errs[2] < 0.7 * errs[1], "{errs:?}");
}

#[test]
fn no_invest_solve_converges_at_first_order() {
    let m = no_invest();
    let cfg = SolverConfig::default();
    let mut errs = Vec::new();
    for nx in [41, 81, 161] {
        let g = small_grid(&m, nx);
        let sol = howard_solve(&m, &g, &cfg).unwrap();
        assert!(sol.report.converged);
        let e = (0..g.len())
            .map(|n| (sol.field.values[n] - model::no_invest_value(&m, g.state(n).x).unwrap()).abs())
            .fold(0.0, f64::max);
        errs.push(e);
        assert!(sol.policy.pi.iter().all(|p| *p == [0.0, 0.0]));
    }
    for w in errs.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!((0.7..1.3).contains(&order), "{errs:?}");
    }
}

#[test]
fn frictionless_solve_matches_closed_form_and_policy() {
    let m = frictionless_wide();
    let cfg = SolverConfig::default();
    let g = build_grid(&m, 81, 5, 5, [2.0, 2.0]).unwrap();
    let sol = howard_solve(&m, &g, &cfg).unwrap();
    assert!(sol.report.converged);
    let err = (0..g.len())
        .map(|n| (sol.field.values[n] - model::frictionless_value(&m, g.state(n).x).unwrap()).abs())
        .fold(0.0, f64::max);
    assert!(err < 2e-3, "{err}");
    // extracted positions within one lattice cell of π*(x) on the middle third
    let pol = extract_policy(&sol.field, &m, &g).unwrap();
    for i in g.nx / 3..2 * g.nx / 3 {
        let n = g.index(i, 2, 2);
        let exact = model::frictionless_policy(&m, g.x(i)).unwrap();
        for k in 0..2 {
            assert!((pol.pi[n][k] - exact[k]).abs() <= 1.0 + 1e-12, "x = {}: {:?} vs {exact:?}", g.x(i), pol.pi[n]);
        }
        assert_eq!(pol.theta[n], [0.0, 0.0]);
    }
    assert!(verify::y_variation(&sol.field, &g) < 1e-6);
}

#[test]
fn general_solve_satisfies_the_solver_contract() {
    let m = Model::new(MarketParams::reference()).unwrap();
    let g = build_grid(&m, 41, 9, 9, [10.0, 10.0]).unwrap();
    let cfg = SolverConfig::default();
    let sol = howard_solve(&m, &g, &cfg).unwrap();
    let r = &sol.report;
    assert!(r.converged, "{r:?}");
    assert!(r.diag_dominance_ok);
    for v in &sol.field.values {
        assert!((0.0..=1.0).contains(v));
    }
    assert!(verify::x_monotonicity_violation(&sol.field, &g) <= 1e-9);
    let again = assemble_residual(&sol.field, &m, &g).unwrap();
    assert!((again.stats.interior_sup - r.residual_interior).abs() <= 1e-12);
    assert!((again.stats.b1_sup - r.residual_b1).abs() <= 1e-12);
    assert!((again.stats.b2_sup - r.residual_b2).abs() <= 1e-12);
    let faces = boundary_residuals(&sol.field, &m, &g).unwrap();
    assert!(faces.b1_sup <= cfg.tol && faces.b2_sup <= cfg.tol && faces.corner_sup <= cfg.tol);
    assert_eq!(faces.ruin_sup, 0.0);
    assert_eq!(faces.safe_sup, 0.0);
    let (below, above) = verify::sandwich_violation(&sol.field, &m, &g);
    assert!(below <= 2e-2 && above <= 2e-2, "{below} {above}");
    for p in &sol.policy.pi {
        assert!(m.params.control_set.contains(*p));
    }
    // the residual record never rises after the first iteration without damping
    if !r.damping_engaged {
        for w in r.residual_history.windows(2).skip(1) {
            assert!(w[1] <= w[0] + cfg.inner_tol);
        }
    }
}

#[test]
fn zero_ambiguity_gives_zero_distortion() {
    let mut p = MarketParams::reference();
    p.ambiguity_set = AmbiguitySet::Zero;
    let m = Model::new(p).unwrap();
    let g = build_grid(&m, 21, 5, 5, [5.0, 5.0]).unwrap();
    let sol = howard_solve(&m, &g, &SolverConfig::default()).unwrap();
    assert!(sol.policy.theta.iter().all(|t| *t == [0.0, 0.0]));
}

#[test]
fn value_grows_with_epsilon() {
    let g_for = |m: &Model| build_grid(m, 31, 7, 7, [8.0, 8.0]).unwrap();
    let mut prev: Option<DiscreteField> = None;
    for eps in [1e-2, 1.0, 10.0] {
        let mut p = MarketParams::reference();
        p.epsilon = eps;
        let m = Model::new(p).unwrap();
        let g = g_for(&m);
        let sol = howard_solve(&m, &g, &SolverConfig::default()).unwrap();
        if let Some(prev) = &prev {
            for (a, b) in prev.values.iter().zip(&sol.field.values) {
                assert!(*b >= a - 1e-6, "eps {eps}: {b} < {a}");
            }
        }
        prev = Some(sol.field);
    }
}

#[test]
fn solve_is_bit_identical_across_thread_counts() {
    let m = Model::new(MarketParams::reference()).unwrap();
    let g = build_grid(&m, 31, 7, 7, [8.0, 8.0]).unwrap();
    let run = |t: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .unwrap()
            .install(|| howard_solve(&m, &g, &SolverConfig::default()).unwrap())
    };
    let a = run(1);
    for t in [4, 8] {
        let b = run(t);
        assert_eq!(a.field, b.field);
        assert_eq!(a.policy, b.policy);
        assert_eq!(a.report.residual_history, b.report.residual_history);
    }
}

#[test]
fn nonconvergence_is_flagged_not_an_error() {
    let m = Model::new(MarketParams::reference()).unwrap();
    let g = build_grid(&m, 21, 5, 5, [5.0, 5.0]).unwrap();
    let cfg = SolverConfig { max_iterations: 1, ..SolverConfig::default() };
    let sol = howard_solve(&m, &g, &cfg).unwrap();
    assert!(!sol.report.converged);
    assert_eq!(sol.report.stop_reason(), "iteration budget exhausted");
}
