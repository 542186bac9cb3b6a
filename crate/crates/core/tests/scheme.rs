mod common;

use common::OdeProfile;
use subelliptic::grid::{Grid, GridFunction};
use subelliptic::scheme::{
    check_energy_comparison, default_probe, doubling_schedule, interior_lower_bound, level_set_measure, run_scheme,
    solve_approximated, solve_auxiliary, weak_residual, LimitMode, SchemeOptions,
};
use subelliptic::sobolev::random_tests;
use subelliptic::variational::truncate_source;
use subelliptic::{DomainShape, Error, GroupSpec, HorizontalCalculus, ProblemSpec, SolverConfig};

fn line(res: usize) -> HorizontalCalculus {
    let grid = Grid::boxed(&[0.0], &[1.0], &[res]).unwrap();
    HorizontalCalculus::new(grid, GroupSpec::euclidean(1).unwrap()).unwrap()
}

fn unit_problem(res: usize, scale: f64) -> ProblemSpec {
    let calc = line(res);
    let f = GridFunction::constant(calc.grid(), scale);
    ProblemSpec::new(calc, 2.0, 0.5, f).unwrap()
}

fn ode_error(prob: &ProblemSpec, u: &GridFunction, ode: &OdeProfile, scale: f64) -> f64 {
    (0..prob.grid().len())
        .map(|k| (u.values()[k] - scale * ode.value(prob.grid().node(k)[0])).abs())
        .fold(0.0, f64::max)
}

#[test]
fn schedule_examples() {
    assert_eq!(doubling_schedule(1024).len(), 11);
    assert_eq!(doubling_schedule(64), vec![1, 2, 4, 8, 16, 32, 64]);
    assert_eq!(doubling_schedule(1), vec![1]);
    assert_eq!(doubling_schedule(12), vec![1, 2, 4, 8, 12]);
}

#[test]
fn truncation_examples() {
    let calc = line(9);
    let f = GridFunction::from_fn(calc.grid(), |x| 10.0 * x[0]);
    assert_eq!(truncate_source(&GridFunction::constant(calc.grid(), 5.0), 3).max(), 3.0);
    assert_eq!(truncate_source(&GridFunction::constant(calc.grid(), 1.0), 3).max(), 1.0);
    for n in 1..12 {
        let (a, b) = (truncate_source(&f, n), truncate_source(&f, n + 1));
        assert!(a
            .values()
            .iter()
            .zip(b.values())
            .zip(f.values())
            .all(|((x, y), z)| x <= y && y <= z));
    }
}

#[test]
fn auxiliary_matches_parabola() {
    // the 3-point stencil is exact on quadratics, so only solver error remains
    let cfg = SolverConfig::default();
    for res in [17, 33] {
        let prob = unit_problem(res, 1.0);
        let u = solve_auxiliary(&prob, prob.source(), &cfg).unwrap();
        let exact = GridFunction::from_fn(prob.grid(), |x| x[0] * (1.0 - x[0]) / 2.0);
        assert!(u.max_abs_diff(&exact) < 1e-9, "res {res}: {}", u.max_abs_diff(&exact));
        assert!((u.max() - 0.125).abs() < 1e-9);
        assert!(u.min() > 0.0);
    }
}

#[test]
fn auxiliary_is_linear_at_p2_and_rejects_zero() {
    let cfg = SolverConfig::default();
    let prob = unit_problem(33, 1.0);
    let g = GridFunction::from_fn(prob.grid(), |x| 1.0 + x[0] * x[0]);
    let u = solve_auxiliary(&prob, &g, &cfg).unwrap();
    let u2 = solve_auxiliary(&prob, &g.scaled(2.0), &cfg).unwrap();
    assert!(u2.max_abs_diff(&u.scaled(2.0)) < 1e-8);
    let zero = GridFunction::zeros(prob.grid());
    assert!(matches!(
        solve_auxiliary(&prob, &zero, &cfg),
        Err(Error::Invalid { .. })
    ));
}

#[test]
fn zero_source_gives_zero_iterate_when_relaxed() {
    let calc = line(17);
    let zero = GridFunction::zeros(calc.grid());
    assert!(ProblemSpec::new(calc.clone(), 2.0, 0.5, zero.clone()).is_err());
    let prob = ProblemSpec::relaxed(calc, 2.0, 0.5, zero.clone()).unwrap();
    let a = solve_approximated(&prob, 4, &zero, &SolverConfig::default()).unwrap();
    assert_eq!(a.u.max_abs(), 0.0);
}

#[test]
fn approximated_solution_is_start_independent() {
    let cfg = SolverConfig::default();
    let prob = unit_problem(33, 1.0);
    let a = solve_approximated(&prob, 8, &GridFunction::zeros(prob.grid()), &cfg).unwrap();
    let b = solve_approximated(&prob, 8, &GridFunction::constant(prob.grid(), 0.7), &cfg).unwrap();
    assert!(a.u.max_abs_diff(&b.u) <= 1e-6);
    assert!(a.u.min() >= 0.0);
    assert!(a.variation_norm <= cfg.grad_tol);
}

#[test]
fn scheme_to_64_against_shooting_solution() {
    let prob = unit_problem(65, 1.0);
    let cfg = SolverConfig::default();
    // the Cauchy gap between u_32 and u_64 is about 0.018
    let short = SolverConfig {
        scheme_tol: 0.05,
        ..cfg.clone()
    };
    let opts = SchemeOptions {
        schedule: doubling_schedule(64),
        keep_iterates: true,
        ..SchemeOptions::default()
    };
    let rep = run_scheme(&prob, &opts, &short).unwrap();
    assert!(rep.converged);
    assert_eq!(rep.records.len(), 7);
    for w in rep.iterates.windows(2) {
        assert!(w[1].zip_map(&w[0], |a, b| a - b).min() >= -1e-8 * w[1].max_abs());
    }
    for w in rep.records.windows(2) {
        assert!(w[0].norm <= w[1].norm + 1e-10);
    }
    let probe = default_probe(prob.grid()).unwrap();
    let tests = subelliptic::scheme::bump_tests(prob.grid(), &probe, 20, 3).unwrap();
    let scale = prob.norm(&rep.u_delta).max(1.0);
    assert!(weak_residual(&prob, &rep.u_delta, &tests).unwrap() <= 1e-4 * scale);

    let ode = OdeProfile::new(0.5);
    let coarse = run_scheme(&unit_problem(33, 1.0), &SchemeOptions::default(), &cfg).unwrap();
    let fine = run_scheme(&prob, &SchemeOptions::default(), &cfg).unwrap();
    let e33 = ode_error(&unit_problem(33, 1.0), &coarse.u_delta, &ode, 1.0);
    let e65 = ode_error(&prob, &fine.u_delta, &ode, 1.0);
    assert!(e65 < e33, "{e33:.3e} -> {e65:.3e}");
    assert!(e65 < 2e-3 * ode.m, "{e65:.3e} vs max {:.4}", ode.m);
}

#[test]
fn single_step_schedule_returns_first_iterate() {
    let prob = unit_problem(17, 1.0);
    let cfg = SolverConfig {
        grad_tol: 1e6,
        ..SolverConfig::default()
    };
    let opts = SchemeOptions {
        schedule: vec![1],
        limit: LimitMode::LastIterate,
        keep_iterates: true,
        ..SchemeOptions::default()
    };
    let rep = run_scheme(&prob, &opts, &cfg).unwrap();
    assert_eq!(rep.records.len(), 1);
    assert_eq!(rep.u_delta.values(), rep.iterates[0].values());
}

#[test]
fn scale_covariance() {
    let cfg = SolverConfig::default();
    let lambda: f64 = 4.0;
    let factor = lambda.powf(1.0 / 1.5);
    let base = run_scheme(&unit_problem(33, 1.0), &SchemeOptions::default(), &cfg).unwrap();
    let scaled_prob = unit_problem(33, lambda);
    let scaled = run_scheme(&scaled_prob, &SchemeOptions::default(), &cfg).unwrap();
    let rel = scaled.u_delta.max_abs_diff(&base.u_delta.scaled(factor)) / scaled.u_delta.max();
    assert!(rel < 1e-6, "{rel:.3e}");
    // the same law holds for the continuum oracle
    let ode = OdeProfile::new(0.5);
    let err = ode_error(&scaled_prob, &scaled.u_delta, &ode, factor) / (factor * ode.m);
    assert!(err < 1e-2, "{err:.3e}");
}

#[test]
fn lower_bound_and_level_sets() {
    let calc = line(17);
    let grid = calc.grid();
    let probe = default_probe(grid).unwrap();
    assert_eq!(
        interior_lower_bound(grid, &GridFunction::constant(grid, 1.0), &probe).unwrap(),
        1.0
    );
    assert_eq!(
        interior_lower_bound(grid, &GridFunction::zeros(grid), &probe).unwrap(),
        0.0
    );
    let far = DomainShape::Box {
        lo: vec![2.0],
        hi: vec![3.0],
    };
    assert!(interior_lower_bound(grid, &GridFunction::zeros(grid), &far).is_err());

    let u = GridFunction::from_fn(grid, |x| x[0] * (1.0 - x[0]));
    assert_eq!(level_set_measure(grid, &u, 0.0), grid.measure());
    assert_eq!(level_set_measure(grid, &u, u.max() + 1.0), 0.0);
    let ks = [0.0, 0.05, 0.1, 0.2, 0.24, 0.3];
    for w in ks.windows(2) {
        assert!(level_set_measure(grid, &u, w[1]) <= level_set_measure(grid, &u, w[0]));
    }
}

#[test]
fn weak_residual_rules() {
    let prob = unit_problem(17, 1.0);
    let u = GridFunction::from_fn(prob.grid(), |x| x[0] * (1.0 - x[0]) + 0.01);
    let zero = GridFunction::zeros(prob.grid());
    assert_eq!(weak_residual(&prob, &u, &[zero]).unwrap(), 0.0);
    let mut bad = u.clone();
    bad.values_mut()[3] = 0.0;
    let phi = GridFunction::constant(prob.grid(), 1.0);
    match weak_residual(&prob, &bad, &[GridFunction::zeros(prob.grid()), phi]) {
        Err(Error::Precondition(msg)) => assert!(msg.contains("test function 1")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn energy_comparison_examples() {
    let cfg = SolverConfig::default();
    let prob = unit_problem(33, 1.0);
    let zero = GridFunction::zeros(prob.grid());
    let u4 = solve_approximated(&prob, 4, &zero, &cfg).unwrap().u;
    let u8 = solve_approximated(&prob, 8, &u4, &cfg).unwrap().u;
    assert!(check_energy_comparison(&prob, &u4, &u4, 4));
    assert!(check_energy_comparison(&prob, &u4, &u8, 4));
    assert!(prob.norm(&u4) <= prob.norm(&u8));
    for phi in random_tests(prob.grid(), 50, 11).unwrap() {
        assert!(check_energy_comparison(&prob, &u4, &phi, 4));
    }
}

#[test]
fn heisenberg_ball_with_varying_source() {
    let grid = subelliptic::build_grid(
        DomainShape::Ball {
            center: vec![0.0; 3],
            radius: 1.0,
        },
        &[-1.0; 3],
        &[1.0; 3],
        &[11, 11, 11],
    )
    .unwrap();
    let calc = HorizontalCalculus::new(grid, GroupSpec::heisenberg(1).unwrap()).unwrap();
    let f = GridFunction::from_fn(calc.grid(), |x| 1.0 + x[0] * x[0]);
    let prob = ProblemSpec::new(calc, 3.0, 0.3, f).unwrap();
    let opts = SchemeOptions {
        schedule: doubling_schedule(64),
        keep_iterates: true,
        ..SchemeOptions::default()
    };
    let rep = run_scheme(&prob, &opts, &SolverConfig::default()).unwrap();
    for w in rep.iterates.windows(2) {
        assert!(w[1].zip_map(&w[0], |a, b| a - b).min() >= -1e-8 * w[1].max_abs());
    }
    assert!(rep.limit.lower_bound > 0.0);
    assert!(rep.limit.identity_gap.abs() <= 1e-6 * rep.limit.identity_scale);
}
