mod common;

use common::*;
use sip_colav::bench::{Suite, SuiteSpec};
use sip_colav::distance_field::{EdtMethod, ObstacleField, ObstacleSubset};
use sip_colav::geometry::{PaddedPolygon, Vec2};
use sip_colav::map_io::CLOUD_MARGIN;
use sip_colav::ocp_core::{solve_subproblem, Limits, RowActivity, SubproblemOptions, Trajectory};
use sip_colav::simulator::{evaluate_min_distance, min_distance_trace, trajectory_min_distance};
use sip_colav::sip_solver::{
    shift_warm_start, solve_nominal_ocp, solve_ocp, solve_robust_ocp, MemberActivity, SolveConfig, SolveMode, SolverReport,
};
use sip_colav::uncertainty::UncertaintyTube;

fn offline() -> SolveConfig {
    SolveConfig { track_min_distance: true, ..SolveConfig::offline(SolveMode::Nominal) }
}

#[test]
fn obstacle_free_reaches_tracking_optimum() {
    let model = kinematic();
    let (prob, guess) = problem(&model, &[Vec2::new(0.0, 0.0), Vec2::new(2.0, 1.0)], 30, 0.2, 0, Limits::MEDIUM);
    let field = ObstacleField::free(0.02);
    let poly = PaddedPolygon::reference_robot();
    let out = solve_nominal_ocp(&prob, &field, &poly, &guess, None, &offline()).unwrap();
    assert!(out.report.converged);
    assert!(out.report.iterations <= 3, "{} iterations", out.report.iterations);
    assert!(out.subsets.sizes().iter().all(|s| *s == 0));

    // the pure tracking optimum, by SQP to a fixed point without collision rows
    let mut z = guess.clone();
    for _ in 0..20 {
        z = solve_subproblem(&prob, &[], &z, 1, &SubproblemOptions::default()).unwrap().traj;
    }
    assert!(max_diff(&out.traj, &z) < 1e-6, "{}", max_diff(&out.traj, &z));

    // off the reference the SQP may need longer, but still never touches the field
    let mut prob = prob;
    prob.x0[1] += 0.2;
    let out = solve_nominal_ocp(&prob, &field, &poly, &guess, None, &offline()).unwrap();
    assert!(out.report.converged);
    assert!(out.subsets.sizes().iter().all(|s| *s == 0));
}

#[test]
fn wall_close_to_reference_is_respected() {
    // body half-width 0.11, so the unpadded footprint passes 0.1 m from the wall
    let points = wall(0.21, 1.0, 3.5);
    let field = ObstacleField::from_points(points.clone(), 0.02, CLOUD_MARGIN, EdtMethod::Exact).unwrap();
    let poly = PaddedPolygon::reference_robot();
    let (prob, guess) = problem(&kinematic(), &[Vec2::new(0.0, 0.0), Vec2::new(3.0, 0.0)], 30, 0.2, 0, Limits::MEDIUM);
    assert!(trajectory_min_distance(&points, &poly, &guess) < -0.09);
    let out = solve_nominal_ocp(&prob, &field, &poly, &guess, None, &offline()).unwrap();
    assert!(out.report.converged);
    let d = trajectory_min_distance(&points, &poly, &out.traj);
    assert!(d >= -1e-6, "min signed distance {d}");
    // the wall is reached, so some constraint is active
    assert!(d < 1e-3);
}

#[test]
fn converged_runs_certify_all_obstacles() {
    let suite = Suite::l_corridor(SuiteSpec { cases: 6, seed: 11, ..SuiteSpec::default() }).unwrap();
    let cfg = suite.config();
    for i in 0..suite.spec.cases {
        let case = suite.case(i).unwrap();
        let out = solve_nominal_ocp(&case.prob, &suite.field, &suite.poly, &case.guess, None, &cfg).unwrap();
        if out.report.converged {
            let d = trajectory_min_distance(suite.field.points(), &suite.poly, &out.traj);
            assert!(d >= -10.0 * cfg.eps_cvg, "case {i}: {d}");
        }
    }
}

#[test]
fn zero_uncertainty_robust_equals_nominal() {
    let field = corridor_field();
    let poly = PaddedPolygon::reference_robot();
    let model = kinematic();
    let (prob, guess) = problem(&model, &[Vec2::new(0.8, 0.6), Vec2::new(3.9, 0.8), Vec2::new(4.0, 3.6)], 30, 0.2, 0, Limits::MEDIUM);
    let cfg = offline();
    let nominal = solve_nominal_ocp(&prob, &field, &poly, &guess, None, &cfg).unwrap();
    let zero = UncertaintyTube::zero(model.nx(), 30);
    let robust = solve_robust_ocp(&prob, &field, &poly, &zero, &guess, None, &SolveConfig { mode: SolveMode::Robust, ..cfg }).unwrap();
    assert!(max_diff(&nominal.traj, &robust.traj) < 1e-6, "{}", max_diff(&nominal.traj, &robust.traj));
    assert_eq!(nominal.report.iterations, robust.report.iterations);
}

fn strip_times(r: &SolverReport) -> Vec<(usize, f64, Vec<usize>, usize, f64)> {
    r.records.iter().map(|x| (x.iteration, x.step_norm, x.subset_sizes.clone(), x.lower_level_solves, x.total_slack)).collect()
}

#[test]
fn identical_inputs_give_identical_reports() {
    let field = corridor_field();
    let poly = PaddedPolygon::reference_robot();
    let model = kinematic();
    let (prob, guess) = problem(&model, &[Vec2::new(1.0, 0.5), Vec2::new(3.8, 0.7), Vec2::new(4.1, 3.0)], 20, 0.05, 4, Limits::FAST);
    let t0 = tube(model.nx(), 20, 0.05, 4e-5, 2.5e-4);
    for mode in [SolveMode::Nominal, SolveMode::Robust] {
        let cfg = SolveConfig::mpc(mode);
        let a = solve_ocp(&prob, &field, &poly, &t0, &guess, None, &cfg).unwrap();
        let b = solve_ocp(&prob, &field, &poly, &t0, &guess, None, &cfg).unwrap();
        assert_eq!(a.traj, b.traj);
        assert_eq!(a.subsets, b.subsets);
        assert_eq!(strip_times(&a.report), strip_times(&b.report));
        let serial = solve_ocp(&prob, &field, &poly, &t0, &guess, None, &SolveConfig { parallel: false, ..cfg }).unwrap();
        assert_eq!(a.traj, serial.traj);
    }
}

#[test]
fn report_indexing_and_timings() {
    let field = corridor_field();
    let poly = PaddedPolygon::reference_robot();
    let (prob, guess) = problem(&kinematic(), &[Vec2::new(0.8, 0.6), Vec2::new(3.9, 0.8)], 30, 0.2, 0, Limits::MEDIUM);
    let out = solve_nominal_ocp(&prob, &field, &poly, &guess, None, &offline()).unwrap();
    for (j, r) in out.report.records.iter().enumerate() {
        assert_eq!(r.iteration, j + 1);
        let t = r.times;
        assert!(t.subset_update >= 0.0 && t.lower_level >= 0.0 && t.upper_level >= 0.0 && t.propagation == 0.0);
        assert_eq!(r.subset_sizes.len(), 31);
    }
    assert_eq!(out.report.iterations, out.report.records.len());
}

#[test]
fn robust_keeps_larger_clearance_at_active_stages() {
    let field = corridor_field();
    let poly = PaddedPolygon::reference_robot();
    let model = kinematic();
    let (n, dt) = (20, 0.05);
    let t0 = tube(model.nx(), n, dt, 4e-5, 2.5e-4);
    let mut compared = 0;
    for i in 0..20 {
        // windows along references that drift into the upper wall of the horizontal leg
        let y0 = 0.8 + 0.005 * i as f64;
        let wps = [Vec2::new(0.6, y0), Vec2::new(3.2, y0 + 0.15)];
        let (prob, guess) = problem(&model, &wps, n, dt, 5 + i, Limits::MEDIUM);
        let nominal = solve_ocp(&prob, &field, &poly, &t0, &guess, None, &SolveConfig::mpc(SolveMode::Nominal)).unwrap();
        let robust = solve_ocp(&prob, &field, &poly, &t0, &guess, None, &SolveConfig::mpc(SolveMode::Robust)).unwrap();
        let dn = min_distance_trace(field.points(), &poly, &nominal.traj.x);
        let dr = min_distance_trace(field.points(), &poly, &robust.traj.x);
        for k in 2..=n {
            if dn[k].abs() < 1e-3 {
                assert!(dr[k] > dn[k], "instance {i}, stage {k}: robust {} vs nominal {}", dr[k], dn[k]);
                compared += 1;
            }
        }
    }
    assert!(compared > 50, "only {compared} active stages");
}

#[test]
fn robust_needs_at_least_as_many_iterations() {
    let spec = SuiteSpec { cases: 8, seed: 5, horizon: 20, dt: 0.05, ..SuiteSpec::default() };
    let nominal = Suite::l_corridor(spec.clone()).unwrap().run();
    let robust = Suite::l_corridor(SuiteSpec { mode: SolveMode::Robust, ..spec }).unwrap().run();
    assert!(
        robust.aggregates.median_iterations >= nominal.aggregates.median_iterations,
        "robust {} nominal {}",
        robust.aggregates.median_iterations,
        nominal.aggregates.median_iterations
    );
}

#[test]
fn warm_start_shift_examples() {
    let x: Vec<_> = (0..4).map(|k| state(&[k as f64, 0.0, 0.0, 0.0, 0.0])).collect();
    let u: Vec<_> = (0..3).map(|k| state(&[k as f64, 0.0])).collect();
    let prev = Trajectory { x, u };
    let (z, s) = shift_warm_start(&prev, &vec![Vec::new(); 3], 1, 1e-5);
    let px: Vec<f64> = z.x.iter().map(|x| x[0]).collect();
    assert_eq!(px, vec![1.0, 2.0, 3.0, 3.0]);
    assert_eq!(s, ObstacleSubset::empty(4));

    let act = |slack: f64, value: f64, obstacle| MemberActivity { obstacle, activity: RowActivity { slack, value, multiplier: 0.0 } };
    let activity = vec![vec![], vec![], vec![act(0.0, 0.0, 4), act(0.0, -0.3, 9)], vec![act(0.0, 0.0, 7)]];
    let (_, s) = shift_warm_start(&prev, &activity, 1, 1e-5);
    assert_eq!(s.sizes(), vec![0, 1, 1, 1]);
}

#[test]
fn metric_ignores_the_grid() {
    // same cloud at two resolutions: identical exact metric, solver runs on either
    let points = wall(0.45, 0.0, 2.0);
    let poly = PaddedPolygon::reference_robot();
    let pose = sip_colav::geometry::Pose2::new(1.0, 0.0, 0.0);
    let d = evaluate_min_distance(&points, &poly, &pose);
    assert!((d - (0.45 - 0.11 - 0.2)).abs() < 1e-12);
    for res in [0.01, 0.05] {
        let field = ObstacleField::from_points(points.clone(), res, CLOUD_MARGIN, EdtMethod::Exact).unwrap();
        assert_eq!(evaluate_min_distance(field.points(), &poly, &pose), d);
    }
}
