//! Offline nominal solve through the L-corridor: builds the field, the
//! reference and the problem by hand, runs the SIP solver and writes an SVG.
//!
//!     cargo run --release --example solve_corridor -- [OUT.svg]

use sip_colav::distance_field::{EdtMethod, ObstacleField};
use sip_colav::dynamics::{DiffDriveModel, HeadingConvention};
use sip_colav::geometry::{PaddedPolygon, Pose2, Vec2};
use sip_colav::map_io::{l_corridor, CLOUD_MARGIN};
use sip_colav::ocp_core::{Limits, OcpProblem, SlackWeights, TrackingWeights, Trajectory};
use sip_colav::simulator::{generate_reference, trajectory_min_distance};
use sip_colav::sip_solver::{solve_nominal_ocp, SolveConfig, SolveMode};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let field = ObstacleField::from_points(l_corridor(), 0.02, CLOUD_MARGIN, EdtMethod::Exact)?;
    let poly = PaddedPolygon::reference_robot();
    let model = DiffDriveModel::kinematic().with_heading(HeadingConvention::CosSin);
    let (n, dt) = (30, 0.2);

    let waypoints = [Vec2::new(0.8, 0.6), Vec2::new(3.9, 0.8), Vec2::new(4.0, 3.6)];
    let reference = generate_reference(&model, &waypoints, &Limits::MEDIUM, dt)?;
    let (x_ref, u_ref) = reference.window(0, n);
    let guess = Trajectory { x: x_ref.clone(), u: u_ref.clone() };
    println!("reference: {:.2} m in {:.2} s, min distance {:+.4}", reference.length, reference.duration, trajectory_min_distance(field.points(), &poly, &guess));

    let prob = OcpProblem::new(model, dt, x_ref[0].clone(), x_ref, u_ref, Limits::MEDIUM, &TrackingWeights::default(), SlackWeights::default())?;
    let cfg = SolveConfig { track_min_distance: true, ..SolveConfig::offline(SolveMode::Nominal) };
    let out = solve_nominal_ocp(&prob, &field, &poly, &guess, None, &cfg)?;
    for r in &out.report.records {
        println!(
            "iter {:2}: step {:.2e}, subset total {:3}, penetrating stages {}, min sd {:+.4}",
            r.iteration,
            r.step_norm,
            r.subset_sizes.iter().sum::<usize>(),
            r.penetration_stages,
            r.min_signed_distance.unwrap_or(f64::NAN)
        );
    }
    println!("converged {} after {} iterations in {:.3} s", out.report.converged, out.report.iterations, out.report.seconds);

    if let Some(path) = std::env::args().nth(1) {
        let poses: Vec<Pose2> = out.traj.x.iter().map(|x| Pose2::from_state(x.as_slice())).collect();
        let path_ref: Vec<Vec2> = reference.x.iter().map(|x| Vec2::new(x[0], x[1])).collect();
        std::fs::write(&path, sip_colav::svg::map_overlay(field.points(), &poly, &poses, &path_ref))?;
        println!("wrote {path}");
    }
    Ok(())
}
