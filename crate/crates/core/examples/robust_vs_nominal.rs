//! Nominal against robust (zoRO) solves of the same corridor window: the
//! robust trajectory keeps a clearance that grows with the uncertainty tube.
//!
//!     cargo run --release --example robust_vs_nominal

use nalgebra::DMatrix;
use sip_colav::distance_field::{EdtMethod, ObstacleField};
use sip_colav::dynamics::{DiffDriveModel, HeadingConvention};
use sip_colav::geometry::{PaddedPolygon, Vec2};
use sip_colav::map_io::{l_corridor, CLOUD_MARGIN};
use sip_colav::ocp_core::{Limits, OcpProblem, SlackWeights, TrackingWeights, Trajectory};
use sip_colav::simulator::{generate_reference, min_distance_trace};
use sip_colav::sip_solver::{solve_ocp, SolveConfig, SolveMode};
use sip_colav::uncertainty::{NoiseSpec, UncertaintyTube};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let field = ObstacleField::from_points(l_corridor(), 0.02, CLOUD_MARGIN, EdtMethod::Exact)?;
    let poly = PaddedPolygon::reference_robot();
    let model = DiffDriveModel::kinematic().with_heading(HeadingConvention::CosSin);
    let (n, dt) = (20, 0.05);
    // drifting into the upper wall of the horizontal leg
    let waypoints = [Vec2::new(0.6, 0.85), Vec2::new(3.0, 0.97)];
    let reference = generate_reference(&model, &waypoints, &Limits::MEDIUM, dt)?;
    let (x_ref, u_ref) = reference.window(10, n);
    let prob = OcpProblem::new(model.clone(), dt, x_ref[0].clone(), x_ref.clone(), u_ref.clone(), Limits::MEDIUM, &TrackingWeights::default(), SlackWeights::default())?;
    let guess = Trajectory { x: x_ref, u: u_ref };

    let nx = model.nx();
    let w = NoiseSpec::Per50ms { w_per_50ms: 2.5e-4 }.matrix(nx, dt)?;
    let sigma0 = DMatrix::from_fn(nx, nx, |i, j| if i == j && i < 3 { 4e-5 } else { 0.0 });
    let tube0 = UncertaintyTube::new(sigma0, vec![w; n]);

    for mode in [SolveMode::Nominal, SolveMode::Robust] {
        let cfg = SolveConfig::mpc(mode);
        let out = solve_ocp(&prob, &field, &poly, &tube0, &guess, None, &cfg)?;
        let trace = min_distance_trace(field.points(), &poly, &out.traj.x);
        let worst = trace[1..].iter().copied().fold(f64::INFINITY, f64::min);
        println!("{mode:?}: {} iterations, min clearance {:+.4} m, final stage {:+.4} m", out.report.iterations, worst, trace[n]);
        println!("  clearance every 5 stages: {:?}", trace.iter().step_by(5).map(|d| format!("{d:+.4}")).collect::<Vec<_>>());
        if let Some(tube) = &out.tube {
            let s = &tube.sigma[n];
            println!("  tube at stage {n}: σ_px {:.4} m, σ_py {:.4} m", s[(0, 0)].sqrt(), s[(1, 1)].sqrt());
        }
    }
    Ok(())
}
