#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use sip_colav::distance_field::{EdtMethod, ObstacleField};
use sip_colav::dynamics::{DiffDriveModel, HeadingConvention};
use sip_colav::geometry::Vec2;
use sip_colav::map_io::{l_corridor, CLOUD_MARGIN};
use sip_colav::ocp_core::{Limits, OcpProblem, SlackWeights, TrackingWeights, Trajectory};
use sip_colav::simulator::generate_reference;
use sip_colav::uncertainty::{NoiseSpec, UncertaintyTube};

pub fn kinematic() -> DiffDriveModel {
    DiffDriveModel::kinematic().with_heading(HeadingConvention::CosSin)
}

pub fn corridor_field() -> ObstacleField {
    ObstacleField::from_points(l_corridor(), 0.02, CLOUD_MARGIN, EdtMethod::Exact).unwrap()
}

/// Straight wall of points along `y = y_wall` for `x ∈ [x0, x1]`.
pub fn wall(y_wall: f64, x0: f64, x1: f64) -> Vec<Vec2> {
    let n = ((x1 - x0) / 0.02).round() as usize;
    (0..=n).map(|i| Vec2::new(x0 + (x1 - x0) * i as f64 / n as f64, y_wall)).collect()
}

/// Problem over the window starting at `tick` of the reference through `waypoints`.
pub fn problem(model: &DiffDriveModel, waypoints: &[Vec2], n: usize, dt: f64, tick: usize, limits: Limits) -> (OcpProblem, Trajectory) {
    let reference = generate_reference(model, waypoints, &limits, dt).unwrap();
    let (x_ref, u_ref) = reference.window(tick, n);
    let guess = Trajectory { x: x_ref.clone(), u: u_ref.clone() };
    let prob = OcpProblem::new(model.clone(), dt, x_ref[0].clone(), x_ref, u_ref, limits, &TrackingWeights::default(), SlackWeights::default()).unwrap();
    (prob, guess)
}

/// Paper-scale tube: pose variance `sigma0`, isotropic W per 50 ms.
pub fn tube(nx: usize, n: usize, dt: f64, sigma0: f64, w_per_50ms: f64) -> UncertaintyTube {
    let s0 = DMatrix::from_fn(nx, nx, |i, j| if i == j && i < 3 { sigma0 } else { 0.0 });
    let w = NoiseSpec::Per50ms { w_per_50ms }.matrix(nx, dt).unwrap();
    UncertaintyTube::new(s0, vec![w; n])
}

pub fn max_diff(a: &Trajectory, b: &Trajectory) -> f64 {
    a.max_abs_diff(b)
}

pub fn state(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}
