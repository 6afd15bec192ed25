//! One SQP subproblem with a linear keep-out row: the Riccati and dense
//! interior-point back-ends agree, and an unreachable row is absorbed by its
//! slack instead of making the QP infeasible.
//!
//!     cargo run --example qp_subproblem

use nalgebra::DVector;
use sip_colav::constraint_lin::{ConstraintSource, LinearizedConstraint};
use sip_colav::dynamics::{DiffDriveModel, HeadingConvention, NU, PY};
use sip_colav::ocp_core::{
    solve_subproblem, Limits, OcpProblem, QpBackend, SlackWeights, SubproblemOptions, TrackingWeights, Trajectory,
};

/// `py ≤ limit` at `stage`, written as `h = py − limit ≤ 0`.
fn ceiling(stage: usize, limit: f64, x_lin: &DVector<f64>) -> LinearizedConstraint {
    let mut g = DVector::zeros(x_lin.len());
    g[PY] = 1.0;
    LinearizedConstraint { value: x_lin[PY] - limit, grad_x: g, x_lin: x_lin.clone(), backoff: 0.0, source: ConstraintSource::Obstacle(0), stage }
}

fn main() {
    let (n, dt, v) = (20, 0.1, 0.6);
    let model = DiffDriveModel::kinematic().with_heading(HeadingConvention::CosSin);
    let x_ref: Vec<DVector<f64>> = (0..=n).map(|k| model.steady_state([v * dt * k as f64, 0.0, 0.0], v, 0.0)).collect();
    let mut x0 = x_ref[0].clone();
    x0[PY] = 0.3;
    let prob = OcpProblem::new(
        model,
        dt,
        x0,
        x_ref.clone(),
        vec![DVector::zeros(NU); n],
        Limits::MEDIUM,
        &TrackingWeights::default(),
        SlackWeights::default(),
    )
    .unwrap();
    let guess = Trajectory { x: x_ref.clone(), u: prob.u_ref.clone() };

    for (label, limit) in [("reachable ceiling py ≤ 0.17 at stage 10", 0.17), ("unreachable ceiling py ≤ 0.0 at stage 1", 0.0)] {
        let stage = if limit > 0.1 { 10 } else { 1 };
        let rows = vec![ceiling(stage, limit, &guess.x[stage])];
        println!("{label}");
        for backend in [QpBackend::Riccati, QpBackend::Dense] {
            let opts = SubproblemOptions { backend, ..SubproblemOptions::default() };
            let res = solve_subproblem(&prob, &rows, &guess, 1, &opts).unwrap();
            println!(
                "  {backend:?}: py[{stage}] = {:.5}, slack {:.2e}, multiplier {:.3}, KKT residual {:.1e}, {} IPM iterations",
                res.traj.x[stage][PY],
                res.rows[0].slack,
                res.rows[0].multiplier,
                res.kkt_residual,
                res.qp_iterations[0]
            );
        }
    }
}
