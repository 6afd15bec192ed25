//! RK4 rollout of the kinematic model and of a first-order actuator lag model
//! under the same acceleration commands, with the discrete sensitivities.
//!
//!     cargo run --example dynamics_rollout

use nalgebra::DVector;
use sip_colav::dynamics::{integrate, rollout, DiffDriveModel, HeadingConvention};

fn main() {
    let dt = 0.05;
    let us: Vec<DVector<f64>> = (0..40).map(|k| DVector::from_vec(vec![if k < 20 { 1.0 } else { 0.0 }, 0.4])).collect();
    for (name, model) in [
        ("kinematic", DiffDriveModel::kinematic().with_heading(HeadingConvention::CosSin)),
        ("lag 0.2 s", DiffDriveModel::first_order_lag(0.2, 0.2).with_heading(HeadingConvention::CosSin)),
    ] {
        let x0 = model.steady_state([0.0, 0.0, 0.0], 0.0, 0.0);
        let xs = rollout(&model, &x0, &us, dt);
        let last = xs.last().unwrap();
        println!("{name}: nx = {}, final pose ({:.3}, {:.3}, {:.3}), commanded v {:.3}", model.nx(), last[0], last[1], last[2], last[3]);
        let step = integrate(&model, &xs[10], &us[10], &DVector::zeros(model.nx()), dt);
        println!("  A at stage 10 (row θ): {:?}", step.a.row(2).iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>());
        println!("  B at stage 10 (row v_cmd): {:?}", step.b.row(3).iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>());
    }
}
