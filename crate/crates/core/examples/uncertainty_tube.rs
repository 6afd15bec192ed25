//! Forward propagation of the ellipsoidal uncertainty tube along a nominal
//! trajectory and the resulting backoffs on the speed bounds.
//!
//!     cargo run --example uncertainty_tube

use nalgebra::{DMatrix, DVector};
use sip_colav::constraint_lin::affine_backoff;
use sip_colav::dynamics::{integrate, DiffDriveModel, HeadingConvention, V_CMD};
use sip_colav::uncertainty::{propagate, NoiseSpec, UncertaintyTube};

fn main() {
    let (dt, n) = (0.05, 20);
    let model = DiffDriveModel::kinematic().with_heading(HeadingConvention::CosSin);
    let nx = model.nx();
    let mut x = model.steady_state([0.0, 0.0, 0.0], 0.8, 0.2);
    let u = DVector::zeros(2);
    let mut steps = Vec::with_capacity(n);
    for _ in 0..n {
        let s = integrate(&model, &x, &u, &DVector::zeros(nx), dt);
        x = s.x_next.clone();
        steps.push(s);
    }
    let w = NoiseSpec::Per50ms { w_per_50ms: 2.5e-4 }.matrix(nx, dt).unwrap();
    let sigma0 = DMatrix::from_diagonal(&DVector::from_vec(vec![4e-5, 4e-5, 4e-5, 0.0, 0.0]));
    let tube = propagate(&UncertaintyTube::new(sigma0, vec![w; n]), &steps).unwrap();
    let e_v = DVector::from_fn(nx, |i, _| if i == V_CMD { 1.0 } else { 0.0 });
    for k in (0..=n).step_by(5) {
        let s = &tube.sigma[k];
        println!(
            "stage {k:2}: σ_px {:.4} m, σ_py {:.4} m, σ_θ {:.4} rad, speed backoff {:.4} m/s",
            s[(0, 0)].sqrt(),
            s[(1, 1)].sqrt(),
            s[(2, 2)].sqrt(),
            affine_backoff(&e_v, s)
        );
    }
}
