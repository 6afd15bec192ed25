//! Linearized collision rows: the analytic gradient of the nominal and robust
//! constraint values checked against central differences.
//!
//!     cargo run --example constraint_linearization

use nalgebra::{DMatrix, DVector};
use sip_colav::constraint_lin::{affine_backoff, eval_nominal, eval_robust, rotational_backoff};
use sip_colav::geometry::{PaddedPolygon, Vec2};

fn central_difference(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>) -> DVector<f64> {
    let h = 1e-6;
    DVector::from_fn(x.len(), |i, _| {
        let (mut a, mut b) = (x.clone(), x.clone());
        a[i] += h;
        b[i] -= h;
        (f(&a) - f(&b)) / (2.0 * h)
    })
}

fn main() {
    let poly = PaddedPolygon::reference_robot();
    let x = DVector::from_vec(vec![0.2, -0.1, 0.7, 0.5, 0.0]);
    let p_o = Vec2::new(0.8, 0.5);

    let e = eval_nominal(&poly, &x, &p_o).expect("obstacle outside the footprint");
    let fd = central_difference(|y| eval_nominal(&poly, y, &p_o).unwrap().h, &x);
    println!("nominal h = {:+.5}", e.h);
    println!("  analytic grad {:?}", e.grad.as_slice());
    println!("  finite diff   {:?}", fd.as_slice());

    let sigma = DMatrix::from_diagonal(&DVector::from_vec(vec![4e-4, 2e-4, 1e-3, 0.0, 0.0]));
    let r = eval_robust(&poly, &x, &sigma, &p_o).expect("robust evaluation");
    println!("robust h = {:+.5} (nominal + translation margin)", r.h);
    println!("  rotational backoff {:.5}", rotational_backoff(&poly, &sigma));
    println!("  affine backoff of the nominal row {:.5}", affine_backoff(&e.grad, &sigma));
}
