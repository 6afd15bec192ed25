//! Lower-level problems: the worst polygon point for one obstacle, first for
//! an exactly known pose, then for a pose known up to an uncertainty ellipse.
//!
//!     cargo run --example lower_level

use nalgebra::Matrix2;
use sip_colav::geometry::{PaddedPolygon, Pose2, Vec2};
use sip_colav::lower_level::{solve_nominal, solve_robust};

fn main() {
    let poly = PaddedPolygon::reference_robot();
    let pose = Pose2::new(0.0, 0.0, 0.4);
    let p_o = Vec2::new(0.9, 0.6);

    let nominal = solve_nominal(&poly, &pose, &p_o);
    println!(
        "nominal: γ* = ({:+.4}, {:+.4}), distance {:.4}, h = {:+.4}",
        nominal.gamma_shp_star.x,
        nominal.gamma_shp_star.y,
        nominal.distance,
        poly.r_shp() - nominal.distance
    );

    for scale in [1e-4, 1e-3, 1e-2] {
        let p_t = Matrix2::new(2.0, 0.3, 0.3, 1.0) * scale;
        let robust = solve_robust(&poly, &pose, &p_o, &p_t).expect("alternation converges");
        println!(
            "robust (P_t scale {scale:.0e}): γ* = ({:+.4}, {:+.4}), shift ({:+.4}, {:+.4}), distance {:.4} after {} alternations",
            robust.gamma_shp_star.x,
            robust.gamma_shp_star.y,
            robust.translation_star.x,
            robust.translation_star.y,
            robust.distance,
            robust.alternations
        );
    }
}
