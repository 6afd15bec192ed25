//! Projection of obstacle points onto the padded robot footprint and the
//! exact signed-distance metric used to score trajectories.
//!
//!     cargo run --example footprint_distance

use sip_colav::geometry::{project_point_onto_polygon, PaddedPolygon, Pose2, Vec2};
use sip_colav::simulator::evaluate_min_distance;

fn main() {
    let poly = PaddedPolygon::reference_robot();
    println!("reference robot: {} vertices, r_shp = {}", poly.vertices().len(), poly.r_shp());
    for v in poly.vertices() {
        println!("  vertex ({:+.3}, {:+.3})", v.x, v.y);
    }

    let pose = Pose2::new(1.0, 0.5, 0.3);
    let obstacles = [Vec2::new(1.8, 0.5), Vec2::new(1.0, 1.1), Vec2::new(1.05, 0.55)];
    for p in &obstacles {
        let body = pose.to_body(p);
        let (gamma, dist) = project_point_onto_polygon(&poly, &body);
        println!(
            "obstacle ({:.2}, {:.2}): closest body point ({:+.3}, {:+.3}), distance {:.4}, signed distance {:+.4}",
            p.x,
            p.y,
            gamma.x,
            gamma.y,
            dist,
            dist - poly.r_shp()
        );
    }
    println!("min over all obstacles: {:+.4}", evaluate_min_distance(&obstacles, &poly, &pose));
}
