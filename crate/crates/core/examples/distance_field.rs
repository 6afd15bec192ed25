//! Signed distance field of a 3×3 grid with a single occupied centre cell,
//! computed with the exact two-pass transform and with dead reckoning.
//!
//!     cargo run --example distance_field

use sip_colav::distance_field::{EdtMethod, GridSpec, ObstacleField};
use sip_colav::geometry::Vec2;

fn main() {
    let grid = GridSpec { origin: Vec2::zeros(), resolution: 0.1, nx: 3, ny: 3 };
    let mut occupancy = vec![false; 9];
    occupancy[4] = true;
    for method in [EdtMethod::Exact, EdtMethod::DeadReckoning] {
        let field = ObstacleField::from_occupancy(occupancy.clone(), grid, method).expect("valid grid");
        println!("{method:?}: obstacle points {:?}", field.points());
        for j in (0..3).rev() {
            let row: Vec<String> = (0..3).map(|i| format!("{:+.4}", field.cell_distance(i, j))).collect();
            println!("  {}", row.join("  "));
        }
        let p = Vec2::new(0.21, 0.02);
        println!(
            "  lookup at ({}, {}): sd {:+.4}, gradient {:?}",
            p.x,
            p.y,
            field.signed_distance(&p).unwrap(),
            field.signed_distance_gradient(&p).unwrap().as_slice()
        );
    }
}
