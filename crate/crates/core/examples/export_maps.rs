//! Writes the synthetic L-corridor point cloud and its signed distance image.
//!
//!     cargo run --example export_maps -- [OUT_DIR]

use sip_colav::distance_field::{EdtMethod, ObstacleField};
use sip_colav::map_io::{l_corridor, write_points_csv, write_sdt, CLOUD_MARGIN};
use std::path::PathBuf;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/data").into()));
    std::fs::create_dir_all(&dir)?;
    let points = l_corridor();
    write_points_csv(&dir.join("l_corridor.csv"), &points)?;
    let field = ObstacleField::from_points(points, 0.02, CLOUD_MARGIN, EdtMethod::Exact)?;
    write_sdt(&dir.join("l_corridor_sdt.pgm"), &field, 1.0)?;
    let g = field.grid();
    println!("{} points, grid {}x{} at {} m, written to {}", field.points().len(), g.nx, g.ny, g.resolution, dir.display());
    Ok(())
}
