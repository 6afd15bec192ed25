//! Map files: point clouds as CSV (`x,y`), occupancy grids as binary PGM with
//! a JSON sidecar, and the synthetic L-corridor.

use crate::distance_field::{EdtMethod, FieldError, GridSpec, ObstacleField};
use crate::geometry::Vec2;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error(transparent)]
    Field(#[from] FieldError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> MapError + '_ {
    move |source| MapError::Io { path: path.to_path_buf(), source }
}

fn format_err(path: &Path, msg: impl Into<String>) -> MapError {
    MapError::Format { path: path.to_path_buf(), msg: msg.into() }
}

/// Margin around a point cloud when it is rasterized.
pub const CLOUD_MARGIN: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PgmSidecar {
    pub resolution_m: f64,
    /// World position of the centre of the bottom-left pixel.
    pub origin_xy: [f64; 2],
    /// Pixels at or below this value are occupied.
    pub occupied_threshold: u8,
}

pub fn read_points_csv(path: &Path) -> Result<Vec<Vec2>, MapError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| format_err(path, e.to_string()))?;
    let headers = rdr.headers().map_err(|e| format_err(path, e.to_string()))?.clone();
    if headers.len() != 2 || &headers[0] != "x" || &headers[1] != "y" {
        return Err(format_err(path, format!("expected header `x,y`, found `{}`", headers.iter().collect::<Vec<_>>().join(","))));
    }
    let mut points = Vec::new();
    for (line, rec) in rdr.deserialize::<(f64, f64)>().enumerate() {
        let (x, y) = rec.map_err(|e| format_err(path, format!("row {}: {e}", line + 2)))?;
        if !x.is_finite() || !y.is_finite() {
            return Err(format_err(path, format!("row {}: non-finite coordinate", line + 2)));
        }
        points.push(Vec2::new(x, y));
    }
    if points.is_empty() {
        return Err(format_err(path, "no obstacle points"));
    }
    Ok(points)
}

pub fn write_points_csv(path: &Path, points: &[Vec2]) -> Result<(), MapError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| format_err(path, e.to_string()))?;
    w.write_record(["x", "y"]).map_err(|e| format_err(path, e.to_string()))?;
    for p in points {
        w.write_record([format!("{}", p.x), format!("{}", p.y)]).map_err(|e| format_err(path, e.to_string()))?;
    }
    w.flush().map_err(io_err(path))
}

/// Grey image, row 0 at the top.
#[derive(Debug, Clone, PartialEq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

fn next_token(r: &mut impl BufRead, path: &Path) -> Result<String, MapError> {
    let mut tok = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte).map_err(io_err(path))? == 0 {
            break;
        }
        match byte[0] {
            b'#' if tok.is_empty() => {
                let mut skip = Vec::new();
                r.read_until(b'\n', &mut skip).map_err(io_err(path))?;
            }
            c if c.is_ascii_whitespace() => {
                if !tok.is_empty() {
                    break;
                }
            }
            c => tok.push(c),
        }
    }
    if tok.is_empty() {
        return Err(format_err(path, "truncated PGM header"));
    }
    Ok(String::from_utf8_lossy(&tok).into_owned())
}

pub fn read_pgm(path: &Path) -> Result<Pgm, MapError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(file);
    if next_token(&mut r, path)? != "P5" {
        return Err(format_err(path, "not a binary PGM (P5)"));
    }
    let mut num = |what: &str| -> Result<usize, MapError> {
        next_token(&mut r, path)?.parse().map_err(|_| format_err(path, format!("bad {what}")))
    };
    let (width, height, maxval) = (num("width")?, num("height")?, num("maxval")?);
    if maxval == 0 || maxval > 255 {
        return Err(format_err(path, "only 8-bit PGM is supported"));
    }
    let mut pixels = vec![0u8; width * height];
    r.read_exact(&mut pixels).map_err(|_| format_err(path, "pixel data shorter than width*height"))?;
    Ok(Pgm { width, height, pixels })
}

pub fn write_pgm(path: &Path, img: &Pgm) -> Result<(), MapError> {
    let mut f = std::fs::File::create(path).map_err(io_err(path))?;
    write!(f, "P5\n{} {}\n255\n", img.width, img.height).map_err(io_err(path))?;
    f.write_all(&img.pixels).map_err(io_err(path))
}

/// Sidecar path: `map.pgm` → `map.json`.
pub fn sidecar_path(pgm: &Path) -> PathBuf {
    pgm.with_extension("json")
}

pub fn read_sidecar(path: &Path) -> Result<PgmSidecar, MapError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let s: PgmSidecar = serde_json::from_str(&text).map_err(|e| format_err(path, e.to_string()))?;
    if !(s.resolution_m > 0.0) {
        return Err(format_err(path, "resolution_m must be positive"));
    }
    Ok(s)
}

fn grid_of(img: &Pgm, side: &PgmSidecar) -> GridSpec {
    GridSpec { origin: Vec2::new(side.origin_xy[0], side.origin_xy[1]), resolution: side.resolution_m, nx: img.width, ny: img.height }
}

/// Occupancy in grid order (row `j = 0` at the bottom).
pub fn occupancy_of(img: &Pgm, threshold: u8) -> Vec<bool> {
    let mut occ = vec![false; img.width * img.height];
    for row in 0..img.height {
        let j = img.height - 1 - row;
        for i in 0..img.width {
            occ[j * img.width + i] = img.pixels[row * img.width + i] <= threshold;
        }
    }
    occ
}

pub fn load_pgm_field(path: &Path, method: EdtMethod) -> Result<ObstacleField, MapError> {
    let img = read_pgm(path)?;
    let side_path = sidecar_path(path);
    let side = read_sidecar(&side_path)?;
    let occ = occupancy_of(&img, side.occupied_threshold);
    ObstacleField::from_occupancy(occ, grid_of(&img, &side), method).map_err(|e| match e {
        FieldError::EmptyObstacleSet => format_err(path, "map has no occupied cells"),
        other => MapError::Field(other),
    })
}

/// Loads a `.csv` point cloud (rasterized at `resolution`) or a `.pgm` map.
pub fn load_field(path: &Path, resolution: f64, method: EdtMethod) -> Result<ObstacleField, MapError> {
    if !path.exists() {
        return Err(MapError::Io { path: path.to_path_buf(), source: std::io::Error::new(std::io::ErrorKind::NotFound, "map file not found") });
    }
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("pgm") => load_pgm_field(path, method),
        Some("csv") => Ok(ObstacleField::from_points(read_points_csv(path)?, resolution, CLOUD_MARGIN, method)?),
        _ => Err(format_err(path, "unknown map format (expected .csv or .pgm)")),
    }
}

/// Signed distance image: occupied cells black, free cells brighter with
/// distance, saturating at `max_distance`.
pub fn sdt_image(field: &ObstacleField, max_distance: f64) -> Pgm {
    let g = *field.grid();
    let mut pixels = vec![0u8; g.len()];
    for j in 0..g.ny {
        let row = g.ny - 1 - j;
        for i in 0..g.nx {
            let d = field.cell_distance(i, j).max(0.0);
            let scaled = if field.is_occupied(i, j) { 0.0 } else { (d / max_distance).min(1.0) * 255.0 };
            pixels[row * g.nx + i] = scaled.round() as u8;
        }
    }
    Pgm { width: g.nx, height: g.ny, pixels }
}

/// Writes the SDT image and a sidecar describing its grid.
pub fn write_sdt(path: &Path, field: &ObstacleField, max_distance: f64) -> Result<(), MapError> {
    write_pgm(path, &sdt_image(field, max_distance))?;
    let g = field.grid();
    let side = PgmSidecar { resolution_m: g.resolution, origin_xy: [g.origin.x, g.origin.y], occupied_threshold: 0 };
    let sp = sidecar_path(path);
    std::fs::write(&sp, serde_json::to_string_pretty(&side).expect("sidecar serializes")).map_err(io_err(&sp))
}

fn wall(a: Vec2, b: Vec2, spacing: f64, skip_first: bool) -> Vec<Vec2> {
    let n = ((b - a).norm() / spacing).round() as usize;
    (usize::from(skip_first)..=n).map(|k| a + (b - a) * (k as f64 / n as f64)).collect()
}

/// Synthetic L-shaped corridor of width 1.2 m at 0.02 m point spacing:
/// horizontal leg along `0 ≤ y ≤ 1.2`, vertical leg along `3.5 ≤ x ≤ 4.7`.
pub fn l_corridor() -> Vec<Vec2> {
    let s = 0.02;
    let mut pts = wall(Vec2::new(0.0, 0.0), Vec2::new(4.70, 0.0), s, false);
    pts.extend(wall(Vec2::new(4.70, 0.0), Vec2::new(4.70, 4.70), s, true));
    pts.extend(wall(Vec2::new(0.0, 1.2), Vec2::new(3.5, 1.2), s, false));
    pts.extend(wall(Vec2::new(3.5, 1.2), Vec2::new(3.5, 4.68), s, true));
    pts
}

/// Corridor centreline from the open left end to the open top end.
pub fn l_corridor_centerline() -> Vec<Vec2> {
    vec![Vec2::new(0.4, 0.6), Vec2::new(4.1, 0.6), Vec2::new(4.1, 4.3)]
}
