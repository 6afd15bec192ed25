//! Point-obstacle sets, signed distance transforms and closest-obstacle maps.
//!
//! A field stores the obstacle points `O`, an occupancy grid for the solid shape
//! `O_AS`, and per cell the signed distance to the nearest point together with
//! that point's index. Signed distances are negative (or `-0.0`) on occupied
//! cells.
//!
//! Two transforms fill the grid:
//! - [`EdtMethod::Exact`], a separable two-pass transform (lower envelope of
//!   parabolas) when every point sits on a cell centre, otherwise an exact
//!   bucketed nearest-point search;
//! - [`EdtMethod::DeadReckoning`], two raster sweeps propagating closest-point
//!   references between 8-neighbours.

use crate::geometry::{boundary_grid, interior_grid, project_point_onto_polygon, PaddedPolygon, Pose2, Vec2};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("obstacle set is empty")]
    EmptyObstacleSet,
    #[error("resolution must be positive, got {0}")]
    BadResolution(f64),
    #[error("query ({x:.4}, {y:.4}) lies outside the mapped region")]
    OutOfBounds { x: f64, y: f64 },
    #[error("occupancy grid has {got} cells, expected {expected}")]
    ShapeMismatch { got: usize, expected: usize },
    #[error("obstacle point {0} lies outside the grid")]
    PointOutsideGrid(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdtMethod {
    #[default]
    Exact,
    DeadReckoning,
}

/// Regular grid geometry. Cell `(i, j)` is centred at `origin + resolution * (i, j)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub origin: Vec2,
    pub resolution: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    pub fn center(&self, i: usize, j: usize) -> Vec2 {
        self.origin + Vec2::new(i as f64, j as f64) * self.resolution
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Nearest cell to a world point, if inside the grid.
    pub fn cell_of(&self, p: &Vec2) -> Option<(usize, usize)> {
        let fx = ((p.x - self.origin.x) / self.resolution).round();
        let fy = ((p.y - self.origin.y) / self.resolution).round();
        if fx < 0.0 || fy < 0.0 || !fx.is_finite() || !fy.is_finite() {
            return None;
        }
        let (i, j) = (fx as usize, fy as usize);
        (i < self.nx && j < self.ny).then_some((i, j))
    }

    fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }
}

#[derive(Debug, Clone)]
pub struct ObstacleField {
    points: Vec<Vec2>,
    occupancy: Vec<bool>,
    grid: GridSpec,
    sd: Vec<f64>,
    co: Vec<u32>,
    method: EdtMethod,
}

impl ObstacleField {
    /// Field over the bounding box of `points` grown by `margin`, with each point's cell occupied.
    pub fn from_points(points: Vec<Vec2>, resolution: f64, margin: f64, method: EdtMethod) -> Result<Self, FieldError> {
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(FieldError::BadResolution(resolution));
        }
        if points.is_empty() {
            return Err(FieldError::EmptyObstacleSet);
        }
        let (mut lo, mut hi) = (Vec2::repeat(f64::INFINITY), Vec2::repeat(f64::NEG_INFINITY));
        for p in &points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let origin = ((lo - Vec2::repeat(margin)) / resolution).map(f64::floor) * resolution;
        let nx = (((hi.x + margin - origin.x) / resolution).ceil() as usize) + 1;
        let ny = (((hi.y + margin - origin.y) / resolution).ceil() as usize) + 1;
        let grid = GridSpec { origin, resolution, nx, ny };
        let mut occupancy = vec![false; grid.len()];
        for (k, p) in points.iter().enumerate() {
            let (i, j) = grid.cell_of(p).ok_or(FieldError::PointOutsideGrid(k))?;
            occupancy[grid.index(i, j)] = true;
        }
        Self::from_parts(points, occupancy, grid, method)
    }

    /// Field from an occupancy grid; the obstacle points are the centres of
    /// occupied cells with at least one free 4-neighbour.
    pub fn from_occupancy(occupancy: Vec<bool>, grid: GridSpec, method: EdtMethod) -> Result<Self, FieldError> {
        if occupancy.len() != grid.len() {
            return Err(FieldError::ShapeMismatch { got: occupancy.len(), expected: grid.len() });
        }
        let mut points = Vec::new();
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                if !occupancy[grid.index(i, j)] {
                    continue;
                }
                let free = |di: isize, dj: isize| {
                    let (ni, nj) = (i as isize + di, j as isize + dj);
                    ni >= 0
                        && nj >= 0
                        && (ni as usize) < grid.nx
                        && (nj as usize) < grid.ny
                        && !occupancy[grid.index(ni as usize, nj as usize)]
                };
                if free(-1, 0) || free(1, 0) || free(0, -1) || free(0, 1) {
                    points.push(grid.center(i, j));
                }
            }
        }
        Self::from_parts(points, occupancy, grid, method)
    }

    pub fn from_parts(points: Vec<Vec2>, occupancy: Vec<bool>, grid: GridSpec, method: EdtMethod) -> Result<Self, FieldError> {
        if !(grid.resolution > 0.0 && grid.resolution.is_finite()) {
            return Err(FieldError::BadResolution(grid.resolution));
        }
        if points.is_empty() {
            return Err(FieldError::EmptyObstacleSet);
        }
        if occupancy.len() != grid.len() {
            return Err(FieldError::ShapeMismatch { got: occupancy.len(), expected: grid.len() });
        }
        for (k, p) in points.iter().enumerate() {
            if grid.cell_of(p).is_none() {
                return Err(FieldError::PointOutsideGrid(k));
            }
        }
        let co = match method {
            EdtMethod::Exact => {
                if points_on_centers(&points, &grid) {
                    two_pass_closest(&points, &grid)
                } else {
                    bucketed_closest(&points, &grid)
                }
            }
            EdtMethod::DeadReckoning => dead_reckoning_closest(&points, &grid),
        };
        let mut sd = vec![0.0; grid.len()];
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let idx = grid.index(i, j);
                let d = (grid.center(i, j) - points[co[idx] as usize]).norm();
                sd[idx] = if occupancy[idx] { -d } else { d };
            }
        }
        Ok(Self { points, occupancy, grid, sd, co, method })
    }

    /// Unbounded field without obstacles: every subset stays empty.
    pub fn free(resolution: f64) -> Self {
        let grid = GridSpec { origin: Vec2::zeros(), resolution, nx: 0, ny: 0 };
        Self { points: Vec::new(), occupancy: Vec::new(), grid, sd: Vec::new(), co: Vec::new(), method: EdtMethod::Exact }
    }

    pub fn is_free(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn resolution(&self) -> f64 {
        self.grid.resolution
    }

    pub fn method(&self) -> EdtMethod {
        self.method
    }

    pub fn is_occupied(&self, i: usize, j: usize) -> bool {
        self.occupancy[self.grid.index(i, j)]
    }

    pub fn occupancy(&self) -> &[bool] {
        &self.occupancy
    }

    /// Signed distance stored for cell `(i, j)`.
    pub fn cell_distance(&self, i: usize, j: usize) -> f64 {
        self.sd[self.grid.index(i, j)]
    }

    /// Index into [`points`](Self::points) of the obstacle mapped to cell `(i, j)`.
    pub fn cell_closest(&self, i: usize, j: usize) -> usize {
        self.co[self.grid.index(i, j)] as usize
    }

    pub fn contains(&self, p: &Vec2) -> bool {
        self.grid.cell_of(p).is_some()
    }

    /// Nearest-cell signed distance lookup.
    pub fn signed_distance(&self, p: &Vec2) -> Result<f64, FieldError> {
        let (i, j) = self.grid.cell_of(p).ok_or(FieldError::OutOfBounds { x: p.x, y: p.y })?;
        Ok(self.cell_distance(i, j))
    }

    pub fn closest_obstacle(&self, p: &Vec2) -> Result<(usize, Vec2), FieldError> {
        let (i, j) = self.grid.cell_of(p).ok_or(FieldError::OutOfBounds { x: p.x, y: p.y })?;
        let k = self.cell_closest(i, j);
        Ok((k, self.points[k]))
    }

    /// Central-difference gradient of the signed distance grid at `p`.
    pub fn signed_distance_gradient(&self, p: &Vec2) -> Result<Vec2, FieldError> {
        let h = self.grid.resolution;
        let (ex, ey) = (Vec2::new(h, 0.0), Vec2::new(0.0, h));
        let sample = |q: Vec2| self.signed_distance(&q).or_else(|_| self.signed_distance(p));
        let gx = (sample(p + ex)? - sample(p - ex)?) / (2.0 * h);
        let gy = (sample(p + ey)? - sample(p - ey)?) / (2.0 * h);
        Ok(Vec2::new(gx, gy))
    }
}

fn points_on_centers(points: &[Vec2], grid: &GridSpec) -> bool {
    points.iter().all(|p| match grid.cell_of(p) {
        Some((i, j)) => (grid.center(i, j) - p).norm() <= 1e-9 * grid.resolution,
        None => false,
    })
}

/// Exact transform for sources on cell centres: column pass, then a row pass
/// over the lower envelope of parabolas. Squared distances are integers in
/// cell units, so the nearest source (not just its distance) is exact.
fn two_pass_closest(points: &[Vec2], grid: &GridSpec) -> Vec<u32> {
    let (nx, ny) = (grid.nx, grid.ny);
    // source point per cell; ties between duplicate points keep the lowest index
    let mut source = vec![u32::MAX; grid.len()];
    for (k, p) in points.iter().enumerate() {
        let (i, j) = grid.cell_of(p).expect("validated");
        let slot = &mut source[grid.index(i, j)];
        if *slot == u32::MAX {
            *slot = k as u32;
        }
    }

    // column pass: nearest source row in the same column
    const NONE: i64 = i64::MAX;
    let mut col_dist2 = vec![NONE; grid.len()];
    let mut col_src = vec![u32::MAX; grid.len()];
    for i in 0..nx {
        let mut last: Option<usize> = None;
        for j in 0..ny {
            if source[grid.index(i, j)] != u32::MAX {
                last = Some(j);
            }
            if let Some(s) = last {
                let d = (j - s) as i64;
                col_dist2[grid.index(i, j)] = d * d;
                col_src[grid.index(i, j)] = source[grid.index(i, s)];
            }
        }
        let mut next: Option<usize> = None;
        for j in (0..ny).rev() {
            if source[grid.index(i, j)] != u32::MAX {
                next = Some(j);
            }
            if let Some(s) = next {
                let d = (s - j) as i64;
                let idx = grid.index(i, j);
                if d * d < col_dist2[idx] {
                    col_dist2[idx] = d * d;
                    col_src[idx] = source[grid.index(i, s)];
                }
            }
        }
    }

    // row pass: lower envelope of parabolas f(q) + (x - q)^2
    let mut co = vec![0u32; grid.len()];
    let mut v = vec![0usize; nx];
    let mut z = vec![0.0f64; nx + 1];
    for j in 0..ny {
        let f = |q: usize| col_dist2[grid.index(q, j)];
        let sites: Vec<usize> = (0..nx).filter(|&q| f(q) != NONE).collect();
        if sites.is_empty() {
            // no source in any column yet (cannot happen with nonempty points), keep zero
            continue;
        }
        let mut k = 0usize;
        v[0] = sites[0];
        z[0] = f64::NEG_INFINITY;
        z[1] = f64::INFINITY;
        for &q in &sites[1..] {
            loop {
                let p = v[k];
                let s = ((f(q) + (q * q) as i64) - (f(p) + (p * p) as i64)) as f64 / (2.0 * (q as f64 - p as f64));
                if s <= z[k] {
                    if k == 0 {
                        v[0] = q;
                        z[1] = f64::INFINITY;
                        break;
                    }
                    k -= 1;
                } else {
                    k += 1;
                    v[k] = q;
                    z[k] = s;
                    z[k + 1] = f64::INFINITY;
                    break;
                }
            }
        }
        let mut k = 0usize;
        for x in 0..nx {
            while z[k + 1] < x as f64 {
                k += 1;
            }
            co[grid.index(x, j)] = col_src[grid.index(v[k], j)];
        }
    }
    co
}

/// Exact nearest point by ring search over coarse buckets.
fn bucketed_closest(points: &[Vec2], grid: &GridSpec) -> Vec<u32> {
    const BUCKET_CELLS: usize = 8;
    let bsize = grid.resolution * BUCKET_CELLS as f64;
    let bx = grid.nx.div_ceil(BUCKET_CELLS) + 1;
    let by = grid.ny.div_ceil(BUCKET_CELLS) + 1;
    let lo = grid.origin - Vec2::repeat(0.5 * grid.resolution);
    let bucket_of = |p: &Vec2| {
        let i = (((p.x - lo.x) / bsize).floor().max(0.0) as usize).min(bx - 1);
        let j = (((p.y - lo.y) / bsize).floor().max(0.0) as usize).min(by - 1);
        (i, j)
    };
    let mut buckets: Vec<Vec<u32>> = vec![Vec::new(); bx * by];
    for (k, p) in points.iter().enumerate() {
        let (i, j) = bucket_of(p);
        buckets[j * bx + i].push(k as u32);
    }
    let mut co = vec![0u32; grid.len()];
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let c = grid.center(i, j);
            let (ci, cj) = bucket_of(&c);
            let mut best = (f64::INFINITY, u32::MAX);
            let mut ring = 0usize;
            loop {
                let i0 = ci.saturating_sub(ring);
                let i1 = (ci + ring).min(bx - 1);
                let j0 = cj.saturating_sub(ring);
                let j1 = (cj + ring).min(by - 1);
                for bj in j0..=j1 {
                    for bi in i0..=i1 {
                        let on_ring = bi == i0 || bi == i1 || bj == j0 || bj == j1;
                        if ring > 0 && !on_ring {
                            continue;
                        }
                        for &k in &buckets[bj * bx + bi] {
                            let d = (c - points[k as usize]).norm_squared();
                            if d < best.0 || (d == best.0 && k < best.1) {
                                best = (d, k);
                            }
                        }
                    }
                }
                // anything outside the searched square is at least `ring * bsize` away
                let reach = ring as f64 * bsize;
                let exhausted = i0 == 0 && j0 == 0 && i1 == bx - 1 && j1 == by - 1;
                if (best.1 != u32::MAX && best.0 <= reach * reach) || exhausted {
                    break;
                }
                ring += 1;
            }
            co[grid.index(i, j)] = best.1;
        }
    }
    co
}

/// Dead-reckoning transform: forward and backward raster sweeps over 8-neighbours.
fn dead_reckoning_closest(points: &[Vec2], grid: &GridSpec) -> Vec<u32> {
    let mut d = vec![f64::INFINITY; grid.len()];
    let mut co = vec![u32::MAX; grid.len()];
    for (k, p) in points.iter().enumerate() {
        let (i, j) = grid.cell_of(p).expect("validated");
        let idx = grid.index(i, j);
        let dist = (grid.center(i, j) - p).norm();
        if dist < d[idx] {
            d[idx] = dist;
            co[idx] = k as u32;
        }
    }
    let (nx, ny) = (grid.nx as isize, grid.ny as isize);
    let relax = |i: isize, j: isize, di: isize, dj: isize, d: &mut [f64], co: &mut [u32]| {
        let (ni, nj) = (i + di, j + dj);
        if ni < 0 || nj < 0 || ni >= nx || nj >= ny {
            return;
        }
        let nb = grid.index(ni as usize, nj as usize);
        if co[nb] == u32::MAX {
            return;
        }
        let idx = grid.index(i as usize, j as usize);
        let cand = (grid.center(i as usize, j as usize) - points[co[nb] as usize]).norm();
        if cand < d[idx] {
            d[idx] = cand;
            co[idx] = co[nb];
        }
    };
    for j in 0..ny {
        for i in 0..nx {
            for (di, dj) in [(-1, -1), (0, -1), (1, -1), (-1, 0)] {
                relax(i, j, di, dj, &mut d, &mut co);
            }
        }
        for i in (0..nx).rev() {
            relax(i, j, 1, 0, &mut d, &mut co);
        }
    }
    for j in (0..ny).rev() {
        for i in (0..nx).rev() {
            for (di, dj) in [(1, 1), (0, 1), (-1, 1), (1, 0)] {
                relax(i, j, di, dj, &mut d, &mut co);
            }
        }
        for i in 0..nx {
            relax(i, j, -1, 0, &mut d, &mut co);
        }
    }
    co
}

/// Parameters of the closest-obstacle identification and subset update.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsetParams {
    /// Grid-search signed distance below which the footprint counts as penetrating.
    pub eps_inside: f64,
    /// Tie window of the grid search; `None` means 1.5 × field resolution.
    pub eps_gs: Option<f64>,
    /// Obstacles within this distance of the polygon join the subset. Must exceed `r_shp`.
    pub eps_cl: f64,
    pub boundary_spacing: f64,
    /// Maximum subset size per stage.
    pub cap: usize,
    /// Interior lattice for fully enclosed obstacles; off by default.
    pub interior_search: bool,
}

impl Default for SubsetParams {
    fn default() -> Self {
        Self { eps_inside: 0.03, eps_gs: None, eps_cl: 0.5, boundary_spacing: 0.016, cap: 25, interior_search: false }
    }
}

impl SubsetParams {
    pub fn eps_gs_for(&self, field: &ObstacleField) -> f64 {
        self.eps_gs.unwrap_or(1.5 * field.resolution())
    }
}

/// Body-frame search points for the grid search, computed once per polygon.
#[derive(Debug, Clone)]
pub struct SearchGrid {
    pub points: Vec<Vec2>,
}

impl SearchGrid {
    pub fn new(poly: &PaddedPolygon, params: &SubsetParams) -> Self {
        let mut points = boundary_grid(poly, params.boundary_spacing);
        if params.interior_search {
            points.extend(interior_grid(poly, 4.0 * params.boundary_spacing));
        }
        Self { points }
    }
}

/// Per-stage obstacle subsets.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ObstacleSubset {
    pub indices: Vec<Vec<usize>>,
    pub penetration: Vec<bool>,
}

impl ObstacleSubset {
    pub fn empty(stages: usize) -> Self {
        Self { indices: vec![Vec::new(); stages], penetration: vec![false; stages] }
    }

    pub fn stages(&self) -> usize {
        self.indices.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.indices.iter().map(Vec::len).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageUpdate {
    pub indices: Vec<usize>,
    pub penetration: bool,
    /// Body-frame samples within the tie window of the grid-search minimum.
    pub worst_boundary_points: Vec<Vec2>,
    /// Minimum grid signed distance over the search points.
    pub sd_gs: f64,
}

/// Closest-obstacle identification and subset update for one stage.
pub fn update_obs_subset(
    field: &ObstacleField,
    poly: &PaddedPolygon,
    pose: &Pose2,
    prev: &[usize],
    params: &SubsetParams,
    search: &SearchGrid,
) -> Result<StageUpdate, FieldError> {
    if field.is_free() {
        return Ok(StageUpdate { indices: Vec::new(), penetration: false, worst_boundary_points: Vec::new(), sd_gs: f64::INFINITY });
    }
    let sds: Vec<f64> = search
        .points
        .iter()
        .map(|g| field.signed_distance(&pose.to_world(g)))
        .collect::<Result<_, _>>()?;
    let sd_gs = sds.iter().copied().fold(f64::INFINITY, f64::min);
    let window = sd_gs + params.eps_gs_for(field);
    let worst: Vec<Vec2> =
        search.points.iter().zip(&sds).filter(|(_, &d)| d <= window).map(|(g, _)| *g).collect();

    if sd_gs < params.eps_inside {
        return Ok(StageUpdate { indices: prev.to_vec(), penetration: true, worst_boundary_points: worst, sd_gs });
    }

    let mut indices = prev.to_vec();
    for g in &worst {
        let p = pose.to_world(g);
        let (k, po) = field.closest_obstacle(&p)?;
        if (p - po).norm() <= params.eps_cl && !indices.contains(&k) {
            indices.push(k);
        }
    }
    while indices.len() > params.cap {
        // evict the member with the smallest (most inactive) constraint value r_shp - distance;
        // on ties the earliest member goes
        let (pos, _) = indices
            .iter()
            .enumerate()
            .map(|(pos, &k)| {
                let (_, dist) = project_point_onto_polygon(poly, &pose.to_body(&field.points[k]));
                (pos, poly.r_shp() - dist)
            })
            .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
        indices.remove(pos);
    }
    Ok(StageUpdate { indices, penetration: false, worst_boundary_points: worst, sd_gs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force(field: &ObstacleField, i: usize, j: usize) -> f64 {
        let c = field.grid().center(i, j);
        field.points().iter().map(|p| (c - p).norm()).fold(f64::INFINITY, f64::min)
    }

    fn random_occupancy(seed: u64, n: usize, density: f64) -> (Vec<bool>, GridSpec) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = GridSpec { origin: Vec2::new(-0.3, 0.7), resolution: 0.05, nx: n, ny: n };
        let mut occ: Vec<bool> = (0..n * n).map(|_| rng.random::<f64>() < density).collect();
        occ[n * n / 2] = true;
        (occ, grid)
    }

    #[test]
    fn single_center_cell() {
        let rho = 0.1;
        let grid = GridSpec { origin: Vec2::zeros(), resolution: rho, nx: 3, ny: 3 };
        let mut occ = vec![false; 9];
        occ[4] = true;
        for method in [EdtMethod::Exact, EdtMethod::DeadReckoning] {
            let field = ObstacleField::from_occupancy(occ.clone(), grid, method).unwrap();
            assert_eq!(field.points().len(), 1);
            let s2 = 2f64.sqrt();
            let expected = [[s2, 1.0, s2], [1.0, 0.0, 1.0], [s2, 1.0, s2]];
            for j in 0..3 {
                for i in 0..3 {
                    let d = field.cell_distance(i, j);
                    assert!((d.abs() - rho * expected[j][i]).abs() < 1e-15);
                }
            }
            let center = field.cell_distance(1, 1);
            assert!(center <= 0.0 && center.is_sign_negative());
            assert!(field.cell_distance(0, 0) > 0.0);
        }
    }

    #[test]
    fn exact_matches_brute_force_on_random_grids() {
        for seed in 0..4 {
            let (occ, grid) = random_occupancy(seed, 64, 0.02 + 0.03 * seed as f64);
            let field = ObstacleField::from_occupancy(occ, grid, EdtMethod::Exact).unwrap();
            for j in 0..64 {
                for i in 0..64 {
                    let bf = brute_force(&field, i, j);
                    assert!((field.cell_distance(i, j).abs() - bf).abs() <= 1e-9 * grid.resolution);
                }
            }
        }
    }

    #[test]
    fn dead_reckoning_within_cell_diagonal() {
        for seed in 10..14 {
            let (occ, grid) = random_occupancy(seed, 64, 0.01);
            let field = ObstacleField::from_occupancy(occ, grid, EdtMethod::DeadReckoning).unwrap();
            for j in 0..64 {
                for i in 0..64 {
                    let bf = brute_force(&field, i, j);
                    let d = field.cell_distance(i, j).abs();
                    let c = grid.center(i, j);
                    let to_co = (c - field.points()[field.cell_closest(i, j)]).norm();
                    assert!(d >= bf - 1e-12);
                    assert!(d - bf <= grid.resolution * 2f64.sqrt());
                    assert!((to_co - d).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn off_center_points_use_exact_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let points: Vec<Vec2> = (0..200).map(|_| Vec2::new(rng.random_range(0.0..3.0), rng.random_range(0.0..2.0))).collect();
        let field = ObstacleField::from_points(points, 0.04, 0.5, EdtMethod::Exact).unwrap();
        let g = *field.grid();
        for j in (0..g.ny).step_by(3) {
            for i in (0..g.nx).step_by(3) {
                assert!((field.cell_distance(i, j).abs() - brute_force(&field, i, j)).abs() <= 1e-9 * g.resolution);
            }
        }
    }

    #[test]
    fn sign_follows_occupancy() {
        let (occ, grid) = random_occupancy(3, 32, 0.2);
        let field = ObstacleField::from_occupancy(occ, grid, EdtMethod::Exact).unwrap();
        for j in 0..32 {
            for i in 0..32 {
                let d = field.cell_distance(i, j);
                if field.is_occupied(i, j) {
                    assert!(d.is_sign_negative());
                } else {
                    assert!(d > 0.0);
                }
            }
        }
        for p in field.points() {
            let (i, j) = grid.cell_of(p).unwrap();
            assert!(field.is_occupied(i, j));
        }
    }

    #[test]
    fn lookups() {
        let rho = 0.02;
        let field = ObstacleField::from_points(vec![Vec2::new(1.0, 1.0)], rho, 1.5, EdtMethod::Exact).unwrap();
        assert!(field.signed_distance(&Vec2::new(1.0, 1.0)).unwrap() <= 0.0);
        assert_eq!(field.closest_obstacle(&Vec2::new(1.0, 1.0)).unwrap(), (0, Vec2::new(1.0, 1.0)));
        let sd = field.signed_distance(&Vec2::new(1.6, 1.8)).unwrap();
        assert!((sd - 1.0).abs() <= rho * 2f64.sqrt());
        assert!(matches!(field.signed_distance(&Vec2::new(10.0, 1.0)), Err(FieldError::OutOfBounds { .. })));
        assert!(matches!(
            ObstacleField::from_points(vec![], 0.1, 1.0, EdtMethod::Exact),
            Err(FieldError::EmptyObstacleSet)
        ));
    }

    #[test]
    fn random_queries_against_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let points: Vec<Vec2> = (0..300).map(|_| Vec2::new(rng.random_range(0.0..4.0), rng.random_range(0.0..4.0))).collect();
        let rho = 0.02;
        for method in [EdtMethod::Exact, EdtMethod::DeadReckoning] {
            let field = ObstacleField::from_points(points.clone(), rho, 0.5, method).unwrap();
            for _ in 0..100 {
                let p = Vec2::new(rng.random_range(-0.4..4.4), rng.random_range(-0.4..4.4));
                let truth = points.iter().map(|o| (p - o).norm()).fold(f64::INFINITY, f64::min);
                let sd = field.signed_distance(&p).unwrap().abs();
                assert!((sd - truth).abs() <= rho * 2f64.sqrt(), "{method:?}: {sd} vs {truth}");
                let (_, co) = field.closest_obstacle(&p).unwrap();
                assert!((p - co).norm() <= truth + rho * 2f64.sqrt());
            }
        }
    }

    fn square() -> PaddedPolygon {
        PaddedPolygon::from_pairs(&[[-0.3, -0.2], [0.3, -0.2], [0.3, 0.2], [-0.3, 0.2]], 0.2).unwrap()
    }

    #[test]
    fn far_robot_leaves_subset_unchanged() {
        let field = ObstacleField::from_points(vec![Vec2::new(2.0, 0.0)], 0.02, 3.0, EdtMethod::Exact).unwrap();
        let params = SubsetParams::default();
        let poly = square();
        let search = SearchGrid::new(&poly, &params);
        let up = update_obs_subset(&field, &poly, &Pose2::new(0.0, 0.0, 0.0), &[], &params, &search).unwrap();
        assert!(up.indices.is_empty());
        assert!(!up.penetration);
    }

    #[test]
    fn close_obstacle_is_added() {
        // footprint edge at x = 0.3, obstacle 0.25 m beyond it
        let pts = vec![Vec2::new(3.0, 3.0), Vec2::new(0.55, 0.0)];
        let field = ObstacleField::from_points(pts, 0.01, 1.0, EdtMethod::Exact).unwrap();
        let params = SubsetParams { eps_cl: 0.5, ..SubsetParams::default() };
        let poly = square();
        let search = SearchGrid::new(&poly, &params);
        let pose = Pose2::new(0.0, 0.0, 0.0);
        let (_, direct) = project_point_onto_polygon(&poly, &pose.to_body(&field.points()[1]));
        assert!((direct - 0.25).abs() < 1e-12);
        let up = update_obs_subset(&field, &poly, &pose, &[], &params, &search).unwrap();
        assert_eq!(up.indices, vec![1]);
        assert!(!up.penetration);
        assert!((up.sd_gs - 0.25).abs() <= 0.01 * 2f64.sqrt());
    }

    #[test]
    fn penetration_returns_previous_subset() {
        let pts: Vec<Vec2> = (0..40).map(|k| Vec2::new(0.1, -0.4 + 0.02 * k as f64)).collect();
        let field = ObstacleField::from_points(pts, 0.02, 1.0, EdtMethod::Exact).unwrap();
        let params = SubsetParams::default();
        let poly = square();
        let search = SearchGrid::new(&poly, &params);
        let up = update_obs_subset(&field, &poly, &Pose2::new(0.0, 0.0, 0.0), &[3, 5], &params, &search).unwrap();
        assert!(up.penetration);
        assert_eq!(up.indices, vec![3, 5]);
        assert!(!up.worst_boundary_points.is_empty());
    }

    #[test]
    fn cap_evicts_most_inactive_member() {
        let pts = vec![Vec2::new(0.5, 0.0), Vec2::new(0.0, 0.45), Vec2::new(-0.75, 0.0)];
        let field = ObstacleField::from_points(pts, 0.01, 1.0, EdtMethod::Exact).unwrap();
        let params = SubsetParams { cap: 2, ..SubsetParams::default() };
        let poly = square();
        let search = SearchGrid::new(&poly, &params);
        let pose = Pose2::new(0.0, 0.0, 0.0);
        // obstacle 0 joins as the closest; 2 is 0.45 m away, the farthest
        let up = update_obs_subset(&field, &poly, &pose, &[2, 1], &params, &search).unwrap();
        assert_eq!(up.indices, vec![1, 0]);
    }

    #[test]
    fn exiting_the_map_is_an_error() {
        let field = ObstacleField::from_points(vec![Vec2::new(0.0, 0.0)], 0.02, 0.5, EdtMethod::Exact).unwrap();
        let params = SubsetParams::default();
        let poly = square();
        let search = SearchGrid::new(&poly, &params);
        let r = update_obs_subset(&field, &poly, &Pose2::new(5.0, 0.0, 0.0), &[], &params, &search);
        assert!(matches!(r, Err(FieldError::OutOfBounds { .. })));
    }

    #[test]
    fn grid_search_soundness() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let points: Vec<Vec2> = (0..150).map(|_| Vec2::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0))).collect();
        let field = ObstacleField::from_points(points.clone(), 0.01, 1.0, EdtMethod::Exact).unwrap();
        let poly = PaddedPolygon::reference_robot();
        let params = SubsetParams::default();
        let search = SearchGrid::new(&poly, &params);
        let fine = boundary_grid(&poly, params.boundary_spacing / 10.0);
        let mut checked = 0;
        while checked < 100 {
            let pose = Pose2::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), rng.random_range(-3.0..3.0));
            if points.iter().any(|p| poly.contains(&pose.to_body(p))) {
                continue;
            }
            let up = update_obs_subset(&field, &poly, &pose, &[], &params, &search).unwrap();
            let truth = fine
                .iter()
                .map(|g| {
                    let w = pose.to_world(g);
                    points.iter().map(|p| (w - p).norm()).fold(f64::INFINITY, f64::min)
                })
                .fold(f64::INFINITY, f64::min);
            assert!(up.sd_gs >= truth - params.boundary_spacing, "{} vs {}", up.sd_gs, truth);
            checked += 1;
        }
    }

    #[test]
    fn update_is_monotone_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let points: Vec<Vec2> = (0..400).map(|_| Vec2::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0))).collect();
        let field = ObstacleField::from_points(points, 0.02, 1.0, EdtMethod::Exact).unwrap();
        let poly = PaddedPolygon::reference_robot();
        let params = SubsetParams { cap: 1000, eps_inside: -1.0, ..SubsetParams::default() };
        let search = SearchGrid::new(&poly, &params);
        let mut prev = Vec::new();
        for _ in 0..20 {
            let pose = Pose2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-3.0..3.0));
            let a = update_obs_subset(&field, &poly, &pose, &prev, &params, &search).unwrap();
            let b = update_obs_subset(&field, &poly, &pose, &prev, &params, &search).unwrap();
            assert_eq!(a, b);
            assert!(prev.iter().all(|k| a.indices.contains(k)));
            prev = a.indices;
        }
    }
}
