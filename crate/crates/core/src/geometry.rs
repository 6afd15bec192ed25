//! Planar poses and padded convex polygons.
//!
//! The robot footprint is a convex polygon `A γ + b ≤ 0` (body frame) grown by
//! a disk of radius `r_shp`. Everything downstream works with the body-frame
//! reduction: the distance between an obstacle `p_o` and the posed polygon is
//! the distance between `Rᵀ(p_o − p_c)` and the body-frame polygon.

use nalgebra::{Matrix2, Vector2};
use thiserror::Error;

pub type Vec2 = Vector2<f64>;

/// Minimum gap between consecutive vertices.
const VERTEX_GAP: f64 = 1e-9;
/// Relative cross-product magnitude below which a corner counts as collinear.
const COLLINEAR_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("polygon is not convex: {0}")]
    NonConvexPolygon(String),
    #[error("degenerate polygon: {0}")]
    DegeneratePolygon(String),
}

/// Rigid planar pose. `theta` is measured so that `R(theta)` maps body to world.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Pose2 {
    pub px: f64,
    pub py: f64,
    pub theta: f64,
}

impl Pose2 {
    pub fn new(px: f64, py: f64, theta: f64) -> Self {
        debug_assert!(theta.is_finite());
        Self { px, py, theta }
    }

    /// Pose from the leading `(px, py, θ)` components of a robot state.
    pub fn from_state(x: &[f64]) -> Self {
        Self::new(x[0], x[1], x[2])
    }

    pub fn translation(&self) -> Vec2 {
        Vec2::new(self.px, self.py)
    }

    pub fn rotation(&self) -> Matrix2<f64> {
        rotation(self.theta)
    }

    /// `p_c + R γ`.
    pub fn to_world(&self, gamma: &Vec2) -> Vec2 {
        self.translation() + self.rotation() * gamma
    }

    /// `Rᵀ (p − p_c)`.
    pub fn to_body(&self, p: &Vec2) -> Vec2 {
        self.rotation().transpose() * (p - self.translation())
    }
}

pub fn rotation(theta: f64) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// The 2D cross-product generator `[1]_× = [[0, -1], [1, 0]]`.
pub fn skew() -> Matrix2<f64> {
    Matrix2::new(0.0, -1.0, 1.0, 0.0)
}

fn cross(a: &Vec2, b: &Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Convex polygon with circular padding.
///
/// Holds both the vertex and the half-plane representation. Half-plane rows are
/// unit outward normals, one per edge `vertices[i] -> vertices[i + 1]`, so the
/// offsets `b` carry meters.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedPolygon {
    vertices: Vec<Vec2>,
    normals: Vec<Vec2>,
    offsets: Vec<f64>,
    r_shp: f64,
    max_vertex_norm: f64,
}

impl PaddedPolygon {
    pub fn new(vertices: Vec<Vec2>, r_shp: f64) -> Result<Self, GeometryError> {
        if !(r_shp > 0.0 && r_shp.is_finite()) {
            return Err(GeometryError::DegeneratePolygon(format!(
                "padding radius must be positive, got {r_shp}"
            )));
        }
        let (normals, offsets) = halfplanes_from_vertices(&vertices)?;
        let max_vertex_norm = vertices.iter().map(|v| v.norm()).fold(0.0, f64::max);
        Ok(Self { vertices, normals, offsets, r_shp, max_vertex_norm })
    }

    /// Footprint of the differential-drive robot used throughout the experiments.
    pub fn reference_robot() -> Self {
        Self::new(reference_robot_vertices(), 0.2).expect("reference footprint is valid")
    }

    pub fn from_pairs(vertices: &[[f64; 2]], r_shp: f64) -> Result<Self, GeometryError> {
        Self::new(vertices.iter().map(|v| Vec2::new(v[0], v[1])).collect(), r_shp)
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    /// Rows of `A`.
    pub fn normals(&self) -> &[Vec2] {
        &self.normals
    }

    /// Entries of `b`.
    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn r_shp(&self) -> f64 {
        self.r_shp
    }

    /// `max_{γ ∈ Γ} ‖γ‖₂`, attained at a vertex.
    pub fn max_vertex_norm(&self) -> f64 {
        self.max_vertex_norm
    }

    pub fn with_padding(&self, r_shp: f64) -> Result<Self, GeometryError> {
        Self::new(self.vertices.clone(), r_shp)
    }

    /// Largest half-plane residual `max_i (A_i γ + b_i)`; non-positive inside.
    pub fn max_violation(&self, gamma: &Vec2) -> f64 {
        self.normals
            .iter()
            .zip(&self.offsets)
            .map(|(n, b)| n.dot(gamma) + b)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contains(&self, gamma: &Vec2) -> bool {
        self.max_violation(gamma) <= 0.0
    }

    pub fn perimeter(&self) -> f64 {
        let n = self.vertices.len();
        (0..n).map(|i| (self.vertices[(i + 1) % n] - self.vertices[i]).norm()).sum()
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices)
    }
}

/// Vertices of the reference robot footprint, counter-clockwise.
pub fn reference_robot_vertices() -> Vec<Vec2> {
    vec![
        Vec2::new(-0.18, -0.11),
        Vec2::new(0.45, -0.11),
        Vec2::new(0.45, 0.11),
        Vec2::new(-0.18, 0.11),
        Vec2::new(-0.33, 0.0),
    ]
}

fn signed_area(vertices: &[Vec2]) -> f64 {
    let n = vertices.len();
    0.5 * (0..n).map(|i| cross(&vertices[i], &vertices[(i + 1) % n])).sum::<f64>()
}

/// Half-plane form `(A, b)` of a convex counter-clockwise polygon.
pub fn halfplanes_from_vertices(vertices: &[Vec2]) -> Result<(Vec<Vec2>, Vec<f64>), GeometryError> {
    let n = vertices.len();
    if n < 3 {
        return Err(GeometryError::DegeneratePolygon(format!("need at least 3 vertices, got {n}")));
    }
    if vertices.iter().any(|v| !v.x.is_finite() || !v.y.is_finite()) {
        return Err(GeometryError::DegeneratePolygon("non-finite vertex".into()));
    }
    let edges: Vec<Vec2> = (0..n).map(|i| vertices[(i + 1) % n] - vertices[i]).collect();
    for (i, e) in edges.iter().enumerate() {
        if e.norm() <= VERTEX_GAP {
            return Err(GeometryError::DegeneratePolygon(format!(
                "vertices {i} and {} coincide",
                (i + 1) % n
            )));
        }
    }
    if signed_area(vertices) <= 0.0 {
        return Err(GeometryError::NonConvexPolygon(
            "vertices must be counter-clockwise with positive area".into(),
        ));
    }
    let mut turning = 0.0;
    for i in 0..n {
        let (a, b) = (&edges[i], &edges[(i + 1) % n]);
        let c = cross(a, b) / (a.norm() * b.norm());
        if c.abs() <= COLLINEAR_TOL {
            return Err(GeometryError::DegeneratePolygon(format!(
                "vertex {} is collinear with its neighbours",
                (i + 1) % n
            )));
        }
        if c < 0.0 {
            return Err(GeometryError::NonConvexPolygon(format!("reflex turn at vertex {}", (i + 1) % n)));
        }
        turning += c.atan2(a.dot(b) / (a.norm() * b.norm()));
    }
    // all left turns but winding twice around: a star, not a convex polygon
    if (turning - std::f64::consts::TAU).abs() > 1e-6 {
        return Err(GeometryError::NonConvexPolygon("polygon winds more than once".into()));
    }
    let mut normals = Vec::with_capacity(n);
    let mut offsets = Vec::with_capacity(n);
    for (i, e) in edges.iter().enumerate() {
        let normal = Vec2::new(e.y, -e.x) / e.norm();
        offsets.push(-normal.dot(&vertices[i]));
        normals.push(normal);
    }
    Ok((normals, offsets))
}

fn project_onto_segment(a: &Vec2, b: &Vec2, q: &Vec2) -> Vec2 {
    let e = b - a;
    let t = ((q - a).dot(&e) / e.norm_squared()).clamp(0.0, 1.0);
    a + e * t
}

/// Euclidean projection of a body-frame point onto the (unpadded) polygon.
///
/// Returns the projected point and the distance from `q` to it. Interior points
/// project onto themselves. Equidistant edges resolve to the lowest index.
pub fn project_point_onto_polygon(poly: &PaddedPolygon, q: &Vec2) -> (Vec2, f64) {
    if poly.contains(q) {
        return (*q, 0.0);
    }
    let n = poly.vertices.len();
    let mut best = (poly.vertices[0], f64::INFINITY);
    for i in 0..n {
        let p = project_onto_segment(&poly.vertices[i], &poly.vertices[(i + 1) % n], q);
        let d = (q - p).norm();
        if d < best.1 {
            best = (p, d);
        }
    }
    best
}

/// Samples along the polygon boundary, at most `spacing` apart, vertices included.
pub fn boundary_grid(poly: &PaddedPolygon, spacing: f64) -> Vec<Vec2> {
    assert!(spacing > 0.0, "boundary spacing must be positive");
    let n = poly.vertices.len();
    let mut out = Vec::new();
    for i in 0..n {
        let a = poly.vertices[i];
        let e = poly.vertices[(i + 1) % n] - a;
        let pieces = ((e.norm() / spacing).ceil() as usize).max(1);
        for j in 0..pieces {
            out.push(a + e * (j as f64 / pieces as f64));
        }
    }
    out
}

/// Coarse lattice of interior points, used to detect obstacles fully inside the footprint.
pub fn interior_grid(poly: &PaddedPolygon, spacing: f64) -> Vec<Vec2> {
    assert!(spacing > 0.0, "interior spacing must be positive");
    let (mut lo, mut hi) = (Vec2::repeat(f64::INFINITY), Vec2::repeat(f64::NEG_INFINITY));
    for v in &poly.vertices {
        lo = lo.inf(v);
        hi = hi.sup(v);
    }
    let nx = ((hi.x - lo.x) / spacing).floor() as usize;
    let ny = ((hi.y - lo.y) / spacing).floor() as usize;
    let mut out = Vec::new();
    for i in 1..=nx {
        for j in 1..=ny {
            let p = Vec2::new(lo.x + i as f64 * spacing, lo.y + j as f64 * spacing);
            if poly.max_violation(&p) < 0.0 {
                out.push(p);
            }
        }
    }
    out
}
