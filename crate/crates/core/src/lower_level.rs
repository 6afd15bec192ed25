//! Lower-level problems: the worst-case shape point for one obstacle.
//!
//! The nominal problem is the distance from the obstacle (body frame) to the
//! polygon. The robust problem additionally lets the robot translate inside
//! the ellipse `E(0, P_t)` and asks for the distance between the obstacle and
//! `Γ ⊕ E(0, P_t)`, i.e. the distance between `Γ` and `q − E`.

use crate::geometry::{project_point_onto_polygon, PaddedPolygon, Pose2, Vec2};
use nalgebra::{DMatrix, DVector, Matrix2, SymmetricEigen};
use thiserror::Error;

const MAX_ALTERNATIONS: usize = 200;
const STEP_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LowerLevelError {
    #[error("alternating projections diverged (step {step:.3e} after {iterations} alternations)")]
    NoConvergence { step: f64, iterations: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NominalMaximizer {
    /// Closest polygon point, body frame.
    pub gamma_shp_star: Vec2,
    pub distance: f64,
    /// `p_c + R γ* − p_o`, world frame.
    pub eta: Vec2,
}

pub fn solve_nominal(poly: &PaddedPolygon, pose: &Pose2, p_o: &Vec2) -> NominalMaximizer {
    let q = pose.to_body(p_o);
    let (gamma, distance) = project_point_onto_polygon(poly, &q);
    let eta = pose.to_world(&gamma) - p_o;
    NominalMaximizer { gamma_shp_star: gamma, distance, eta }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustMaximizer {
    pub gamma_shp_star: Vec2,
    /// Worst-case body-frame translation `J_t Σ^{1/2} γ_tn*`, a point of `E(0, P_t)`.
    pub translation_star: Vec2,
    /// Distance between the obstacle and the translated polygon point.
    pub distance: f64,
    pub alternations: usize,
}

impl RobustMaximizer {
    /// Minimum-norm `γ_tn` with `M γ_tn = translation_star`, where `M = J_t Σ^{1/2}`.
    pub fn gamma_tn(&self, m: &DMatrix<f64>) -> DVector<f64> {
        let d = DVector::from_column_slice(self.translation_star.as_slice());
        let svd = m.clone().svd(true, true);
        let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
        let tol = 1e-12 * smax.max(f64::MIN_POSITIVE);
        svd.pseudo_inverse(tol).map(|pinv| pinv * d).unwrap_or_else(|_| DVector::zeros(m.ncols()))
    }
}

/// Spectral form of a 2×2 PSD shape matrix with negligible eigenvalues zeroed.
#[derive(Debug, Clone, Copy)]
struct Ellipse {
    axes: Matrix2<f64>,
    lambda: [f64; 2],
}

impl Ellipse {
    fn new(p: &Matrix2<f64>) -> Self {
        let sym = (p + p.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let mut order = [0usize, 1];
        if eig.eigenvalues[1] > eig.eigenvalues[0] {
            order = [1, 0];
        }
        let lmax = eig.eigenvalues[order[0]].max(0.0);
        let clamp = |l: f64| if l <= 1e-12 * lmax || l <= 0.0 { 0.0 } else { l };
        let axes = Matrix2::from_columns(&[eig.eigenvectors.column(order[0]).into_owned(), eig.eigenvectors.column(order[1]).into_owned()]);
        Self { axes, lambda: [clamp(lmax), clamp(eig.eigenvalues[order[1]])] }
    }

    fn project(&self, y: &Vec2) -> Vec2 {
        let [l1, l2] = self.lambda;
        if l1 == 0.0 {
            return Vec2::zeros();
        }
        let yl = self.axes.transpose() * y;
        let local = if l2 == 0.0 {
            // the ellipse collapses onto its major axis
            let half = l1.sqrt();
            Vec2::new(yl.x.clamp(-half, half), 0.0)
        } else if yl.x * yl.x / l1 + yl.y * yl.y / l2 <= 1.0 {
            yl
        } else {
            // Newton on g(μ) = Σ λ y² / (λ + μ)² − 1, convex and decreasing, from the left of its root
            let g = |mu: f64| {
                let (a, b) = (l1 + mu, l2 + mu);
                let val = l1 * yl.x * yl.x / (a * a) + l2 * yl.y * yl.y / (b * b) - 1.0;
                let der = -2.0 * (l1 * yl.x * yl.x / (a * a * a) + l2 * yl.y * yl.y / (b * b * b));
                (val, der)
            };
            let mut mu = 0.0f64;
            for _ in 0..100 {
                let (val, der) = g(mu);
                let next = mu - val / der;
                if !(next > mu) || (next - mu) <= 1e-15 * next.max(1e-300) {
                    mu = next.max(mu);
                    break;
                }
                mu = next;
            }
            Vec2::new(l1 * yl.x / (l1 + mu), l2 * yl.y / (l2 + mu))
        };
        self.axes * local
    }

    /// Support function `sqrt(uᵀ P u)`.
    fn support(&self, u: &Vec2) -> f64 {
        let ul = self.axes.transpose() * u;
        (self.lambda[0] * ul.x * ul.x + self.lambda[1] * ul.y * ul.y).sqrt()
    }

    /// A maximizer of `uᵀd` over the ellipse, `P u / sqrt(uᵀ P u)`.
    fn support_point(&self, u: &Vec2) -> Vec2 {
        let h = self.support(u);
        if h <= 0.0 {
            return Vec2::zeros();
        }
        let ul = self.axes.transpose() * u;
        self.axes * Vec2::new(self.lambda[0] * ul.x / h, self.lambda[1] * ul.y / h)
    }
}

/// Translation-robust distance between an obstacle and the polygon.
///
/// `p_t` is the body-frame translational shape matrix `J_t Σ J_tᵀ`. Negative
/// eigenvalues are clamped to zero.
///
/// The boundary of `Γ ⊕ E` is covered by the polygon edges shifted by the
/// ellipse support point of their normal and by the ellipses centred at the
/// vertices, so the distance from outside is the minimum over those pieces.
/// The support function separates the inside case, where alternating
/// projections supply a witness pair with `γ* + d* ≈ q`.
pub fn solve_robust(poly: &PaddedPolygon, pose: &Pose2, p_o: &Vec2, p_t: &Matrix2<f64>) -> Result<RobustMaximizer, LowerLevelError> {
    let q = pose.to_body(p_o);
    let ellipse = Ellipse::new(p_t);
    if ellipse.lambda[0] == 0.0 {
        let (gamma, distance) = project_point_onto_polygon(poly, &q);
        return Ok(RobustMaximizer { gamma_shp_star: gamma, translation_star: Vec2::zeros(), distance, alternations: 0 });
    }
    let verts = poly.vertices();
    let n = verts.len();
    let mut best = (f64::INFINITY, Vec2::zeros(), Vec2::zeros());
    for v in verts {
        let d = ellipse.project(&(q - v));
        let dist = (q - v - d).norm();
        if dist < best.0 {
            best = (dist, *v, d);
        }
    }
    for i in 0..n {
        let (a, b) = (verts[i], verts[(i + 1) % n]);
        let s = ellipse.support_point(&poly.normals()[i]);
        let e = b - a;
        let t = ((q - s - a).dot(&e) / e.norm_squared()).clamp(0.0, 1.0);
        let gamma = a + e * t;
        let dist = (q - s - gamma).norm();
        if dist < best.0 {
            best = (dist, gamma, s);
        }
    }
    let (dist, gamma, d) = best;
    if dist > 0.0 {
        let u = (q - gamma - d) / dist;
        let support = verts.iter().map(|v| u.dot(v)).fold(f64::NEG_INFINITY, f64::max) + ellipse.support(&u);
        if u.dot(&q) - support > 0.5 * dist {
            return Ok(RobustMaximizer { gamma_shp_star: gamma, translation_star: d, distance: dist, alternations: 0 });
        }
    } else {
        return Ok(RobustMaximizer { gamma_shp_star: gamma, translation_star: d, distance: 0.0, alternations: 0 });
    }
    intersecting_witness(poly, &ellipse, &q)
}

/// Alternating projections between `Γ` and `q − E` when the two intersect.
fn intersecting_witness(poly: &PaddedPolygon, ellipse: &Ellipse, q: &Vec2) -> Result<RobustMaximizer, LowerLevelError> {
    let (mut gamma, _) = project_point_onto_polygon(poly, q);
    let mut d = ellipse.project(&(q - gamma));
    let mut objective = (gamma + d - q).norm();
    let mut step = f64::INFINITY;
    let mut iterations = 0;
    while iterations < MAX_ALTERNATIONS {
        iterations += 1;
        let (gamma_next, _) = project_point_onto_polygon(poly, &(q - d));
        let d_next = ellipse.project(&(q - gamma_next));
        step = (gamma_next - gamma).norm() + (d_next - d).norm();
        let next_objective = (gamma_next + d_next - q).norm();
        debug_assert!(next_objective <= objective + 1e-12, "alternation increased the objective");
        gamma = gamma_next;
        d = d_next;
        objective = next_objective;
        if step < STEP_TOL || objective < 1e-14 {
            break;
        }
    }
    // the distance is known to be zero here; the pair only has to be feasible
    if !objective.is_finite() {
        return Err(LowerLevelError::NoConvergence { step, iterations });
    }
    Ok(RobustMaximizer { gamma_shp_star: gamma, translation_star: d, distance: 0.0, alternations: iterations })
}
