//! Collision constraint values, exact gradients, linearizations and backoffs.
//!
//! Constraints are violation-positive and include the padding:
//! `h(x) = r_shp − dist(x)`, feasible when `h ≤ 0`. Gradients are partial
//! derivatives at the fixed lower-level maximizer, which equal the total
//! derivatives of the re-minimized function.

use crate::distance_field::{FieldError, ObstacleField};
use crate::dynamics::{PX, PY, THETA};
use crate::geometry::{skew, PaddedPolygon, Pose2, Vec2};
use crate::lower_level::{self, LowerLevelError, NominalMaximizer, RobustMaximizer};
use crate::uncertainty::{psd_sqrt, UncertaintyError};
use nalgebra::{DMatrix, DVector, Matrix2, RowDVector};
use thiserror::Error;

/// Below this distance the gradient direction `η/‖η‖` is not trusted.
pub const MIN_DISTANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConstraintError {
    #[error("obstacle penetrates the unpadded footprint (distance {0:.3e})")]
    PenetrationCase(f64),
    #[error(transparent)]
    LowerLevel(#[from] LowerLevelError),
    #[error(transparent)]
    Uncertainty(#[from] UncertaintyError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Which obstacle a linearized row belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintSource {
    Obstacle(usize),
    /// Signed-distance fallback at a boundary sample of a penetrating stage.
    SdtFallback,
}

/// `value + grad_x·(x − x_lin) + backoff ≤ 0`, softened by a slack in the QP.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedConstraint {
    pub value: f64,
    pub grad_x: DVector<f64>,
    pub x_lin: DVector<f64>,
    pub backoff: f64,
    pub source: ConstraintSource,
    pub stage: usize,
}

impl LinearizedConstraint {
    pub fn evaluate(&self, x: &DVector<f64>) -> f64 {
        self.value + self.grad_x.dot(&(x - &self.x_lin)) + self.backoff
    }

    /// Row in the form `grad_x · x ≤ rhs`.
    pub fn affine_rhs(&self) -> f64 {
        self.grad_x.dot(&self.x_lin) - self.value - self.backoff
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Jacobians2D {
    /// `R(θ)ᵀ ∂p_c/∂x`.
    pub j_t: DMatrix<f64>,
    pub j_r: RowDVector<f64>,
    pub dpc_dx: DMatrix<f64>,
    /// `R(θ) [1]_×`, the derivative of `R(θ)` with respect to θ.
    pub dr_dtheta: Matrix2<f64>,
}

/// Jacobians of the diff-drive state, where `p_c = (px, py)` and θ are components.
pub fn jacobians(x: &DVector<f64>) -> Jacobians2D {
    let nx = x.len();
    let pose = Pose2::from_state(x.as_slice());
    let r = pose.rotation();
    let mut dpc_dx = DMatrix::zeros(2, nx);
    dpc_dx[(0, PX)] = 1.0;
    dpc_dx[(1, PY)] = 1.0;
    let rt = DMatrix::from_column_slice(2, 2, r.transpose().as_slice());
    let j_t = rt * &dpc_dx;
    let mut j_r = RowDVector::zeros(nx);
    j_r[THETA] = 1.0;
    Jacobians2D { j_t, j_r, dpc_dx, dr_dtheta: r * skew() }
}

/// `−(ρᵀ/‖ρ‖)(∂p_c/∂x + R[1]_×γ J_r)` for world residual `rho` and body point `gamma`.
fn residual_gradient(jac: &Jacobians2D, rho: &Vec2, gamma: &Vec2) -> DVector<f64> {
    let dir = rho / rho.norm();
    let rg = jac.dr_dtheta * gamma;
    let mut grad = DVector::zeros(jac.dpc_dx.ncols());
    for j in 0..grad.len() {
        let col = Vec2::new(jac.dpc_dx[(0, j)] + rg.x * jac.j_r[j], jac.dpc_dx[(1, j)] + rg.y * jac.j_r[j]);
        grad[j] = -dir.dot(&col);
    }
    grad
}

#[derive(Debug, Clone, PartialEq)]
pub struct NominalEval {
    pub h: f64,
    pub grad: DVector<f64>,
    pub maximizer: NominalMaximizer,
}

pub fn eval_nominal(poly: &PaddedPolygon, x: &DVector<f64>, p_o: &Vec2) -> Result<NominalEval, ConstraintError> {
    let pose = Pose2::from_state(x.as_slice());
    let m = lower_level::solve_nominal(poly, &pose, p_o);
    if m.distance <= MIN_DISTANCE {
        return Err(ConstraintError::PenetrationCase(m.distance));
    }
    let grad = residual_gradient(&jacobians(x), &m.eta, &m.gamma_shp_star);
    Ok(NominalEval { h: poly.r_shp() - m.distance, grad, maximizer: m })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustEval {
    pub h: f64,
    pub grad: DVector<f64>,
    pub maximizer: RobustMaximizer,
    pub gamma_tn: DVector<f64>,
}

/// Robust constraint with `Σ^{1/2}` supplied, treated as a constant.
pub fn eval_robust_with_sqrt(
    poly: &PaddedPolygon,
    x: &DVector<f64>,
    sigma_sqrt: &DMatrix<f64>,
    p_o: &Vec2,
) -> Result<RobustEval, ConstraintError> {
    let pose = Pose2::from_state(x.as_slice());
    let jac = jacobians(x);
    let m_map = &jac.j_t * sigma_sqrt;
    let pt_dyn = &m_map * m_map.transpose();
    let p_t = Matrix2::new(pt_dyn[(0, 0)], pt_dyn[(0, 1)], pt_dyn[(1, 0)], pt_dyn[(1, 1)]);
    let max = lower_level::solve_robust(poly, &pose, p_o, &p_t)?;
    if max.distance <= MIN_DISTANCE {
        return Err(ConstraintError::PenetrationCase(max.distance));
    }
    let gamma_tn = max.gamma_tn(&m_map);
    // ρ = p_c + R(γ* + d*) − p_o; R J_t = ∂p_c/∂x is θ-independent, so d* only shifts ρ
    let rho = pose.to_world(&(max.gamma_shp_star + max.translation_star)) - p_o;
    let grad = residual_gradient(&jac, &rho, &max.gamma_shp_star);
    Ok(RobustEval { h: poly.r_shp() - max.distance, grad, maximizer: max, gamma_tn })
}

pub fn eval_robust(poly: &PaddedPolygon, x: &DVector<f64>, sigma: &DMatrix<f64>, p_o: &Vec2) -> Result<RobustEval, ConstraintError> {
    let root = psd_sqrt(sigma)?;
    eval_robust_with_sqrt(poly, x, &root, p_o)
}

/// `sqrt(J_r Σ J_rᵀ)` scaled by the largest vertex norm.
pub fn rotational_backoff(poly: &PaddedPolygon, sigma: &DMatrix<f64>) -> f64 {
    sigma[(THETA, THETA)].max(0.0).sqrt() * poly.max_vertex_norm()
}

/// `sqrt(g Σ gᵀ)` for a constraint row `g`.
pub fn affine_backoff(grad: &DVector<f64>, sigma: &DMatrix<f64>) -> f64 {
    (grad.transpose() * sigma * grad)[(0, 0)].max(0.0).sqrt()
}

/// Linearized `sd(p_c + Rγ) ≥ level` at a body-frame boundary point `gamma`.
pub fn sdt_fallback(
    field: &ObstacleField,
    x: &DVector<f64>,
    gamma: &Vec2,
    level: f64,
    stage: usize,
) -> Result<LinearizedConstraint, ConstraintError> {
    let pose = Pose2::from_state(x.as_slice());
    let p = pose.to_world(gamma);
    let sd = field.signed_distance(&p)?;
    let g = field.signed_distance_gradient(&p)?;
    let jac = jacobians(x);
    let rg = jac.dr_dtheta * gamma;
    let grad = DVector::from_fn(x.len(), |j, _| {
        let col = Vec2::new(jac.dpc_dx[(0, j)] + rg.x * jac.j_r[j], jac.dpc_dx[(1, j)] + rg.y * jac.j_r[j]);
        -g.dot(&col)
    });
    Ok(LinearizedConstraint {
        value: level - sd,
        grad_x: grad,
        x_lin: x.clone(),
        backoff: 0.0,
        source: ConstraintSource::SdtFallback,
        stage,
    })
}

/// Nominal linearized row for obstacle `index`.
pub fn linearize_nominal(
    poly: &PaddedPolygon,
    x: &DVector<f64>,
    p_o: &Vec2,
    index: usize,
    stage: usize,
) -> Result<LinearizedConstraint, ConstraintError> {
    let e = eval_nominal(poly, x, p_o)?;
    Ok(LinearizedConstraint { value: e.h, grad_x: e.grad, x_lin: x.clone(), backoff: 0.0, source: ConstraintSource::Obstacle(index), stage })
}

/// Robust linearized row `h̃ + grad·Δx + β_rot`.
pub fn linearize_robust(
    poly: &PaddedPolygon,
    x: &DVector<f64>,
    sigma: &DMatrix<f64>,
    sigma_sqrt: &DMatrix<f64>,
    p_o: &Vec2,
    index: usize,
    stage: usize,
) -> Result<LinearizedConstraint, ConstraintError> {
    let e = eval_robust_with_sqrt(poly, x, sigma_sqrt, p_o)?;
    Ok(LinearizedConstraint {
        value: e.h,
        grad_x: e.grad,
        x_lin: x.clone(),
        backoff: rotational_backoff(poly, sigma),
        source: ConstraintSource::Obstacle(index),
        stage,
    })
}
