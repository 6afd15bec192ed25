//! Differential-drive model with identified linear velocity dynamics.
//!
//! State `x = (px, py, θ, v_cmd, ω_cmd, ν…)`, input `u = (a, α)`. The real
//! velocities are `(v, ω) = C_ν ν + D_ν (v_cmd, ω_cmd)` and the internal state
//! evolves as `ν̇ = A_ν ν + B_ν (v_cmd, ω_cmd)`. With `n_ν = 0` and `D_ν = I`
//! the model is a plain unicycle driven through its commands.
//!
//! By default the heading enters as `ṗx = v sinθ`, `ṗy = v cosθ`, so `θ = 0`
//! points along +y.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PX: usize = 0;
pub const PY: usize = 1;
pub const THETA: usize = 2;
pub const V_CMD: usize = 3;
pub const W_CMD: usize = 4;
pub const NU: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("model dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("time step must be positive, got {0}")]
    BadTimeStep(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadingConvention {
    /// `ṗx = v sinθ`, `ṗy = v cosθ`.
    #[default]
    SinCos,
    /// `ṗx = v cosθ`, `ṗy = v sinθ`.
    CosSin,
}

impl HeadingConvention {
    /// Unit direction of travel for heading `theta` and its derivative.
    pub fn direction(self, theta: f64) -> ([f64; 2], [f64; 2]) {
        let (s, c) = theta.sin_cos();
        match self {
            HeadingConvention::SinCos => ([s, c], [c, -s]),
            HeadingConvention::CosSin => ([c, s], [-s, c]),
        }
    }

    /// Heading whose direction of travel is `(dx, dy)`.
    pub fn heading_of(self, dx: f64, dy: f64) -> f64 {
        match self {
            HeadingConvention::SinCos => dx.atan2(dy),
            HeadingConvention::CosSin => dy.atan2(dx),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffDriveModel {
    a_nu: DMatrix<f64>,
    b_nu: DMatrix<f64>,
    c_nu: DMatrix<f64>,
    d_nu: DMatrix<f64>,
    pub heading: HeadingConvention,
}

impl DiffDriveModel {
    pub fn kinematic() -> Self {
        Self {
            a_nu: DMatrix::zeros(0, 0),
            b_nu: DMatrix::zeros(0, 2),
            c_nu: DMatrix::zeros(2, 0),
            d_nu: DMatrix::identity(2, 2),
            heading: HeadingConvention::default(),
        }
    }

    pub fn new(a_nu: DMatrix<f64>, b_nu: DMatrix<f64>, c_nu: DMatrix<f64>, d_nu: DMatrix<f64>) -> Result<Self, ModelError> {
        let n = a_nu.nrows();
        if a_nu.ncols() != n {
            return Err(ModelError::DimensionMismatch("A_nu must be square".into()));
        }
        if b_nu.shape() != (n, 2) {
            return Err(ModelError::DimensionMismatch(format!("B_nu must be {n}x2")));
        }
        if c_nu.shape() != (2, n) {
            return Err(ModelError::DimensionMismatch(format!("C_nu must be 2x{n}")));
        }
        if d_nu.shape() != (2, 2) {
            return Err(ModelError::DimensionMismatch("D_nu must be 2x2".into()));
        }
        Ok(Self { a_nu, b_nu, c_nu, d_nu, heading: HeadingConvention::default() })
    }

    /// First-order actuator lag per channel: `τ ν̇ = cmd − ν`, real velocity `ν`.
    pub fn first_order_lag(tau_v: f64, tau_w: f64) -> Self {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0 / tau_v, -1.0 / tau_w]));
        let b = -a.clone();
        Self::new(a, b, DMatrix::identity(2, 2), DMatrix::zeros(2, 2)).expect("consistent dimensions")
    }

    pub fn with_heading(mut self, heading: HeadingConvention) -> Self {
        self.heading = heading;
        self
    }

    pub fn n_nu(&self) -> usize {
        self.a_nu.nrows()
    }

    pub fn nx(&self) -> usize {
        5 + self.n_nu()
    }

    pub fn nu(&self) -> usize {
        NU
    }

    pub fn is_kinematic(&self) -> bool {
        self.n_nu() == 0
    }

    pub fn a_nu(&self) -> &DMatrix<f64> {
        &self.a_nu
    }

    pub fn b_nu(&self) -> &DMatrix<f64> {
        &self.b_nu
    }

    pub fn c_nu(&self) -> &DMatrix<f64> {
        &self.c_nu
    }

    pub fn d_nu(&self) -> &DMatrix<f64> {
        &self.d_nu
    }

    /// Real forward and angular velocity at `x`.
    pub fn velocities(&self, x: &DVector<f64>) -> (f64, f64) {
        let mut v = self.d_nu[(0, 0)] * x[V_CMD] + self.d_nu[(0, 1)] * x[W_CMD];
        let mut w = self.d_nu[(1, 0)] * x[V_CMD] + self.d_nu[(1, 1)] * x[W_CMD];
        for i in 0..self.n_nu() {
            v += self.c_nu[(0, i)] * x[5 + i];
            w += self.c_nu[(1, i)] * x[5 + i];
        }
        (v, w)
    }

    /// State with velocity dynamics at rest-consistent steady state for the given commands.
    pub fn steady_state(&self, pose: [f64; 3], v_cmd: f64, w_cmd: f64) -> DVector<f64> {
        let mut x = DVector::zeros(self.nx());
        x[PX] = pose[0];
        x[PY] = pose[1];
        x[THETA] = pose[2];
        x[V_CMD] = v_cmd;
        x[W_CMD] = w_cmd;
        let n = self.n_nu();
        if n > 0 {
            let cmd = DVector::from_vec(vec![v_cmd, w_cmd]);
            let rhs = -(&self.b_nu * cmd);
            if let Some(nu) = self.a_nu.clone().lu().solve(&rhs) {
                x.rows_mut(5, n).copy_from(&nu);
            }
        }
        x
    }

    fn check(&self, x: &DVector<f64>, u: &DVector<f64>) {
        assert_eq!(x.len(), self.nx(), "state dimension");
        assert_eq!(u.len(), NU, "input dimension");
    }
}

/// Continuous-time right-hand side `f(x, u)`.
pub fn ode_rhs(model: &DiffDriveModel, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    model.check(x, u);
    let (v, w) = model.velocities(x);
    let (dir, _) = model.heading.direction(x[THETA]);
    let mut f = DVector::zeros(model.nx());
    f[PX] = v * dir[0];
    f[PY] = v * dir[1];
    f[THETA] = w;
    f[V_CMD] = u[0];
    f[W_CMD] = u[1];
    let n = model.n_nu();
    if n > 0 {
        let nu = x.rows(5, n);
        let cmd = x.rows(V_CMD, 2);
        let nu_dot = &model.a_nu * nu + &model.b_nu * cmd;
        f.rows_mut(5, n).copy_from(&nu_dot);
    }
    f
}

/// Jacobians `(∂f/∂x, ∂f/∂u)`.
pub fn ode_jacobians(model: &DiffDriveModel, x: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let nx = model.nx();
    let n = model.n_nu();
    let (v, _) = model.velocities(x);
    let (dir, ddir) = model.heading.direction(x[THETA]);
    let mut fx = DMatrix::zeros(nx, nx);
    // d(v, ω)/dx over the (v_cmd, ω_cmd, ν) block
    let mut dvel = DMatrix::zeros(2, nx);
    dvel.view_mut((0, V_CMD), (2, 2)).copy_from(&model.d_nu);
    if n > 0 {
        dvel.view_mut((0, 5), (2, n)).copy_from(&model.c_nu);
    }
    for j in 0..nx {
        fx[(PX, j)] = dvel[(0, j)] * dir[0];
        fx[(PY, j)] = dvel[(0, j)] * dir[1];
        fx[(THETA, j)] = dvel[(1, j)];
    }
    fx[(PX, THETA)] += v * ddir[0];
    fx[(PY, THETA)] += v * ddir[1];
    if n > 0 {
        fx.view_mut((5, 5), (n, n)).copy_from(&model.a_nu);
        fx.view_mut((5, V_CMD), (n, 2)).copy_from(&model.b_nu);
    }
    let mut fu = DMatrix::zeros(nx, NU);
    fu[(V_CMD, 0)] = 1.0;
    fu[(W_CMD, 1)] = 1.0;
    (fx, fu)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteStep {
    pub x_next: DVector<f64>,
    /// `∂x_next/∂x`.
    pub a: DMatrix<f64>,
    /// `∂x_next/∂u`.
    pub b: DMatrix<f64>,
    /// `∂x_next/∂w` for the additive disturbance.
    pub c: DMatrix<f64>,
}

/// One RK4 step of `ẋ = f(x, u) + w` with zero-order hold on `u` and `w`,
/// differentiated through the same stencil.
pub fn integrate(model: &DiffDriveModel, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>, dt: f64) -> DiscreteStep {
    assert!(dt > 0.0, "time step must be positive");
    let nx = model.nx();
    assert_eq!(w.len(), nx, "disturbance dimension");
    let eye = DMatrix::<f64>::identity(nx, nx);
    let (_, fu) = ode_jacobians(model, x);

    let mut xs = x.clone();
    let mut sx = eye.clone();
    let mut su = DMatrix::zeros(nx, NU);
    let mut sw = DMatrix::zeros(nx, nx);

    let mut acc = DVector::zeros(nx);
    let mut acc_x = DMatrix::zeros(nx, nx);
    let mut acc_u = DMatrix::zeros(nx, NU);
    let mut acc_w = DMatrix::zeros(nx, nx);

    const WEIGHTS: [f64; 4] = [1.0, 2.0, 2.0, 1.0];
    const OFFSETS: [f64; 4] = [0.0, 0.5, 0.5, 1.0];
    let mut k = DVector::zeros(nx);
    let (mut kx, mut ku, mut kw) = (DMatrix::zeros(nx, nx), DMatrix::zeros(nx, NU), DMatrix::zeros(nx, nx));
    for stage in 0..4 {
        if stage > 0 {
            let h = OFFSETS[stage] * dt;
            xs = x + &k * h;
            sx = &eye + &kx * h;
            su = &ku * h;
            sw = &kw * h;
        }
        let (fx, _) = ode_jacobians(model, &xs);
        k = ode_rhs(model, &xs, u) + w;
        kx = &fx * &sx;
        ku = &fx * &su + &fu;
        kw = &fx * &sw + &eye;
        let c = WEIGHTS[stage] * dt / 6.0;
        acc.axpy(c, &k, 1.0);
        acc_x += &kx * c;
        acc_u += &ku * c;
        acc_w += &kw * c;
    }
    DiscreteStep { x_next: x + acc, a: eye + acc_x, b: acc_u, c: acc_w }
}

/// Nominal rollout, returning `x_0..x_N`.
pub fn rollout(model: &DiffDriveModel, x0: &DVector<f64>, us: &[DVector<f64>], dt: f64) -> Vec<DVector<f64>> {
    let zero = DVector::zeros(model.nx());
    let mut xs = Vec::with_capacity(us.len() + 1);
    xs.push(x0.clone());
    for u in us {
        let next = integrate(model, xs.last().unwrap(), u, &zero, dt).x_next;
        xs.push(next);
    }
    xs
}

/// State advance without sensitivities, for the plant.
pub fn step_state(model: &DiffDriveModel, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>, dt: f64) -> DVector<f64> {
    let k1 = ode_rhs(model, x, u) + w;
    let k2 = ode_rhs(model, &(x + &k1 * (0.5 * dt)), u) + w;
    let k3 = ode_rhs(model, &(x + &k2 * (0.5 * dt)), u) + w;
    let k4 = ode_rhs(model, &(x + &k3 * dt), u) + w;
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}
