//! Upper-level subproblem: multiple-shooting tracking OCP with linearized,
//! slacked collision rows, solved by Gauss-Newton SQP over a structured QP.

pub mod dense;
pub mod ipm;
pub mod qp;
pub mod riccati;

use crate::constraint_lin::LinearizedConstraint;
use crate::dynamics::{integrate, rollout, DiffDriveModel, NU, V_CMD, W_CMD};
use ipm::IpmOptions;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use qp::{OcpQp, QpSolution, QpStage};
use serde::{Deserialize, Serialize};
use std::time::Instant;
use thiserror::Error;

/// Cholesky with a diagonal shift retried on failure. Late IPM iterations
/// have barrier weights near 1e20, and round-off can push a mathematically
/// positive definite matrix slightly indefinite.
pub(crate) fn regularized_cholesky(m: DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Some(c);
    }
    let scale = m.diagonal().amax().max(1.0);
    let mut delta = 1e-14 * scale;
    for _ in 0..8 {
        let shifted = &m + DMatrix::identity(m.nrows(), m.ncols()) * delta;
        if let Some(c) = Cholesky::new(shifted) {
            return Some(c);
        }
        delta *= 100.0;
    }
    None
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpFailure {
    #[error("infeasible hard bounds: {0}")]
    InfeasibleBounds(String),
    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),
    #[error("QP did not converge in {iterations} iterations (residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Symmetric box limits on forward/angular velocity and acceleration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Limits {
    pub v_max: f64,
    pub w_max: f64,
    pub a_max: f64,
    pub alpha_max: f64,
}

impl Limits {
    pub const SLOW: Limits = Limits { v_max: 0.8, w_max: 0.8, a_max: 1.2, alpha_max: 1.2 };
    pub const MEDIUM: Limits = Limits { v_max: 1.2, w_max: 1.2, a_max: 1.6, alpha_max: 1.6 };
    pub const FAST: Limits = Limits { v_max: 1.6, w_max: 1.6, a_max: 2.0, alpha_max: 2.0 };

    pub fn is_valid(&self) -> bool {
        [self.v_max, self.w_max, self.a_max, self.alpha_max].iter().all(|v| v.is_finite() && *v > 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitProfile {
    Slow,
    Medium,
    Fast,
}

impl LimitProfile {
    pub fn limits(self) -> Limits {
        match self {
            LimitProfile::Slow => Limits::SLOW,
            LimitProfile::Medium => Limits::MEDIUM,
            LimitProfile::Fast => Limits::FAST,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlackWeights {
    pub l1: f64,
    pub l2: f64,
}

impl Default for SlackWeights {
    fn default() -> Self {
        Self { l1: 1e3, l2: 1e4 }
    }
}

/// Diagonal tracking weights over `(px, py, θ, v_cmd, ω_cmd)` and `(a, α)`.
/// Internal velocity states are not tracked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackingWeights {
    pub q: [f64; 5],
    pub r: [f64; 2],
    pub q_n: [f64; 5],
}

impl Default for TrackingWeights {
    fn default() -> Self {
        Self { q: [10.0, 10.0, 1.0, 0.1, 0.1], r: [0.1, 0.1], q_n: [20.0, 20.0, 2.0, 0.2, 0.2] }
    }
}

impl TrackingWeights {
    fn state_matrix(diag: &[f64; 5], nx: usize) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_fn(nx, |i, _| if i < 5 { diag[i] } else { 0.0 }))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub x: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn constant(x0: &DVector<f64>, horizon: usize) -> Self {
        Self { x: vec![x0.clone(); horizon + 1], u: vec![DVector::zeros(NU); horizon] }
    }

    pub fn from_inputs(model: &DiffDriveModel, x0: &DVector<f64>, u: Vec<DVector<f64>>, dt: f64) -> Self {
        Self { x: rollout(model, x0, &u, dt), u }
    }

    pub fn horizon(&self) -> usize {
        self.u.len()
    }

    /// `‖z − other‖_∞` over all states and inputs.
    pub fn max_abs_diff(&self, other: &Trajectory) -> f64 {
        let xs = self.x.iter().zip(&other.x).map(|(a, b)| (a - b).amax());
        let us = self.u.iter().zip(&other.u).map(|(a, b)| (a - b).amax());
        xs.chain(us).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(&self.u).all(|v| v.iter().all(|e| e.is_finite()))
    }

    /// Drops the first `steps` stages and repeats the last one.
    pub fn shifted(&self, steps: usize) -> Trajectory {
        let n = self.horizon();
        let x = (0..=n).map(|k| self.x[(k + steps).min(n)].clone()).collect();
        let u = (0..n).map(|k| self.u[(k + steps).min(n - 1)].clone()).collect();
        Trajectory { x, u }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpProblem {
    pub horizon: usize,
    pub dt: f64,
    pub model: DiffDriveModel,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub q_n: DMatrix<f64>,
    /// `N + 1` reference states.
    pub x_ref: Vec<DVector<f64>>,
    /// `N` reference inputs.
    pub u_ref: Vec<DVector<f64>>,
    pub limits: Limits,
    pub x0: DVector<f64>,
    pub slack: SlackWeights,
}

impl OcpProblem {
    pub fn new(
        model: DiffDriveModel,
        dt: f64,
        x0: DVector<f64>,
        x_ref: Vec<DVector<f64>>,
        u_ref: Vec<DVector<f64>>,
        limits: Limits,
        weights: &TrackingWeights,
        slack: SlackWeights,
    ) -> Result<Self, QpFailure> {
        let nx = model.nx();
        let horizon = u_ref.len();
        if horizon == 0 || x_ref.len() != horizon + 1 {
            return Err(QpFailure::DimensionMismatch(format!("{} reference states for {} inputs", x_ref.len(), horizon)));
        }
        if x0.len() != nx || x_ref.iter().any(|x| x.len() != nx) || u_ref.iter().any(|u| u.len() != NU) {
            return Err(QpFailure::DimensionMismatch("reference or initial state size".into()));
        }
        if !limits.is_valid() || !(dt > 0.0) {
            return Err(QpFailure::InfeasibleBounds("limits and dt must be positive".into()));
        }
        if weights.q.iter().chain(&weights.r).chain(&weights.q_n).any(|w| *w < 0.0) || weights.r.iter().any(|w| *w <= 0.0) {
            return Err(QpFailure::DimensionMismatch("weights must be nonnegative, input weights positive".into()));
        }
        Ok(Self {
            horizon,
            dt,
            q: TrackingWeights::state_matrix(&weights.q, nx),
            r: DMatrix::from_diagonal(&DVector::from_column_slice(&weights.r)),
            q_n: TrackingWeights::state_matrix(&weights.q_n, nx),
            model,
            x_ref,
            u_ref,
            limits,
            x0,
            slack,
        })
    }

    pub fn nx(&self) -> usize {
        self.model.nx()
    }

    /// Tracking cost of a trajectory (no slack terms).
    pub fn tracking_cost(&self, traj: &Trajectory) -> f64 {
        let mut cost = 0.0;
        for k in 0..=self.horizon {
            let w = if k == self.horizon { &self.q_n } else { &self.q };
            let e = &traj.x[k] - &self.x_ref[k];
            cost += 0.5 * e.dot(&(w * &e));
        }
        for k in 0..self.horizon {
            let e = &traj.u[k] - &self.u_ref[k];
            cost += 0.5 * e.dot(&(&self.r * &e));
        }
        cost
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpBackend {
    #[default]
    Riccati,
    Dense,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemOptions {
    pub ipm: IpmOptions,
    pub backend: QpBackend,
    /// Collision rows as slacked soft constraints (the default) or hard rows.
    pub soft: bool,
    /// Per-stage backoffs `(β_v, β_ω)` tightening the command-velocity boxes.
    pub box_backoff: Option<Vec<[f64; 2]>>,
}

impl Default for SubproblemOptions {
    fn default() -> Self {
        Self { ipm: IpmOptions::default(), backend: QpBackend::Riccati, soft: true, box_backoff: None }
    }
}

/// Outcome of one collision row in the final QP.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RowActivity {
    pub slack: f64,
    /// Linearized value `ȟ + β` at the returned trajectory.
    pub value: f64,
    pub multiplier: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemResult {
    pub traj: Trajectory,
    pub kkt_residual: f64,
    pub qp_iterations: Vec<usize>,
    /// One entry per input row, in order.
    pub rows: Vec<RowActivity>,
    /// Tracking plus slack penalty of the final QP.
    pub objective: f64,
    pub seconds_per_sqp: Vec<f64>,
}

const BOUND_MARGIN: f64 = 1e-6;

/// Command-velocity interval at stage `k`, widened where the hard acceleration
/// limit cannot bring the initial command inside in time.
fn state_interval(x0: f64, limit: f64, rate: f64, backoff: f64, k: usize, dt: f64) -> (f64, f64) {
    let beta = backoff.clamp(0.0, 0.45 * limit);
    let reach = k as f64 * dt * rate;
    let lo = (-limit + beta).min(x0 + reach - BOUND_MARGIN);
    let hi = (limit - beta).max(x0 - reach + BOUND_MARGIN);
    (lo, hi)
}

fn unit(n: usize, i: usize, v: f64) -> DVector<f64> {
    let mut e = DVector::zeros(n);
    e[i] = v;
    e
}

/// Assembles the QP at the linearization point `lin`; returns it with row
/// bookkeeping `(stage, position in stage rows, slack index in u_k)`.
fn build_qp(
    prob: &OcpProblem,
    rows: &[LinearizedConstraint],
    lin: &Trajectory,
    opts: &SubproblemOptions,
) -> Result<(OcpQp, Vec<(usize, usize, Option<usize>)>), QpFailure> {
    let n = prob.horizon;
    let nx = prob.nx();
    let dt = prob.dt;
    for r in rows {
        if r.stage == 0 || r.stage > n || r.grad_x.len() != nx {
            return Err(QpFailure::DimensionMismatch(format!("row at stage {} with {} entries", r.stage, r.grad_x.len())));
        }
    }
    let mut per_stage: Vec<Vec<usize>> = vec![Vec::new(); n + 1];
    for (i, r) in rows.iter().enumerate() {
        per_stage[r.stage].push(i);
    }
    let slacks = |k: usize| if opts.soft { per_stage[k].len() } else { 0 };

    let zero_w = DVector::zeros(nx);
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    let mut c = Vec::with_capacity(n);
    for k in 0..n {
        let step = integrate(&prob.model, &lin.x[k], &lin.u[k], &zero_w, dt);
        let nu = NU + slacks(k);
        let mut bk = DMatrix::zeros(nx, nu);
        bk.view_mut((0, 0), (nx, NU)).copy_from(&step.b);
        c.push(&step.x_next - &step.a * &lin.x[k] - &step.b * &lin.u[k]);
        a.push(step.a);
        b.push(bk);
    }

    let lim = prob.limits;
    let x0 = &prob.x0;
    let mut stages = Vec::with_capacity(n + 1);
    let mut book = vec![(0, 0, None); rows.len()];
    for k in 0..=n {
        let nin = if k < n { NU } else { 0 };
        let ns = slacks(k);
        let nu = nin + ns;
        let mut st = QpStage::zeros(nx, nu);
        let qw = if k == n { &prob.q_n } else { &prob.q };
        st.q.copy_from(qw);
        st.qv = -(qw * &prob.x_ref[k]);
        if k < n {
            st.r.view_mut((0, 0), (NU, NU)).copy_from(&prob.r);
            st.rv.rows_mut(0, NU).copy_from(&(-(&prob.r * &prob.u_ref[k])));
        }
        for j in 0..ns {
            st.r[(nin + j, nin + j)] = 2.0 * prob.slack.l2;
            st.rv[nin + j] = prob.slack.l1;
        }
        let mut dx_rows: Vec<DVector<f64>> = Vec::new();
        let mut eu_rows: Vec<DVector<f64>> = Vec::new();
        let mut rhs: Vec<f64> = Vec::new();
        let zx = DVector::zeros(nx);
        let zu = DVector::zeros(nu);
        if k < n {
            for (i, m) in [(0usize, lim.a_max), (1, lim.alpha_max)] {
                for sign in [1.0, -1.0] {
                    dx_rows.push(zx.clone());
                    eu_rows.push(unit(nu, i, sign));
                    rhs.push(m);
                }
            }
        }
        if k > 0 {
            let beta = opts.box_backoff.as_ref().map(|b| b[k]).unwrap_or([0.0, 0.0]);
            for (idx, limit, rate, bo) in [(V_CMD, lim.v_max, lim.a_max, beta[0]), (W_CMD, lim.w_max, lim.alpha_max, beta[1])] {
                let (lo, hi) = state_interval(x0[idx], limit, rate, bo, k, dt);
                dx_rows.push(unit(nx, idx, 1.0));
                eu_rows.push(zu.clone());
                rhs.push(hi);
                dx_rows.push(unit(nx, idx, -1.0));
                eu_rows.push(zu.clone());
                rhs.push(-lo);
            }
        }
        for (j, &ri) in per_stage[k].iter().enumerate() {
            let row = &rows[ri];
            book[ri] = (k, dx_rows.len(), if opts.soft { Some(nin + j) } else { None });
            dx_rows.push(row.grad_x.clone());
            eu_rows.push(if opts.soft { unit(nu, nin + j, -1.0) } else { zu.clone() });
            rhs.push(row.affine_rhs());
        }
        for j in 0..ns {
            dx_rows.push(zx.clone());
            eu_rows.push(unit(nu, nin + j, -1.0));
            rhs.push(0.0);
        }
        let m = rhs.len();
        st.d = DMatrix::from_fn(m, nx, |i, j| dx_rows[i][j]);
        st.e = DMatrix::from_fn(m, nu, |i, j| eu_rows[i][j]);
        st.dv = DVector::from_vec(rhs);
        stages.push(st);
    }
    Ok((OcpQp { x0: x0.clone(), stages, a, b, c }, book))
}

/// Solves an [`OcpQp`] from a primal guess with the chosen backend.
pub fn solve_qp(
    qp: &OcpQp,
    x: &[DVector<f64>],
    u: &[DVector<f64>],
    backend: QpBackend,
    opts: &IpmOptions,
) -> Result<QpSolution, QpFailure> {
    match backend {
        QpBackend::Riccati => ipm::solve(qp, &mut riccati::RiccatiSolver::new(), x, u, opts),
        QpBackend::Dense => ipm::solve(qp, &mut dense::DenseSolver::new(), x, u, opts),
    }
}

/// Runs `sqp_iters` full-step Gauss-Newton SQP iterations, re-integrating the
/// dynamics at every iterate; the collision rows stay fixed.
pub fn solve_subproblem(
    prob: &OcpProblem,
    rows: &[LinearizedConstraint],
    guess: &Trajectory,
    sqp_iters: usize,
    opts: &SubproblemOptions,
) -> Result<SubproblemResult, QpFailure> {
    let n = prob.horizon;
    if guess.horizon() != n || guess.x.len() != n + 1 {
        return Err(QpFailure::DimensionMismatch(format!("guess horizon {} for problem horizon {n}", guess.horizon())));
    }
    if let Some(bo) = &opts.box_backoff {
        if bo.len() != n + 1 {
            return Err(QpFailure::DimensionMismatch("box backoffs need N + 1 entries".into()));
        }
    }
    let mut traj = guess.clone();
    traj.x[0] = prob.x0.clone();
    let mut result = None;
    let mut qp_iterations = Vec::new();
    let mut seconds = Vec::new();
    for _ in 0..sqp_iters.max(1) {
        let start = Instant::now();
        let (qp, book) = build_qp(prob, rows, &traj, opts)?;
        let u_init: Vec<DVector<f64>> = (0..=n)
            .map(|k| {
                let mut u = DVector::zeros(qp.stages[k].nu());
                if k < n {
                    u.rows_mut(0, NU).copy_from(&traj.u[k]);
                }
                u
            })
            .collect();
        let u_init: Vec<DVector<f64>> = u_init
            .into_iter()
            .enumerate()
            .map(|(k, mut u)| {
                for (ri, &(stage, _, slack)) in book.iter().enumerate() {
                    if let (true, Some(j)) = (stage == k, slack) {
                        u[j] = rows[ri].evaluate(&traj.x[k]).max(0.0);
                    }
                }
                u
            })
            .collect();
        let sol = solve_qp(&qp, &traj.x, &u_init, opts.backend, &opts.ipm)?;
        traj = Trajectory { x: sol.x.clone(), u: (0..n).map(|k| sol.u[k].rows(0, NU).into_owned()).collect() };
        if !traj.is_finite() {
            return Err(QpFailure::NumericalBreakdown("non-finite QP solution".into()));
        }
        qp_iterations.push(sol.iterations);
        seconds.push(start.elapsed().as_secs_f64());
        let activity: Vec<RowActivity> = book
            .iter()
            .enumerate()
            .map(|(ri, &(k, pos, slack))| RowActivity {
                slack: slack.map(|j| sol.u[k][j]).unwrap_or(0.0),
                value: rows[ri].evaluate(&sol.x[k]),
                multiplier: sol.lam[k][pos],
            })
            .collect();
        let objective = qp.objective(&sol.x, &sol.u) + prob.tracking_constant();
        result = Some((sol.kkt_residual, activity, objective));
    }
    let (kkt_residual, rows_out, objective) = result.expect("at least one iteration");
    Ok(SubproblemResult { traj, kkt_residual, qp_iterations, rows: rows_out, objective, seconds_per_sqp: seconds })
}

impl OcpProblem {
    /// Constant part of the tracking cost dropped from the QP objective.
    fn tracking_constant(&self) -> f64 {
        let mut c = 0.0;
        for k in 0..=self.horizon {
            let w = if k == self.horizon { &self.q_n } else { &self.q };
            c += 0.5 * self.x_ref[k].dot(&(w * &self.x_ref[k]));
        }
        for k in 0..self.horizon {
            c += 0.5 * self.u_ref[k].dot(&(&self.r * &self.u_ref[k]));
        }
        c
    }
}
