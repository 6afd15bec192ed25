//! Stage-structured convex QP.
//!
//! ```text
//! min  Σ_k ½ x_kᵀQ_k x_k + x_kᵀS_k u_k + ½ u_kᵀR_k u_k + q_kᵀx_k + r_kᵀu_k
//! s.t. x_{k+1} = A_k x_k + B_k u_k + c_k,   x_0 fixed
//!      D_k x_k + E_k u_k ≤ d_k
//! ```
//!
//! Stages run `0..=N`; the terminal stage may carry its own variables `u_N`
//! (slacks), which enter no dynamics.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub struct QpStage {
    pub q: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub qv: DVector<f64>,
    pub rv: DVector<f64>,
    pub d: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub dv: DVector<f64>,
}

impl QpStage {
    pub fn zeros(nx: usize, nu: usize) -> Self {
        Self {
            q: DMatrix::zeros(nx, nx),
            s: DMatrix::zeros(nx, nu),
            r: DMatrix::zeros(nu, nu),
            qv: DVector::zeros(nx),
            rv: DVector::zeros(nu),
            d: DMatrix::zeros(0, nx),
            e: DMatrix::zeros(0, nu),
            dv: DVector::zeros(0),
        }
    }

    pub fn nu(&self) -> usize {
        self.r.nrows()
    }

    pub fn rows(&self) -> usize {
        self.dv.len()
    }

    /// Appends the row `dx·x + eu·u ≤ rhs`.
    pub fn push_row(&mut self, dx: &DVector<f64>, eu: &DVector<f64>, rhs: f64) {
        let m = self.rows();
        self.d = self.d.clone().insert_row(m, 0.0);
        self.e = self.e.clone().insert_row(m, 0.0);
        self.dv = self.dv.clone().insert_row(m, rhs);
        self.d.row_mut(m).copy_from(&dx.transpose());
        self.e.row_mut(m).copy_from(&eu.transpose());
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpQp {
    pub x0: DVector<f64>,
    pub stages: Vec<QpStage>,
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DMatrix<f64>>,
    pub c: Vec<DVector<f64>>,
}

impl OcpQp {
    pub fn horizon(&self) -> usize {
        self.a.len()
    }

    pub fn nx(&self) -> usize {
        self.x0.len()
    }

    pub fn total_rows(&self) -> usize {
        self.stages.iter().map(QpStage::rows).sum()
    }

    /// Forward simulation of the affine dynamics for the given inputs.
    pub fn simulate(&self, u: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let mut x = vec![self.x0.clone()];
        for k in 0..self.horizon() {
            let next = &self.a[k] * &x[k] + &self.b[k] * &u[k] + &self.c[k];
            x.push(next);
        }
        x
    }

    pub fn objective(&self, x: &[DVector<f64>], u: &[DVector<f64>]) -> f64 {
        self.stages
            .iter()
            .enumerate()
            .map(|(k, st)| {
                0.5 * x[k].dot(&(&st.q * &x[k])) + x[k].dot(&(&st.s * &u[k])) + 0.5 * u[k].dot(&(&st.r * &u[k]))
                    + st.qv.dot(&x[k])
                    + st.rv.dot(&u[k])
            })
            .sum()
    }
}

/// Primal-dual point of an [`OcpQp`].
#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    /// Dynamics multipliers `π_0..π_{N-1}`.
    pub pi: Vec<DVector<f64>>,
    /// Inequality multipliers per stage.
    pub lam: Vec<DVector<f64>>,
    /// Inequality slacks `d − Dx − Eu` per stage.
    pub t: Vec<DVector<f64>>,
    pub iterations: usize,
    pub kkt_residual: f64,
}

/// Residuals of the KKT conditions at a primal-dual point.
#[derive(Debug, Clone, PartialEq)]
pub struct KktResiduals {
    pub rx: Vec<DVector<f64>>,
    pub ru: Vec<DVector<f64>>,
    pub rpi: Vec<DVector<f64>>,
    pub rineq: Vec<DVector<f64>>,
}

pub fn kkt_residuals(
    qp: &OcpQp,
    x: &[DVector<f64>],
    u: &[DVector<f64>],
    pi: &[DVector<f64>],
    lam: &[DVector<f64>],
    t: &[DVector<f64>],
) -> KktResiduals {
    let n = qp.horizon();
    let mut rx = Vec::with_capacity(n + 1);
    let mut ru = Vec::with_capacity(n + 1);
    let mut rineq = Vec::with_capacity(n + 1);
    for (k, st) in qp.stages.iter().enumerate() {
        let mut gx = &st.q * &x[k] + &st.s * &u[k] + &st.qv + st.d.transpose() * &lam[k];
        let mut gu = st.s.transpose() * &x[k] + &st.r * &u[k] + &st.rv + st.e.transpose() * &lam[k];
        if k < n {
            gx += qp.a[k].transpose() * &pi[k];
            gu += qp.b[k].transpose() * &pi[k];
        }
        if k > 0 {
            gx -= &pi[k - 1];
        } else {
            // x_0 is fixed, its stationarity row is void
            gx.fill(0.0);
        }
        rx.push(gx);
        ru.push(gu);
        rineq.push(&st.d * &x[k] + &st.e * &u[k] + &t[k] - &st.dv);
    }
    let rpi = (0..n).map(|k| &qp.a[k] * &x[k] + &qp.b[k] * &u[k] + &qp.c[k] - &x[k + 1]).collect();
    KktResiduals { rx, ru, rpi, rineq }
}

/// `max(stationarity, dynamics, primal feasibility, complementarity)` in the ∞-norm.
pub fn kkt_norm(qp: &OcpQp, sol: &QpSolution) -> f64 {
    let r = kkt_residuals(qp, &sol.x, &sol.u, &sol.pi, &sol.lam, &sol.t);
    let inf = |v: &[DVector<f64>]| v.iter().map(|e| e.amax()).fold(0.0, f64::max);
    // feasibility measured on the primal rows directly
    let primal = qp
        .stages
        .iter()
        .enumerate()
        .map(|(k, st)| (&st.d * &sol.x[k] + &st.e * &sol.u[k] - &st.dv).iter().fold(0.0f64, |m, &v| m.max(v)))
        .fold(0.0, f64::max);
    let comp = sol
        .lam
        .iter()
        .zip(&sol.t)
        .flat_map(|(l, t)| l.iter().zip(t.iter()).map(|(a, b)| (a * b).abs()))
        .fold(0.0, f64::max);
    let dual = sol.lam.iter().flat_map(|l| l.iter()).fold(0.0f64, |m, &v| m.max(-v));
    inf(&r.rx).max(inf(&r.ru)).max(inf(&r.rpi)).max(primal).max(comp).max(dual)
}
