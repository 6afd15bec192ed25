//! Condensed dense Newton solver: states are eliminated through the dynamics
//! and one Cholesky factorization is done over all stage variables. Cubic in
//! `N`; intended for short horizons and as a cross-check of the Riccati path.

use super::ipm::{augment, AugmentedStage, Direction, NewtonSolver};
use super::qp::OcpQp;
use super::{regularized_cholesky, QpFailure};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

#[derive(Default)]
pub struct DenseSolver {
    aug: Vec<AugmentedStage>,
    /// `Δx_k = M_k z + δ_k`.
    m: Vec<DMatrix<f64>>,
    offsets: Vec<usize>,
    chol: Option<Cholesky<f64, Dyn>>,
}

impl DenseSolver {
    pub fn new() -> Self {
        Self::default()
    }
}

fn selector(offsets: &[usize], k: usize, nu: usize, nz: usize) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(nu, nz);
    for i in 0..nu {
        s[(i, offsets[k] + i)] = 1.0;
    }
    s
}

impl NewtonSolver for DenseSolver {
    fn factor(&mut self, qp: &OcpQp, w: &[DVector<f64>]) -> Result<(), QpFailure> {
        let n = qp.horizon();
        let nx = qp.nx();
        let mut offsets = Vec::with_capacity(n + 2);
        let mut acc = 0;
        for st in &qp.stages {
            offsets.push(acc);
            acc += st.nu();
        }
        let nz = acc;
        let aug = augment(qp, w);
        let mut m = vec![DMatrix::zeros(nx, nz)];
        for k in 0..n {
            let sel = selector(&offsets, k, qp.stages[k].nu(), nz);
            let next = &qp.a[k] * &m[k] + &qp.b[k] * sel;
            m.push(next);
        }
        let mut h = DMatrix::zeros(nz, nz);
        for k in 0..=n {
            let sel = selector(&offsets, k, qp.stages[k].nu(), nz);
            let st = &aug[k];
            let qm = &st.q * &m[k];
            let msel = m[k].transpose() * &st.s * &sel;
            h += m[k].transpose() * qm + &msel + msel.transpose() + sel.transpose() * &st.r * &sel;
        }
        let h = (&h + h.transpose()) * 0.5;
        self.chol = Some(regularized_cholesky(h).ok_or_else(|| QpFailure::NumericalBreakdown("condensed Hessian not positive definite".into()))?);
        self.aug = aug;
        self.m = m;
        self.offsets = offsets;
        Ok(())
    }

    fn solve(&self, qp: &OcpQp, qt: &[DVector<f64>], rt: &[DVector<f64>], rpi: &[DVector<f64>]) -> Direction {
        let n = qp.horizon();
        let nz = self.m[0].ncols();
        let mut delta = vec![DVector::zeros(qp.nx())];
        for k in 0..n {
            let next = &qp.a[k] * &delta[k] + &rpi[k];
            delta.push(next);
        }
        let mut g = DVector::zeros(nz);
        for k in 0..=n {
            let sel = selector(&self.offsets, k, qp.stages[k].nu(), nz);
            let st = &self.aug[k];
            g += self.m[k].transpose() * (&st.q * &delta[k] + &qt[k]) + sel.transpose() * (st.s.transpose() * &delta[k] + &rt[k]);
        }
        let z = -self.chol.as_ref().expect("factor before solve").solve(&g);
        let dx: Vec<DVector<f64>> = (0..=n).map(|k| &self.m[k] * &z + &delta[k]).collect();
        let du: Vec<DVector<f64>> =
            (0..=n).map(|k| z.rows(self.offsets[k], qp.stages[k].nu()).into_owned()).collect();
        // stationarity in Δx_k gives the costates backwards
        let mut dpi = vec![DVector::zeros(qp.nx()); n];
        for k in (1..=n).rev() {
            let st = &self.aug[k];
            let mut v = &st.q * &dx[k] + &st.s * &du[k] + &qt[k];
            if k < n {
                v += qp.a[k].transpose() * &dpi[k];
            }
            dpi[k - 1] = v;
        }
        Direction { dx, du, dpi }
    }
}
