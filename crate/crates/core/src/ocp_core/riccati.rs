//! Backward Riccati recursion for the Newton LQ problem, `O(N)` per solve.

use super::ipm::{augment, Direction, NewtonSolver};
use super::qp::OcpQp;
use super::{regularized_cholesky, QpFailure};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

struct StageFactor {
    /// `S + AᵀP'B` (`S̃` at the terminal stage).
    s: DMatrix<f64>,
    chol: Option<Cholesky<f64, Dyn>>,
    k: DMatrix<f64>,
    p: DMatrix<f64>,
}

#[derive(Default)]
pub struct RiccatiSolver {
    factors: Vec<StageFactor>,
}

impl RiccatiSolver {
    pub fn new() -> Self {
        Self::default()
    }
}

fn eliminate(q: DMatrix<f64>, s: DMatrix<f64>, r: DMatrix<f64>, stage: usize) -> Result<StageFactor, QpFailure> {
    if r.nrows() == 0 {
        let nx = q.nrows();
        return Ok(StageFactor { s, chol: None, k: DMatrix::zeros(0, nx), p: q });
    }
    let chol = regularized_cholesky(r).ok_or_else(|| QpFailure::NumericalBreakdown(format!("reduced Hessian not positive definite at stage {stage}")))?;
    let k = -chol.solve(&s.transpose());
    let p = &q + &s * &k;
    let p = (&p + p.transpose()) * 0.5;
    Ok(StageFactor { s, chol: Some(chol), k, p })
}

impl NewtonSolver for RiccatiSolver {
    fn factor(&mut self, qp: &OcpQp, w: &[DVector<f64>]) -> Result<(), QpFailure> {
        let n = qp.horizon();
        let aug = augment(qp, w);
        let mut factors: Vec<Option<StageFactor>> = (0..=n).map(|_| None).collect();
        let last = &aug[n];
        factors[n] = Some(eliminate(last.q.clone(), last.s.clone(), last.r.clone(), n)?);
        for k in (0..n).rev() {
            let pn = &factors[k + 1].as_ref().expect("set").p;
            let (a, b) = (&qp.a[k], &qp.b[k]);
            let pa = pn * a;
            let pb = pn * b;
            let q = &aug[k].q + a.transpose() * &pa;
            let s = &aug[k].s + a.transpose() * &pb;
            let r = &aug[k].r + b.transpose() * &pb;
            factors[k] = Some(eliminate(q, s, r, k)?);
        }
        self.factors = factors.into_iter().map(|f| f.expect("set")).collect();
        Ok(())
    }

    fn solve(&self, qp: &OcpQp, qt: &[DVector<f64>], rt: &[DVector<f64>], rpi: &[DVector<f64>]) -> Direction {
        let n = qp.horizon();
        let mut kk: Vec<DVector<f64>> = vec![DVector::zeros(0); n + 1];
        let mut p: Vec<DVector<f64>> = vec![DVector::zeros(0); n + 1];
        for k in (0..=n).rev() {
            let f = &self.factors[k];
            let (qv, rv) = if k == n {
                (qt[k].clone(), rt[k].clone())
            } else {
                let v = &self.factors[k + 1].p * &rpi[k] + &p[k + 1];
                (&qt[k] + qp.a[k].transpose() * &v, &rt[k] + qp.b[k].transpose() * &v)
            };
            kk[k] = match &f.chol {
                Some(c) => -c.solve(&rv),
                None => DVector::zeros(0),
            };
            p[k] = &qv + &f.s * &kk[k];
        }
        let mut dx = vec![DVector::zeros(qp.nx())];
        let mut du = Vec::with_capacity(n + 1);
        let mut dpi = Vec::with_capacity(n);
        for k in 0..=n {
            let f = &self.factors[k];
            du.push(&f.k * &dx[k] + &kk[k]);
            if k < n {
                let next = &qp.a[k] * &dx[k] + &qp.b[k] * &du[k] + &rpi[k];
                dpi.push(&self.factors[k + 1].p * &next + &p[k + 1]);
                dx.push(next);
            }
        }
        Direction { dx, du, dpi }
    }
}
