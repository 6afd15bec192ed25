//! Mehrotra predictor-corrector interior-point method on an [`OcpQp`].
//!
//! Each Newton system reduces to an unconstrained LQ problem with stage
//! weights augmented by `[D E]ᵀ diag(λ/t) [D E]`; the [`NewtonSolver`] backend
//! decides how that LQ problem is solved.

use super::qp::{kkt_residuals, OcpQp, QpSolution};
use super::QpFailure;
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IpmOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for IpmOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 80 }
    }
}

/// Stage weights of the augmented LQ problem.
pub(crate) struct AugmentedStage {
    pub q: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

pub(crate) fn augment(qp: &OcpQp, w: &[DVector<f64>]) -> Vec<AugmentedStage> {
    qp.stages
        .iter()
        .zip(w)
        .map(|(st, w)| {
            if st.rows() == 0 {
                return AugmentedStage { q: st.q.clone(), s: st.s.clone(), r: st.r.clone() };
            }
            let mut wd = st.d.clone();
            let mut we = st.e.clone();
            for (i, wi) in w.iter().enumerate() {
                wd.row_mut(i).scale_mut(*wi);
                we.row_mut(i).scale_mut(*wi);
            }
            AugmentedStage {
                q: &st.q + st.d.transpose() * &wd,
                s: &st.s + st.d.transpose() * &we,
                r: &st.r + st.e.transpose() * &we,
            }
        })
        .collect()
}

pub struct Direction {
    pub dx: Vec<DVector<f64>>,
    pub du: Vec<DVector<f64>>,
    pub dpi: Vec<DVector<f64>>,
}

/// Solver for `min Σ ½[Δx;Δu]ᵀ H̃_k [Δx;Δu] + q̃ᵀΔx + r̃ᵀΔu` subject to
/// `Δx_{k+1} = A_kΔx_k + B_kΔu_k + rπ_k`, `Δx_0 = 0`.
pub trait NewtonSolver {
    fn factor(&mut self, qp: &OcpQp, w: &[DVector<f64>]) -> Result<(), QpFailure>;
    fn solve(&self, qp: &OcpQp, qt: &[DVector<f64>], rt: &[DVector<f64>], rpi: &[DVector<f64>]) -> Direction;
}

/// Residual below which a non-converged IPM run is still returned.
pub const ACCEPT_RESIDUAL: f64 = 1e-6;

fn max_step(v: &[DVector<f64>], dv: &[DVector<f64>]) -> f64 {
    let mut alpha = 1.0f64;
    for (a, da) in v.iter().zip(dv) {
        for (x, dx) in a.iter().zip(da.iter()) {
            if *dx < 0.0 {
                alpha = alpha.min(-x / dx);
            }
        }
    }
    alpha
}

fn inf_norm(v: &[DVector<f64>]) -> f64 {
    v.iter().map(|e| e.amax()).fold(0.0, f64::max)
}

/// Mean complementarity after the damped step along `(dt, dl)`.
fn complementarity_after(t: &[DVector<f64>], lam: &[DVector<f64>], dt: &[DVector<f64>], dl: &[DVector<f64>], m: usize) -> f64 {
    let alpha = (0.995 * max_step(t, dt).min(max_step(lam, dl))).min(1.0);
    (0..t.len()).map(|k| (&t[k] + &dt[k] * alpha).dot(&(&lam[k] + &dl[k] * alpha))).sum::<f64>() / m as f64
}

/// Runs the IPM from the primal guess `(x, u)`; `x[0]` is replaced by `qp.x0`.
pub fn solve<S: NewtonSolver>(
    qp: &OcpQp,
    solver: &mut S,
    x_init: &[DVector<f64>],
    u_init: &[DVector<f64>],
    opts: &IpmOptions,
) -> Result<QpSolution, QpFailure> {
    let n = qp.horizon();
    let mut x: Vec<DVector<f64>> = x_init.to_vec();
    x[0] = qp.x0.clone();
    let mut u: Vec<DVector<f64>> = u_init.to_vec();
    let mut pi: Vec<DVector<f64>> = (0..n).map(|_| DVector::zeros(qp.nx())).collect();
    let mut t: Vec<DVector<f64>> = qp
        .stages
        .iter()
        .enumerate()
        .map(|(k, st)| (&st.dv - &st.d * &x[k] - &st.e * &u[k]).map(|v| v.max(1.0)))
        .collect();
    let mut lam: Vec<DVector<f64>> = t.iter().map(|ti| DVector::from_element(ti.len(), 1.0)).collect();
    let m: usize = qp.total_rows();

    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    let mut converged = false;
    let mut first_residual = None;
    let (mut prev_residual, mut stalled) = (f64::INFINITY, 0usize);
    // round-off can make late iterates drift; the best one seen is the fallback
    let mut best: Option<(f64, QpSolution)> = None;
    while iterations <= opts.max_iter {
        let res = kkt_residuals(qp, &x, &u, &pi, &lam, &t);
        let mu = if m == 0 { 0.0 } else { lam.iter().zip(&t).map(|(l, t)| l.dot(t)).sum::<f64>() / m as f64 };
        residual = inf_norm(&res.rx).max(inf_norm(&res.ru)).max(inf_norm(&res.rpi)).max(inf_norm(&res.rineq)).max(mu);
        if !residual.is_finite() {
            return Err(QpFailure::NumericalBreakdown(format!("non-finite residual at iteration {iterations}")));
        }
        let start = *first_residual.get_or_insert(residual.max(1.0));
        if residual > 1e8 * start {
            return Err(QpFailure::InfeasibleBounds(format!("diverging iterates (residual {residual:.3e}), constraints likely inconsistent")));
        }
        stalled = if residual > 0.5 * prev_residual { stalled + 1 } else { 0 };
        prev_residual = residual;
        if best.as_ref().is_none_or(|b: &(f64, QpSolution)| residual < b.0) {
            best = Some((residual, QpSolution { x: x.clone(), u: u.clone(), pi: pi.clone(), lam: lam.clone(), t: t.clone(), iterations, kkt_residual: residual }));
        }
        if residual <= opts.tol {
            converged = true;
            break;
        }
        if iterations == opts.max_iter {
            break;
        }
        iterations += 1;

        let w: Vec<DVector<f64>> = lam.iter().zip(&t).map(|(l, t)| l.component_div(t)).collect();
        if let Err(e) = solver.factor(qp, &w) {
            // late iterations saturate λ/t; an iterate that already passes the acceptance test is kept
            if best.as_ref().is_some_and(|b| b.0 <= ACCEPT_RESIDUAL) {
                break;
            }
            return Err(e);
        }

        let direction = |rcomp: &[DVector<f64>]| {
            let v: Vec<DVector<f64>> = (0..=n)
                .map(|k| (lam[k].component_mul(&res.rineq[k]) - &rcomp[k]).component_div(&t[k]))
                .collect();
            let qt: Vec<DVector<f64>> = (0..=n).map(|k| &res.rx[k] + qp.stages[k].d.transpose() * &v[k]).collect();
            let rt: Vec<DVector<f64>> = (0..=n).map(|k| &res.ru[k] + qp.stages[k].e.transpose() * &v[k]).collect();
            let dir = solver.solve(qp, &qt, &rt, &res.rpi);
            let dt: Vec<DVector<f64>> = (0..=n)
                .map(|k| -&res.rineq[k] - &qp.stages[k].d * &dir.dx[k] - &qp.stages[k].e * &dir.du[k])
                .collect();
            let dl: Vec<DVector<f64>> =
                (0..=n).map(|k| (-&rcomp[k] - lam[k].component_mul(&dt[k])).component_div(&t[k])).collect();
            (dir, dt, dl)
        };

        let rcomp_aff: Vec<DVector<f64>> = lam.iter().zip(&t).map(|(l, t)| l.component_mul(t)).collect();
        let (dir, dt, dl) = if m == 0 {
            direction(&rcomp_aff)
        } else {
            let (_, dt_a, dl_a) = direction(&rcomp_aff);
            let alpha_aff = max_step(&t, &dt_a).min(max_step(&lam, &dl_a));
            let mu_aff = (0..=n)
                .map(|k| (&t[k] + &dt_a[k] * alpha_aff).dot(&(&lam[k] + &dl_a[k] * alpha_aff)))
                .sum::<f64>()
                / m as f64;
            let sigma = (mu_aff / mu).powi(3).clamp(0.0, 1.0);
            let rcomp: Vec<DVector<f64>> = if stalled >= 2 {
                // the corrector can lock into a two-cycle; a damped centering step breaks it
                (0..=n).map(|k| &rcomp_aff[k] - DVector::from_element(t[k].len(), sigma.max(0.3) * mu)).collect()
            } else {
                (0..=n)
                    .map(|k| &rcomp_aff[k] + dt_a[k].component_mul(&dl_a[k]) - DVector::from_element(t[k].len(), sigma * mu))
                    .collect()
            };
            let step = direction(&rcomp);
            // once feasible, a corrected step that raises complementarity is cycling
            let infeasibility = inf_norm(&res.rx).max(inf_norm(&res.ru)).max(inf_norm(&res.rpi)).max(inf_norm(&res.rineq));
            if stalled < 2 && infeasibility <= mu && complementarity_after(&t, &lam, &step.1, &step.2, m) > mu {
                let damped: Vec<DVector<f64>> =
                    (0..=n).map(|k| &rcomp_aff[k] - DVector::from_element(t[k].len(), sigma.max(0.3) * mu)).collect();
                direction(&damped)
            } else {
                step
            }
        };
        let alpha = if m == 0 { 1.0 } else { (0.995 * max_step(&t, &dt).min(max_step(&lam, &dl))).min(1.0) };
        for k in 0..=n {
            if k > 0 {
                x[k] += &dir.dx[k] * alpha;
            }
            u[k] += &dir.du[k] * alpha;
            t[k] += &dt[k] * alpha;
            lam[k] += &dl[k] * alpha;
            if k < n {
                pi[k] += &dir.dpi[k] * alpha;
            }
        }
    }
    if !converged {
        return match best {
            Some((r, mut sol)) if r <= ACCEPT_RESIDUAL => {
                sol.iterations = iterations;
                Ok(sol)
            }
            _ => Err(QpFailure::NotConverged { iterations, residual }),
        };
    }
    Ok(QpSolution { x, u, pi, lam, t, iterations, kkt_residual: residual })
}
