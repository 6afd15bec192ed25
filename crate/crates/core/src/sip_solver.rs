//! Outer loops of the nominal and robust SIP solvers: obstacle-subset
//! updates, lower-level solves and linearization, one upper-level
//! subproblem per iteration, and the step-norm convergence test.

use crate::constraint_lin::{
    affine_backoff, linearize_nominal, linearize_robust, rotational_backoff, sdt_fallback, ConstraintError,
    ConstraintSource, LinearizedConstraint,
};
use crate::distance_field::{update_obs_subset, FieldError, ObstacleField, ObstacleSubset, SearchGrid, StageUpdate, SubsetParams};
use crate::dynamics::{integrate, V_CMD, W_CMD};
use crate::geometry::{PaddedPolygon, Pose2};
use crate::ocp_core::{solve_subproblem, OcpProblem, QpBackend, QpFailure, RowActivity, SubproblemOptions, Trajectory};
use crate::ocp_core::ipm::IpmOptions;
use crate::uncertainty::{propagate, psd_sqrt, UncertaintyError, UncertaintyTube};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error(transparent)]
    Qp(#[from] QpFailure),
    #[error("stage {stage} left the map at ({x:.3}, {y:.3})")]
    MapExit { stage: usize, x: f64, y: f64 },
    #[error(transparent)]
    Constraint(ConstraintError),
    #[error(transparent)]
    Uncertainty(#[from] UncertaintyError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl SolveError {
    fn from_field(err: FieldError, stage: usize) -> Self {
        match err {
            FieldError::OutOfBounds { x, y } => SolveError::MapExit { stage, x, y },
            other => SolveError::Constraint(ConstraintError::Field(other)),
        }
    }

    fn from_constraint(err: ConstraintError, stage: usize) -> Self {
        match err {
            ConstraintError::Field(f) => Self::from_field(f, stage),
            other => SolveError::Constraint(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMode {
    #[default]
    Nominal,
    Robust,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveConfig {
    pub mode: SolveMode,
    pub max_iter: usize,
    pub eps_cvg: f64,
    pub subset: SubsetParams,
    pub sqp_iters_per_outer: usize,
    /// Fallback level for penetrating stages, in grid cells.
    pub fallback_cells: f64,
    pub backend: QpBackend,
    pub ipm: IpmOptions,
    /// Record the exact min signed distance over all obstacles at every iterate.
    pub track_min_distance: bool,
    pub parallel: bool,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self::offline(SolveMode::Nominal)
    }
}

impl SolveConfig {
    /// Offline trajectory optimization settings: N = 30 problems, tight tolerance.
    pub fn offline(mode: SolveMode) -> Self {
        Self {
            mode,
            max_iter: 100,
            eps_cvg: 1e-6,
            subset: SubsetParams { cap: 25, ..SubsetParams::default() },
            sqp_iters_per_outer: 1,
            fallback_cells: 5.0,
            backend: QpBackend::Riccati,
            ipm: IpmOptions::default(),
            track_min_distance: false,
            parallel: true,
        }
    }

    /// Closed-loop settings: few iterations, small subsets.
    pub fn mpc(mode: SolveMode) -> Self {
        Self {
            max_iter: if mode == SolveMode::Robust { 5 } else { 6 },
            eps_cvg: 1e-5,
            subset: SubsetParams { cap: 6, ..SubsetParams::default() },
            ..Self::offline(mode)
        }
    }

    pub fn validate(&self) -> Result<(), SolveError> {
        if self.max_iter == 0 {
            return Err(SolveError::Config("max_iter must be at least 1".into()));
        }
        if !(self.eps_cvg > 0.0) {
            return Err(SolveError::Config("eps_cvg must be positive".into()));
        }
        if self.subset.cap == 0 || !(self.subset.boundary_spacing > 0.0) {
            return Err(SolveError::Config("subset cap and boundary spacing must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct PhaseTimes {
    pub subset_update: f64,
    pub lower_level: f64,
    pub upper_level: f64,
    pub propagation: f64,
}

impl PhaseTimes {
    pub fn total(&self) -> f64 {
        self.subset_update + self.lower_level + self.upper_level + self.propagation
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub step_norm: f64,
    pub subset_sizes: Vec<usize>,
    pub penetration_stages: usize,
    pub fallback_rows: usize,
    pub lower_level_solves: usize,
    /// Largest linearized row value at the new iterate (positive = violated).
    pub max_linearized_violation: f64,
    pub total_slack: f64,
    pub kkt_residual: f64,
    pub qp_iterations: usize,
    pub times: PhaseTimes,
    /// Exact minimum signed distance along the new iterate, when tracked.
    pub min_signed_distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverReport {
    pub mode: SolveMode,
    pub iterations: usize,
    pub converged: bool,
    pub records: Vec<IterationRecord>,
    pub seconds: f64,
}

impl SolverReport {
    pub fn final_step(&self) -> f64 {
        self.records.last().map(|r| r.step_norm).unwrap_or(f64::INFINITY)
    }

    pub fn phase_totals(&self) -> PhaseTimes {
        self.records.iter().fold(PhaseTimes::default(), |a, r| PhaseTimes {
            subset_update: a.subset_update + r.times.subset_update,
            lower_level: a.lower_level + r.times.lower_level,
            upper_level: a.upper_level + r.times.upper_level,
            propagation: a.propagation + r.times.propagation,
        })
    }
}

/// Row outcome of a subset member in the last subproblem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MemberActivity {
    pub obstacle: usize,
    pub activity: RowActivity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutput {
    pub traj: Trajectory,
    pub subsets: ObstacleSubset,
    /// Per stage, the rows of subset members in the final subproblem.
    pub activity: Vec<Vec<MemberActivity>>,
    pub report: SolverReport,
    /// Tube along the final iterate (robust mode).
    pub tube: Option<UncertaintyTube>,
}

pub struct SolverContext<'a> {
    pub prob: &'a OcpProblem,
    pub field: &'a ObstacleField,
    pub poly: &'a PaddedPolygon,
    pub cfg: &'a SolveConfig,
}

struct StageRows {
    rows: Vec<LinearizedConstraint>,
    update: StageUpdate,
    lower_level: usize,
    fallback: usize,
    subset_seconds: f64,
    lower_seconds: f64,
}

/// Frozen uncertainty data of one stage.
struct StageTube<'a> {
    sigma: &'a DMatrix<f64>,
    root: &'a DMatrix<f64>,
}

fn stage_rows(
    ctx: &SolverContext,
    search: &SearchGrid,
    k: usize,
    x: &DVector<f64>,
    prev: &[usize],
    tube: Option<StageTube>,
) -> Result<StageRows, SolveError> {
    let t0 = Instant::now();
    let pose = Pose2::from_state(x.as_slice());
    let update =
        update_obs_subset(ctx.field, ctx.poly, &pose, prev, &ctx.cfg.subset, search).map_err(|e| SolveError::from_field(e, k))?;
    let subset_seconds = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let level = ctx.cfg.fallback_cells * ctx.field.resolution();
    let fallback_rows = |update: &StageUpdate| -> Result<Vec<LinearizedConstraint>, SolveError> {
        update
            .worst_boundary_points
            .iter()
            .map(|g| {
                let mut row = sdt_fallback(ctx.field, x, g, level, k).map_err(|e| SolveError::from_constraint(e, k))?;
                if let Some(t) = &tube {
                    row.backoff = affine_backoff(&row.grad_x, t.sigma);
                }
                Ok(row)
            })
            .collect()
    };
    let mut rows = Vec::with_capacity(update.indices.len());
    let mut lower_level = 0;
    let mut use_fallback = update.penetration;
    if !use_fallback {
        for &idx in &update.indices {
            let p_o = ctx.field.points()[idx];
            lower_level += 1;
            let row = match &tube {
                None => linearize_nominal(ctx.poly, x, &p_o, idx, k),
                Some(t) => linearize_robust(ctx.poly, x, t.sigma, t.root, &p_o, idx, k).or_else(|e| match e {
                    // uncertain footprint reaches the obstacle: nominal direction, robust value
                    ConstraintError::PenetrationCase(_) => linearize_nominal(ctx.poly, x, &p_o, idx, k).map(|mut r| {
                        r.value = ctx.poly.r_shp();
                        r.backoff = rotational_backoff(ctx.poly, t.sigma);
                        r
                    }),
                    other => Err(other),
                }),
            };
            match row {
                Ok(r) => rows.push(r),
                Err(ConstraintError::PenetrationCase(_)) => {
                    use_fallback = true;
                    break;
                }
                Err(e) => return Err(SolveError::from_constraint(e, k)),
            }
        }
    }
    let mut fallback = 0;
    if use_fallback {
        rows.clear();
        let fb = fallback_rows(&update)?;
        fallback = fb.len();
        rows.extend(fb);
    }
    Ok(StageRows { rows, update, lower_level, fallback, subset_seconds, lower_seconds: t1.elapsed().as_secs_f64() })
}

fn validate_inputs(ctx: &SolverContext, guess: &Trajectory, subsets: &ObstacleSubset) -> Result<(), SolveError> {
    ctx.cfg.validate()?;
    let n = ctx.prob.horizon;
    if guess.horizon() != n {
        return Err(SolveError::Config(format!("guess horizon {} differs from problem horizon {n}", guess.horizon())));
    }
    if subsets.stages() != n + 1 {
        return Err(SolveError::Config(format!("subset has {} stages, expected {}", subsets.stages(), n + 1)));
    }
    Ok(())
}

fn tube_along(prob: &OcpProblem, tube0: &UncertaintyTube, traj: &Trajectory) -> Result<UncertaintyTube, SolveError> {
    let zero = DVector::zeros(prob.nx());
    let steps: Vec<_> = (0..prob.horizon).map(|k| integrate(&prob.model, &traj.x[k], &traj.u[k], &zero, prob.dt)).collect();
    Ok(propagate(tube0, &steps)?)
}

fn outer_loop(
    ctx: &SolverContext,
    tube0: Option<&UncertaintyTube>,
    guess: &Trajectory,
    subsets: ObstacleSubset,
) -> Result<SolveOutput, SolveError> {
    validate_inputs(ctx, guess, &subsets)?;
    let start = Instant::now();
    let prob = ctx.prob;
    let n = prob.horizon;
    let search = SearchGrid::new(ctx.poly, &ctx.cfg.subset);
    let mut z = guess.clone();
    z.x[0] = prob.x0.clone();
    let mut subsets = subsets;
    let mut records = Vec::new();
    let mut converged = false;
    let mut activity = vec![Vec::new(); n + 1];
    let mut tube = None;
    let mode = if tube0.is_some() { SolveMode::Robust } else { SolveMode::Nominal };
    let sqp_iters = if tube0.is_some() { 1 } else { ctx.cfg.sqp_iters_per_outer.max(1) };

    for iteration in 1..=ctx.cfg.max_iter {
        let mut times = PhaseTimes::default();
        let (sigmas, roots) = match tube0 {
            Some(t0) => {
                let tp = Instant::now();
                let t = tube_along(prob, t0, &z)?;
                let roots = t.sigma.iter().map(psd_sqrt).collect::<Result<Vec<_>, _>>()?;
                times.propagation = tp.elapsed().as_secs_f64();
                let sig = t.sigma.clone();
                tube = Some(t);
                (Some(sig), Some(roots))
            }
            None => (None, None),
        };

        let work = |k: usize| {
            let st = match (&sigmas, &roots) {
                (Some(s), Some(r)) => Some(StageTube { sigma: &s[k], root: &r[k] }),
                _ => None,
            };
            stage_rows(ctx, &search, k, &z.x[k], &subsets.indices[k], st)
        };
        let wall = Instant::now();
        let per_stage: Vec<StageRows> = if ctx.cfg.parallel {
            (1..=n).into_par_iter().map(work).collect::<Result<_, _>>()?
        } else {
            (1..=n).map(work).collect::<Result<_, _>>()?
        };
        let wall_rows = wall.elapsed().as_secs_f64();
        // attribute the joined wall time to the phases in proportion to their summed work
        let (sub_sum, low_sum): (f64, f64) = per_stage.iter().fold((0.0, 0.0), |a, s| (a.0 + s.subset_seconds, a.1 + s.lower_seconds));
        let share = if sub_sum + low_sum > 0.0 { sub_sum / (sub_sum + low_sum) } else { 0.5 };
        times.subset_update = wall_rows * share;
        times.lower_level = wall_rows * (1.0 - share);

        let mut rows = Vec::new();
        let mut penetration_stages = 0;
        let mut fallback_rows = 0;
        let mut lower_level_solves = 0;
        for (i, s) in per_stage.into_iter().enumerate() {
            let k = i + 1;
            subsets.indices[k] = s.update.indices.clone();
            subsets.penetration[k] = s.update.penetration;
            penetration_stages += usize::from(s.fallback > 0);
            fallback_rows += s.fallback;
            lower_level_solves += s.lower_level;
            rows.extend(s.rows);
        }

        let tq = Instant::now();
        let box_backoff = sigmas.as_ref().map(|s| {
            s.iter()
                .map(|sig| {
                    let e = |i: usize| DVector::from_fn(sig.nrows(), |j, _| if j == i { 1.0 } else { 0.0 });
                    [affine_backoff(&e(V_CMD), sig), affine_backoff(&e(W_CMD), sig)]
                })
                .collect()
        });
        let opts = SubproblemOptions { ipm: ctx.cfg.ipm, backend: ctx.cfg.backend, soft: true, box_backoff };
        let res = solve_subproblem(prob, &rows, &z, sqp_iters, &opts)?;
        times.upper_level = tq.elapsed().as_secs_f64();

        let step_norm = res.traj.max_abs_diff(&z);
        activity = vec![Vec::new(); n + 1];
        for (row, act) in rows.iter().zip(&res.rows) {
            if let ConstraintSource::Obstacle(obstacle) = row.source {
                activity[row.stage].push(MemberActivity { obstacle, activity: *act });
            }
        }
        z = res.traj;
        let min_signed_distance = ctx.cfg.track_min_distance.then(|| crate::simulator::trajectory_min_distance(ctx.field.points(), ctx.poly, &z));
        records.push(IterationRecord {
            iteration,
            step_norm,
            subset_sizes: subsets.sizes(),
            penetration_stages,
            fallback_rows,
            lower_level_solves,
            max_linearized_violation: res.rows.iter().map(|r| r.value).fold(f64::NEG_INFINITY, f64::max),
            total_slack: res.rows.iter().map(|r| r.slack).sum(),
            kkt_residual: res.kkt_residual,
            qp_iterations: res.qp_iterations.iter().sum(),
            times,
            min_signed_distance,
        });
        if step_norm <= ctx.cfg.eps_cvg {
            converged = true;
            break;
        }
    }
    if let Some(t0) = tube0 {
        tube = Some(tube_along(prob, t0, &z)?);
    }
    let report = SolverReport { mode, iterations: records.len(), converged, records, seconds: start.elapsed().as_secs_f64() };
    Ok(SolveOutput { traj: z, subsets, activity, report, tube })
}

pub fn solve_nominal_ocp(
    prob: &OcpProblem,
    field: &ObstacleField,
    poly: &PaddedPolygon,
    guess: &Trajectory,
    subsets: Option<ObstacleSubset>,
    cfg: &SolveConfig,
) -> Result<SolveOutput, SolveError> {
    if cfg.mode != SolveMode::Nominal {
        return Err(SolveError::Config("solve_nominal_ocp needs mode = nominal".into()));
    }
    let ctx = SolverContext { prob, field, poly, cfg };
    outer_loop(&ctx, None, guess, subsets.unwrap_or_else(|| ObstacleSubset::empty(prob.horizon + 1)))
}

pub fn solve_robust_ocp(
    prob: &OcpProblem,
    field: &ObstacleField,
    poly: &PaddedPolygon,
    tube0: &UncertaintyTube,
    guess: &Trajectory,
    subsets: Option<ObstacleSubset>,
    cfg: &SolveConfig,
) -> Result<SolveOutput, SolveError> {
    if cfg.mode != SolveMode::Robust {
        return Err(SolveError::Config("solve_robust_ocp needs mode = robust".into()));
    }
    if tube0.horizon() != prob.horizon || tube0.sigma0.nrows() != prob.nx() {
        return Err(SolveError::Config("uncertainty tube does not match the problem".into()));
    }
    let ctx = SolverContext { prob, field, poly, cfg };
    outer_loop(&ctx, Some(tube0), guess, subsets.unwrap_or_else(|| ObstacleSubset::empty(prob.horizon + 1)))
}

/// Dispatches on `cfg.mode`.
pub fn solve_ocp(
    prob: &OcpProblem,
    field: &ObstacleField,
    poly: &PaddedPolygon,
    tube0: &UncertaintyTube,
    guess: &Trajectory,
    subsets: Option<ObstacleSubset>,
    cfg: &SolveConfig,
) -> Result<SolveOutput, SolveError> {
    match cfg.mode {
        SolveMode::Nominal => solve_nominal_ocp(prob, field, poly, guess, subsets, cfg),
        SolveMode::Robust => solve_robust_ocp(prob, field, poly, tube0, guess, subsets, cfg),
    }
}

/// A member counts as active when its slack vanishes and its linearized value
/// is within `10·eps` of the boundary.
pub fn is_active(a: &RowActivity, eps: f64) -> bool {
    a.slack <= 1e-9 && a.value >= -10.0 * eps
}

/// Shifts the trajectory by `steps` stages (last stage repeated) and keeps
/// only subset members that were active in the last subproblem.
pub fn shift_warm_start(
    prev: &Trajectory,
    activity: &[Vec<MemberActivity>],
    steps: usize,
    eps: f64,
) -> (Trajectory, ObstacleSubset) {
    let steps = steps.max(1);
    let n = prev.horizon();
    let mut subsets = ObstacleSubset::empty(n + 1);
    for k in 1..=n {
        let src = (k + steps).min(n);
        if let Some(members) = activity.get(src) {
            subsets.indices[k] = members.iter().filter(|m| is_active(&m.activity, eps)).map(|m| m.obstacle).collect();
            subsets.indices[k].dedup();
        }
    }
    (prev.shifted(steps), subsets)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn act(slack: f64, value: f64) -> RowActivity {
        RowActivity { slack, value, multiplier: 0.0 }
    }

    #[test]
    fn shift_keeps_only_active_members() {
        let x: Vec<_> = (0..4).map(|k| DVector::from_element(5, k as f64)).collect();
        let u: Vec<_> = (0..3).map(|_| DVector::zeros(2)).collect();
        let traj = Trajectory { x, u };
        let mut activity = vec![Vec::new(); 4];
        activity[2] = vec![
            MemberActivity { obstacle: 7, activity: act(0.0, 0.0) },
            MemberActivity { obstacle: 9, activity: act(0.0, -0.5) },
        ];
        let (shifted, subsets) = shift_warm_start(&traj, &activity, 1, 1e-5);
        assert_eq!(shifted.x.iter().map(|v| v[0]).collect::<Vec<_>>(), vec![1.0, 2.0, 3.0, 3.0]);
        assert_eq!(subsets.indices[1], vec![7]);
        assert!(subsets.indices[2].is_empty());

        let (_, empty) = shift_warm_start(&traj, &vec![Vec::new(); 4], 1, 1e-5);
        assert!(empty.indices.iter().all(Vec::is_empty));
    }

    #[test]
    fn slacked_members_are_inactive() {
        assert!(!is_active(&act(1e-3, 0.0), 1e-5));
        assert!(is_active(&act(0.0, -5e-5), 1e-5));
        assert!(!is_active(&act(0.0, -2e-4), 1e-5));
    }

    #[test]
    fn config_defaults() {
        let c = SolveConfig::offline(SolveMode::Nominal);
        assert_eq!((c.max_iter, c.eps_cvg, c.subset.cap), (100, 1e-6, 25));
        assert_eq!(c.subset.eps_inside, 0.03);
        assert_eq!(c.subset.boundary_spacing, 0.016);
        let m = SolveConfig::mpc(SolveMode::Robust);
        assert_eq!((m.max_iter, m.eps_cvg, m.subset.cap), (5, 1e-5, 6));
        assert_eq!(SolveConfig::mpc(SolveMode::Nominal).max_iter, 6);
        assert!(SolveConfig { max_iter: 0, ..c }.validate().is_err());
    }
}
