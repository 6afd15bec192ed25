//! Randomized-start benchmark suites on the L-corridor (or a supplied map):
//! per-case solver statistics and the aggregates behind the convergence,
//! violation and timing plots.

use crate::distance_field::{EdtMethod, ObstacleField};
use crate::dynamics::{DiffDriveModel, HeadingConvention};
use crate::geometry::{PaddedPolygon, Vec2};
use crate::map_io::l_corridor;
use crate::ocp_core::{LimitProfile, OcpProblem, SlackWeights, TrackingWeights, Trajectory};
use crate::simulator::{generate_reference, trajectory_min_distance, Quantiles, SimError};
use crate::sip_solver::{solve_ocp, SolveConfig, SolveMode};
use crate::uncertainty::{NoiseSpec, UncertaintyTube};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Box2 {
    pub x: [f64; 2],
    pub y: [f64; 2],
}

impl Box2 {
    fn sample(&self, rng: &mut impl Rng) -> Vec2 {
        let u = |r: [f64; 2], rng: &mut dyn rand::RngCore| if r[1] > r[0] { rng.random_range(r[0]..r[1]) } else { r[0] };
        Vec2::new(u(self.x, rng), u(self.y, rng))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteSpec {
    pub name: String,
    pub cases: usize,
    pub seed: u64,
    pub mode: SolveMode,
    pub profile: LimitProfile,
    pub horizon: usize,
    pub dt: f64,
    pub max_iter: usize,
    pub eps_cvg: f64,
    pub cap: usize,
    pub resolution: f64,
    pub r_shp: f64,
    pub heading: HeadingConvention,
    /// Random boxes for the start, the corner waypoint and the goal.
    pub start: Box2,
    pub corner: Box2,
    pub goal: Box2,
    /// Heading perturbation at the start, radians.
    pub heading_noise: f64,
    pub sigma0: f64,
    pub w_per_50ms: f64,
    /// Point cloud or PGM map; the synthetic L-corridor when absent.
    pub map: Option<std::path::PathBuf>,
}

impl Default for SuiteSpec {
    fn default() -> Self {
        Self {
            name: "l_corridor".into(),
            cases: 50,
            seed: 1,
            mode: SolveMode::Nominal,
            profile: LimitProfile::Medium,
            horizon: 30,
            dt: 0.2,
            max_iter: 100,
            eps_cvg: 1e-6,
            cap: 25,
            resolution: 0.02,
            r_shp: 0.2,
            heading: HeadingConvention::CosSin,
            start: Box2 { x: [0.6, 2.6], y: [0.45, 0.75] },
            corner: Box2 { x: [3.6, 4.0], y: [0.6, 1.0] },
            goal: Box2 { x: [3.8, 4.2], y: [2.5, 4.0] },
            heading_noise: 0.1,
            sigma0: 4e-5,
            w_per_50ms: 2.5e-4,
            map: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseResult {
    pub index: usize,
    pub waypoints: Vec<[f64; 2]>,
    pub iterations: usize,
    pub converged: bool,
    pub final_step: f64,
    /// Exact min signed distance after each outer iteration.
    pub min_distance: Vec<f64>,
    pub seconds: f64,
    pub subset_update: f64,
    pub lower_level: f64,
    pub upper_level: f64,
    pub propagation: f64,
    pub error: Option<String>,
}

impl CaseResult {
    /// Metric after `j` iterations; a run that stopped earlier keeps its last value.
    pub fn distance_after(&self, j: usize) -> f64 {
        match self.min_distance.len() {
            0 => f64::NEG_INFINITY,
            n => self.min_distance[j.clamp(1, n) - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregates {
    pub cases: usize,
    pub failed: usize,
    pub converged_fraction: f64,
    /// `iteration_histogram[j]` counts runs that converged after exactly `j + 1` iterations.
    pub iteration_histogram: Vec<usize>,
    /// Fraction of cases with min signed distance ≥ −1e−3 after `j + 1` iterations.
    pub feasible_fraction: Vec<f64>,
    /// Median and 90th-percentile violation `max(0, −sd)` after `j + 1` iterations.
    pub median_violation: Vec<f64>,
    pub p90_violation: Vec<f64>,
    pub median_iterations: f64,
    pub seconds: Quantiles,
    pub subset_update: Quantiles,
    pub lower_level: Quantiles,
    pub upper_level: Quantiles,
    pub propagation: Quantiles,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub spec: SuiteSpec,
    pub aggregates: Aggregates,
    pub cases: Vec<CaseResult>,
}

pub const FEASIBLE_TOL: f64 = 1e-3;

/// One prepared benchmark case.
pub struct Case {
    pub index: usize,
    pub waypoints: Vec<Vec2>,
    pub prob: OcpProblem,
    pub guess: Trajectory,
    pub tube0: UncertaintyTube,
}

pub struct Suite {
    pub spec: SuiteSpec,
    pub field: ObstacleField,
    pub poly: PaddedPolygon,
    pub model: DiffDriveModel,
}

impl Suite {
    /// Suite on the synthetic L-corridor.
    pub fn l_corridor(spec: SuiteSpec) -> Result<Self, SimError> {
        let field = ObstacleField::from_points(l_corridor(), spec.resolution, crate::map_io::CLOUD_MARGIN, EdtMethod::Exact)
            .map_err(|e| SimError::Scenario(e.to_string()))?;
        Self::with_field(spec, field)
    }

    pub fn with_field(spec: SuiteSpec, field: ObstacleField) -> Result<Self, SimError> {
        if spec.cases == 0 || spec.horizon == 0 || !(spec.dt > 0.0) {
            return Err(SimError::Scenario("suite needs cases, horizon and dt > 0".into()));
        }
        let poly = PaddedPolygon::reference_robot().with_padding(spec.r_shp).map_err(|e| SimError::Scenario(e.to_string()))?;
        let model = DiffDriveModel::kinematic().with_heading(spec.heading);
        Ok(Self { spec, field, poly, model })
    }

    pub fn config(&self) -> SolveConfig {
        let mut cfg = SolveConfig::offline(self.spec.mode);
        cfg.max_iter = self.spec.max_iter;
        cfg.eps_cvg = self.spec.eps_cvg;
        cfg.subset.cap = self.spec.cap;
        cfg.track_min_distance = true;
        cfg
    }

    /// Deterministic case `index`: its own RNG stream of the suite seed.
    pub fn case(&self, index: usize) -> Result<Case, SimError> {
        let s = &self.spec;
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
        rng.set_stream(index as u64);
        let waypoints = vec![s.start.sample(&mut rng), s.corner.sample(&mut rng), s.goal.sample(&mut rng)];
        let limits = s.profile.limits();
        let reference = generate_reference(&self.model, &waypoints, &limits, s.dt)?;
        let (x_ref, u_ref) = reference.window(0, s.horizon);
        let mut x0 = x_ref[0].clone();
        if s.heading_noise > 0.0 {
            x0[2] += rng.random_range(-s.heading_noise..s.heading_noise);
        }
        let guess = Trajectory { x: x_ref.clone(), u: u_ref.clone() };
        let prob = OcpProblem::new(self.model.clone(), s.dt, x0, x_ref, u_ref, limits, &TrackingWeights::default(), SlackWeights::default())
            .map_err(|e| SimError::Scenario(e.to_string()))?;
        let nx = self.model.nx();
        let mut sigma0 = DMatrix::zeros(nx, nx);
        for i in 0..3 {
            sigma0[(i, i)] = s.sigma0;
        }
        let w = NoiseSpec::Per50ms { w_per_50ms: s.w_per_50ms }.matrix(nx, s.dt)?;
        let tube0 = UncertaintyTube::new(sigma0, vec![w; s.horizon]);
        Ok(Case { index, waypoints, prob, guess, tube0 })
    }

    pub fn run_case(&self, index: usize) -> CaseResult {
        let mut result = CaseResult {
            index,
            waypoints: Vec::new(),
            iterations: 0,
            converged: false,
            final_step: f64::INFINITY,
            min_distance: Vec::new(),
            seconds: 0.0,
            subset_update: 0.0,
            lower_level: 0.0,
            upper_level: 0.0,
            propagation: 0.0,
            error: None,
        };
        let case = match self.case(index) {
            Ok(c) => c,
            Err(e) => {
                result.error = Some(e.to_string());
                return result;
            }
        };
        result.waypoints = case.waypoints.iter().map(|p| [p.x, p.y]).collect();
        let cfg = self.config();
        match solve_ocp(&case.prob, &self.field, &self.poly, &case.tube0, &case.guess, None, &cfg) {
            Ok(out) => {
                let t = out.report.phase_totals();
                result.iterations = out.report.iterations;
                result.converged = out.report.converged;
                result.final_step = out.report.final_step();
                result.min_distance = out.report.records.iter().filter_map(|r| r.min_signed_distance).collect();
                result.seconds = out.report.seconds;
                result.subset_update = t.subset_update;
                result.lower_level = t.lower_level;
                result.upper_level = t.upper_level;
                result.propagation = t.propagation;
                debug_assert_eq!(
                    result.min_distance.last().copied(),
                    Some(trajectory_min_distance(self.field.points(), &self.poly, &out.traj))
                );
            }
            Err(e) => result.error = Some(e.to_string()),
        }
        result
    }

    /// Runs every case (in parallel; results keep case order).
    pub fn run(&self) -> SuiteReport {
        let cases: Vec<CaseResult> = (0..self.spec.cases).into_par_iter().map(|i| self.run_case(i)).collect();
        SuiteReport { aggregates: aggregate(&cases, self.spec.max_iter), spec: self.spec.clone(), cases }
    }
}

pub fn aggregate(cases: &[CaseResult], max_iter: usize) -> Aggregates {
    let ok: Vec<&CaseResult> = cases.iter().filter(|c| c.error.is_none()).collect();
    let n = cases.len().max(1) as f64;
    let mut iteration_histogram = vec![0; max_iter];
    for c in ok.iter().filter(|c| c.converged) {
        if let Some(slot) = iteration_histogram.get_mut(c.iterations.saturating_sub(1)) {
            *slot += 1;
        }
    }
    let depth = ok.iter().map(|c| c.min_distance.len()).max().unwrap_or(0);
    let mut feasible_fraction = Vec::with_capacity(depth);
    let mut median_violation = Vec::with_capacity(depth);
    let mut p90_violation = Vec::with_capacity(depth);
    for j in 1..=depth {
        let d: Vec<f64> = ok.iter().map(|c| c.distance_after(j)).collect();
        // failed cases count as infeasible
        feasible_fraction.push(d.iter().filter(|v| **v >= -FEASIBLE_TOL).count() as f64 / n);
        let viol: Vec<f64> = d.iter().map(|v| (-v).max(0.0)).collect();
        let q = Quantiles::of(&viol);
        median_violation.push(q.p50);
        p90_violation.push(q.p90);
    }
    let q = |f: &dyn Fn(&CaseResult) -> f64| Quantiles::of(&ok.iter().map(|c| f(c)).collect::<Vec<_>>());
    Aggregates {
        cases: cases.len(),
        failed: cases.len() - ok.len(),
        converged_fraction: ok.iter().filter(|c| c.converged).count() as f64 / n,
        iteration_histogram,
        feasible_fraction,
        median_violation,
        p90_violation,
        median_iterations: q(&|c| c.iterations as f64).p50,
        seconds: q(&|c| c.seconds),
        subset_update: q(&|c| c.subset_update),
        lower_level: q(&|c| c.lower_level),
        upper_level: q(&|c| c.upper_level),
        propagation: q(&|c| c.propagation),
    }
}

/// Fraction of cases feasible within `j` iterations (`0` if none ran that far).
pub fn feasible_within(cases: &[CaseResult], j: usize) -> f64 {
    let n = cases.len().max(1) as f64;
    cases.iter().filter(|c| c.error.is_none() && c.distance_after(j) >= -FEASIBLE_TOL).count() as f64 / n
}

/// Steady-state guess helper for callers building their own cases.
pub fn rest_state(model: &DiffDriveModel, p: Vec2, theta: f64) -> DVector<f64> {
    model.steady_state([p.x, p.y, theta], 0.0, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cases_are_deterministic_and_distinct() {
        let suite = Suite::l_corridor(SuiteSpec { cases: 3, ..SuiteSpec::default() }).unwrap();
        let a = suite.case(1).unwrap();
        let b = suite.case(1).unwrap();
        let c = suite.case(2).unwrap();
        assert_eq!(a.waypoints, b.waypoints);
        assert_eq!(a.prob.x0, b.prob.x0);
        assert_ne!(a.waypoints, c.waypoints);
        assert_eq!(a.prob.horizon, 30);
    }

    #[test]
    fn distance_after_carries_last_value() {
        let c = CaseResult {
            index: 0,
            waypoints: vec![],
            iterations: 2,
            converged: true,
            final_step: 0.0,
            min_distance: vec![-0.1, 0.0],
            seconds: 0.0,
            subset_update: 0.0,
            lower_level: 0.0,
            upper_level: 0.0,
            propagation: 0.0,
            error: None,
        };
        assert_eq!(c.distance_after(1), -0.1);
        assert_eq!(c.distance_after(5), 0.0);
        let agg = aggregate(&[c.clone()], 4);
        assert_eq!(agg.iteration_histogram, vec![0, 1, 0, 0]);
        assert_eq!(agg.feasible_fraction, vec![0.0, 1.0]);
        assert_eq!(feasible_within(&[c], 1), 0.0);
    }
}
