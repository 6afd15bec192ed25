//! Closed-loop MPC simulation, reference generation and the exact
//! minimum-signed-distance metric.

use crate::distance_field::ObstacleField;
use crate::dynamics::{step_state, DiffDriveModel, NU, THETA};
use crate::geometry::{project_point_onto_polygon, PaddedPolygon, Pose2, Vec2};
use crate::ocp_core::{Limits, OcpProblem, SlackWeights, TrackingWeights, Trajectory};
use crate::sip_solver::{shift_warm_start, solve_ocp, PhaseTimes, SolveConfig, SolveError, SolveMode};
use crate::uncertainty::{psd_sqrt, NoiseSpec, UncertaintyError, UncertaintyTube};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("reference path has zero length")]
    DegeneratePath,
    #[error("reference needs at least two waypoints, got {0}")]
    TooFewWaypoints(usize),
    #[error("invalid limits or time step")]
    BadLimits,
    #[error("scenario: {0}")]
    Scenario(String),
    #[error(transparent)]
    Uncertainty(#[from] UncertaintyError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Exact `min_o (dist(p_o, footprint) − r_shp)` over all points.
pub fn evaluate_min_distance(points: &[Vec2], poly: &PaddedPolygon, pose: &Pose2) -> f64 {
    points
        .iter()
        .map(|p| project_point_onto_polygon(poly, &pose.to_body(p)).1 - poly.r_shp())
        .fold(f64::INFINITY, f64::min)
}

/// Metric per state of a sequence.
pub fn min_distance_trace(points: &[Vec2], poly: &PaddedPolygon, xs: &[DVector<f64>]) -> Vec<f64> {
    xs.iter().map(|x| evaluate_min_distance(points, poly, &Pose2::from_state(x.as_slice()))).collect()
}

/// Minimum of the metric over stages `1..=N`; the fixed initial state is excluded.
pub fn trajectory_min_distance(points: &[Vec2], poly: &PaddedPolygon, traj: &Trajectory) -> f64 {
    let from = usize::from(traj.x.len() > 1);
    min_distance_trace(points, poly, &traj.x[from..]).into_iter().fold(f64::INFINITY, f64::min)
}

/// Time-sampled reference: states at `t = k·dt`, inputs on the intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub dt: f64,
    pub x: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    /// Duration of the motion profile.
    pub duration: f64,
    pub length: f64,
}

impl Reference {
    /// `N + 1` states and `N` inputs starting at sample `start`, holding the final sample.
    pub fn window(&self, start: usize, horizon: usize) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
        let lx = self.x.len() - 1;
        let x = (0..=horizon).map(|k| self.x[(start + k).min(lx)].clone()).collect();
        let u = (0..horizon)
            .map(|k| self.u.get(start + k).cloned().unwrap_or_else(|| DVector::zeros(NU)))
            .collect();
        (x, u)
    }

    pub fn samples(&self) -> usize {
        self.x.len()
    }
}

/// Trapezoidal speed profile over arc length with boundary speeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedProfile {
    pub length: f64,
    pub v0: f64,
    pub v1: f64,
    pub v_peak: f64,
    pub accel: f64,
    t_acc: f64,
    t_cruise: f64,
    t_dec: f64,
}

impl SpeedProfile {
    pub fn new(length: f64, v_max: f64, accel: f64, v0: f64, v1: f64) -> Result<Self, SimError> {
        if !(length > 0.0) {
            return Err(SimError::DegeneratePath);
        }
        if !(v_max > 0.0 && accel > 0.0) {
            return Err(SimError::BadLimits);
        }
        let v0 = v0.clamp(0.0, v_max);
        // the end speed must be reachable from the start within the length
        let v1 = v1.clamp(0.0, v_max).min((v0 * v0 + 2.0 * accel * length).sqrt());
        let v1 = v1.max((v0 * v0 - 2.0 * accel * length).max(0.0).sqrt());
        let v_peak = ((2.0 * accel * length + v0 * v0 + v1 * v1) / 2.0).sqrt().min(v_max).max(v0.max(v1));
        let d_acc = (v_peak * v_peak - v0 * v0) / (2.0 * accel);
        let d_dec = (v_peak * v_peak - v1 * v1) / (2.0 * accel);
        let cruise = (length - d_acc - d_dec).max(0.0);
        Ok(Self {
            length,
            v0,
            v1,
            v_peak,
            accel,
            t_acc: (v_peak - v0) / accel,
            t_cruise: cruise / v_peak,
            t_dec: (v_peak - v1) / accel,
        })
    }

    pub fn duration(&self) -> f64 {
        self.t_acc + self.t_cruise + self.t_dec
    }

    /// `(s, v, a)` at time `t`; holds the end state afterwards.
    pub fn sample(&self, t: f64) -> (f64, f64, f64) {
        let a = self.accel;
        if t <= 0.0 {
            return (0.0, self.v0, 0.0);
        }
        if t < self.t_acc {
            return (self.v0 * t + 0.5 * a * t * t, self.v0 + a * t, a);
        }
        let s_acc = self.v0 * self.t_acc + 0.5 * a * self.t_acc * self.t_acc;
        let t2 = t - self.t_acc;
        if t2 < self.t_cruise {
            return (s_acc + self.v_peak * t2, self.v_peak, 0.0);
        }
        let s_cr = s_acc + self.v_peak * self.t_cruise;
        let t3 = t2 - self.t_cruise;
        if t3 < self.t_dec {
            return (s_cr + self.v_peak * t3 - 0.5 * a * t3 * t3, self.v_peak - a * t3, -a);
        }
        (self.length, self.v1, 0.0)
    }
}

/// Piecewise-linear path through the waypoints with a trapezoidal speed
/// profile from rest to rest. Headings follow segment tangents; the angular
/// reference is zero.
pub fn generate_reference(model: &DiffDriveModel, waypoints: &[Vec2], limits: &Limits, dt: f64) -> Result<Reference, SimError> {
    generate_reference_between(model, waypoints, limits, dt, 0.0, 0.0)
}

pub fn generate_reference_between(
    model: &DiffDriveModel,
    waypoints: &[Vec2],
    limits: &Limits,
    dt: f64,
    v_start: f64,
    v_end: f64,
) -> Result<Reference, SimError> {
    if waypoints.len() < 2 {
        return Err(SimError::TooFewWaypoints(waypoints.len()));
    }
    if !limits.is_valid() || !(dt > 0.0) {
        return Err(SimError::BadLimits);
    }
    let segs: Vec<(Vec2, Vec2, f64)> = waypoints
        .windows(2)
        .map(|w| (w[0], w[1], (w[1] - w[0]).norm()))
        .filter(|s| s.2 > 1e-12)
        .collect();
    if segs.is_empty() {
        return Err(SimError::DegeneratePath);
    }
    let mut cum = vec![0.0];
    let mut headings: Vec<f64> = Vec::with_capacity(segs.len());
    for (a, b, l) in &segs {
        cum.push(cum.last().unwrap() + l);
        let d = b - a;
        let mut th = model.heading.heading_of(d.x, d.y);
        if let Some(prev) = headings.last() {
            // unwrap so the heading sequence is continuous
            th = prev + (th - prev + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI;
        }
        headings.push(th);
    }
    let length = *cum.last().unwrap();
    let profile = SpeedProfile::new(length, limits.v_max, limits.a_max, v_start, v_end)?;
    let duration = profile.duration();
    let samples = (duration / dt - 1e-9).ceil().max(1.0) as usize;
    let mut x = Vec::with_capacity(samples + 1);
    let mut u = Vec::with_capacity(samples);
    for k in 0..=samples {
        let t = k as f64 * dt;
        let (s, v, _) = profile.sample(t);
        let i = cum.partition_point(|c| *c <= s).saturating_sub(1).min(segs.len() - 1);
        let (a, b, l) = segs[i];
        let p = a + (b - a) * ((s - cum[i]) / l).clamp(0.0, 1.0);
        x.push(model.steady_state([p.x, p.y, headings[i]], v, 0.0));
        if k < samples {
            // input realizing the interval's mean acceleration
            let (_, v_next, _) = profile.sample(t + dt);
            u.push(DVector::from_vec(vec![(v_next - v) / dt, 0.0]));
        }
    }
    Ok(Reference { dt, x, u, duration, length })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum OverrunPolicy {
    /// Always apply the fresh solution.
    #[default]
    Wait,
    /// Apply the previous solution's next input when the solve exceeds the control period.
    Hold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSettings {
    pub steps: usize,
    pub seed: u64,
    pub disturbance_scale: f64,
    pub overrun: OverrunPolicy,
    /// Sample disturbances on the ellipsoid surface instead of its interior.
    pub boundary_sampling: bool,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self { steps: 200, seed: 0, disturbance_scale: 1.0, overrun: OverrunPolicy::Wait, boundary_sampling: false }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub field: ObstacleField,
    pub poly: PaddedPolygon,
    /// Prediction model of the controller.
    pub model: DiffDriveModel,
    /// Simulated plant; its leading states must match the controller's.
    pub plant: DiffDriveModel,
    pub cfg: SolveConfig,
    pub weights: TrackingWeights,
    pub slack: SlackWeights,
    pub limits: Limits,
    pub horizon: usize,
    pub dt: f64,
    pub reference: Reference,
    /// Plant initial state.
    pub x0: DVector<f64>,
    /// Initial uncertainty of the controller's state.
    pub sigma0: DMatrix<f64>,
    pub noise: NoiseSpec,
    pub sim: SimSettings,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), SimError> {
        let (nc, np) = (self.model.nx(), self.plant.nx());
        if np < nc || self.x0.len() != np {
            return Err(SimError::Scenario(format!("plant state ({np}) must extend the controller state ({nc})")));
        }
        if self.sigma0.nrows() != nc || self.sigma0.ncols() != nc {
            return Err(SimError::Scenario(format!("Sigma0 must be {nc}x{nc}")));
        }
        if (self.reference.dt - self.dt).abs() > 1e-12 || self.horizon == 0 {
            return Err(SimError::Scenario("reference spacing must equal the control period".into()));
        }
        if !self.limits.is_valid() {
            return Err(SimError::BadLimits);
        }
        Ok(())
    }

    /// Controller-side tube at the start of every prediction.
    pub fn tube0(&self) -> Result<UncertaintyTube, SimError> {
        let w = self.noise.matrix(self.model.nx(), self.dt)?;
        Ok(UncertaintyTube::new(self.sigma0.clone(), vec![w; self.horizon]))
    }

    pub fn problem_at(&self, tick: usize, x_ctrl: DVector<f64>) -> Result<OcpProblem, SolveError> {
        let (x_ref, u_ref) = self.reference.window(tick, self.horizon);
        Ok(OcpProblem::new(self.model.clone(), self.dt, x_ctrl, x_ref, u_ref, self.limits, &self.weights, self.slack)?)
    }
}

/// Seeded disturbance source, uniform on the solid ellipsoid `{w : wᵀW⁻¹w ≤ 1}`.
pub struct Disturbance {
    root: DMatrix<f64>,
    rng: ChaCha8Rng,
    boundary: bool,
}

impl Disturbance {
    pub fn new(w: &DMatrix<f64>, scale: f64, seed: u64, boundary: bool) -> Result<Self, UncertaintyError> {
        Ok(Self { root: psd_sqrt(w)? * scale, rng: ChaCha8Rng::seed_from_u64(seed), boundary })
    }

    pub fn sample(&mut self) -> DVector<f64> {
        let n = self.root.nrows();
        let mut dir = DVector::from_fn(n, |_, _| self.rng.sample::<f64, _>(StandardNormal));
        let norm = dir.norm();
        if norm > 0.0 {
            dir /= norm;
        }
        let r = if self.boundary { 1.0 } else { self.rng.random::<f64>().powf(1.0 / n as f64) };
        &self.root * dir * r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TickRecord {
    pub tick: usize,
    pub time: f64,
    pub u0: [f64; 2],
    pub state: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub solve_seconds: f64,
    pub phases: PhaseTimes,
    pub held: bool,
    pub min_distance: f64,
    pub tracking_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunLog {
    pub mode: SolveMode,
    pub seed: u64,
    pub records: Vec<TickRecord>,
    pub aborted: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub bin_width: f64,
    /// Lower edge of the first bin.
    pub start: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn build(values: &[f64], bin_width: f64) -> Self {
        let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        if finite.is_empty() {
            return Self { bin_width, start: 0.0, counts: Vec::new() };
        }
        let lo = (finite.iter().copied().fold(f64::INFINITY, f64::min) / bin_width).floor();
        let hi = (finite.iter().copied().fold(f64::NEG_INFINITY, f64::max) / bin_width).floor();
        let mut counts = vec![0; (hi - lo) as usize + 1];
        for v in finite {
            counts[((v / bin_width).floor() - lo) as usize] += 1;
        }
        Self { bin_width, start: lo * bin_width, counts }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
    pub max: f64,
}

impl Quantiles {
    pub fn of(values: &[f64]) -> Self {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return Self { p50: 0.0, p90: 0.0, p99: 0.0, max: 0.0 };
        }
        v.sort_by(f64::total_cmp);
        let q = |p: f64| v[((p * (v.len() - 1) as f64).round() as usize).min(v.len() - 1)];
        Self { p50: q(0.5), p90: q(0.9), p99: q(0.99), max: *v.last().unwrap() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingQuantiles {
    pub solve: Quantiles,
    pub subset_update: Quantiles,
    pub lower_level: Quantiles,
    pub upper_level: Quantiles,
    pub propagation: Quantiles,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub mode: SolveMode,
    pub seed: u64,
    pub ticks: usize,
    pub aborted: Option<String>,
    pub violation_histogram: Histogram,
    pub negative_fraction: f64,
    pub worst_distance: f64,
    pub mean_tracking_error: f64,
    pub converged_fraction: f64,
    pub timing_quantiles: TimingQuantiles,
}

pub const HISTOGRAM_BIN: f64 = 0.005;

impl RunLog {
    pub fn min_distances(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.min_distance).collect()
    }

    pub fn negative_fraction(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().filter(|r| r.min_distance < 0.0).count() as f64 / self.records.len() as f64
    }

    pub fn worst_distance(&self) -> f64 {
        self.records.iter().map(|r| r.min_distance).fold(f64::INFINITY, f64::min)
    }

    pub fn summary(&self) -> RunSummary {
        let n = self.records.len().max(1) as f64;
        let q = |f: &dyn Fn(&TickRecord) -> f64| Quantiles::of(&self.records.iter().map(f).collect::<Vec<_>>());
        RunSummary {
            mode: self.mode,
            seed: self.seed,
            ticks: self.records.len(),
            aborted: self.aborted.clone(),
            violation_histogram: Histogram::build(&self.min_distances(), HISTOGRAM_BIN),
            negative_fraction: self.negative_fraction(),
            worst_distance: self.worst_distance(),
            mean_tracking_error: self.records.iter().map(|r| r.tracking_error).sum::<f64>() / n,
            converged_fraction: self.records.iter().filter(|r| r.converged).count() as f64 / n,
            timing_quantiles: TimingQuantiles {
                solve: q(&|r| r.solve_seconds),
                subset_update: q(&|r| r.phases.subset_update),
                lower_level: q(&|r| r.phases.lower_level),
                upper_level: q(&|r| r.phases.upper_level),
                propagation: q(&|r| r.phases.propagation),
            },
        }
    }

    /// One row per tick: time, applied input, plant state and metrics.
    pub fn write_csv(&self, path: &Path) -> Result<(), SimError> {
        let mut w = csv::Writer::from_path(path)?;
        let nx = self.records.first().map(|r| r.state.len()).unwrap_or(0);
        let mut header: Vec<String> =
            ["tick", "t", "a", "alpha"].iter().map(|s| s.to_string()).collect();
        header.extend(state_columns(nx));
        header.extend(["iterations", "converged", "solve_seconds", "held", "min_distance", "tracking_error"].map(String::from));
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![r.tick.to_string(), r.time.to_string(), r.u0[0].to_string(), r.u0[1].to_string()];
            row.extend(r.state.iter().map(|v| v.to_string()));
            row.extend([
                r.iterations.to_string(),
                r.converged.to_string(),
                r.solve_seconds.to_string(),
                r.held.to_string(),
                r.min_distance.to_string(),
                r.tracking_error.to_string(),
            ]);
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary(&self, path: &Path) -> Result<(), SimError> {
        let mut f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(&mut f, &self.summary())?;
        writeln!(f)?;
        Ok(())
    }
}

/// Column names of a state vector: the five base states then `nu0, nu1, …`.
pub fn state_columns(nx: usize) -> Vec<String> {
    let base = ["px", "py", "theta", "v_cmd", "w_cmd"];
    (0..nx).map(|i| if i < 5 { base[i].to_string() } else { format!("nu{}", i - 5) }).collect()
}

/// Runs the closed loop for `scenario.sim.steps` ticks. Solver failures end
/// the run and are recorded in [`RunLog::aborted`].
pub fn run_mpc(scenario: &Scenario) -> Result<RunLog, SimError> {
    scenario.validate()?;
    let nc = scenario.model.nx();
    let tube0 = scenario.tube0()?;
    let w_plant = scenario.noise.matrix(scenario.plant.nx(), scenario.dt)?;
    let mut dist = Disturbance::new(&w_plant, scenario.sim.disturbance_scale, scenario.sim.seed, scenario.sim.boundary_sampling)?;
    let mut x = scenario.x0.clone();
    let mut log = RunLog { mode: scenario.cfg.mode, seed: scenario.sim.seed, records: Vec::new(), aborted: None };
    let (x_ref0, u_ref0) = scenario.reference.window(0, scenario.horizon);
    let mut guess = Trajectory { x: x_ref0, u: u_ref0 };
    let mut subsets = None;
    let mut prev_traj: Option<Trajectory> = None;
    let points = scenario.field.points();

    for tick in 0..scenario.sim.steps {
        let x_ctrl = x.rows(0, nc).into_owned();
        let started = Instant::now();
        let outcome = scenario
            .problem_at(tick, x_ctrl)
            .and_then(|prob| solve_ocp(&prob, &scenario.field, &scenario.poly, &tube0, &guess, subsets.take(), &scenario.cfg));
        let solve_seconds = started.elapsed().as_secs_f64();
        let out = match outcome {
            Ok(o) => o,
            Err(e) => {
                log.aborted = Some(format!("tick {tick}: {e}"));
                break;
            }
        };
        let overran = solve_seconds > scenario.dt;
        let held = scenario.sim.overrun == OverrunPolicy::Hold && overran && prev_traj.is_some();
        let u0 = match (&prev_traj, held) {
            (Some(p), true) => p.u[1.min(p.horizon() - 1)].clone(),
            _ => out.traj.u[0].clone(),
        };
        let w = dist.sample();
        x = step_state(&scenario.plant, &x, &u0, &w, scenario.dt);
        let last = scenario.reference.samples() - 1;
        let r = &scenario.reference.x[(tick + 1).min(last)];
        log.records.push(TickRecord {
            tick,
            time: (tick + 1) as f64 * scenario.dt,
            u0: [u0[0], u0[1]],
            state: x.iter().copied().collect(),
            iterations: out.report.iterations,
            converged: out.report.converged,
            solve_seconds,
            phases: out.report.phase_totals(),
            held,
            min_distance: evaluate_min_distance(points, &scenario.poly, &Pose2::from_state(x.as_slice())),
            tracking_error: ((x[0] - r[0]).powi(2) + (x[1] - r[1]).powi(2)).sqrt(),
        });
        let (g, s) = shift_warm_start(&out.traj, &out.activity, 1, scenario.cfg.eps_cvg);
        guess = g;
        subsets = Some(s);
        prev_traj = Some(out.traj);
        debug_assert!(x[THETA].is_finite());
    }
    Ok(log)
}
