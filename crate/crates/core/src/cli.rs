//! Command-line front end: scenario files, the `solve`, `mpc`, `bench`,
//! `eval` and `sdt` subcommands and their output files.
//!
//! Exit codes: 0 success (a solve that hits its iteration limit still
//! succeeds and is flagged in the report), 2 input or schema error,
//! 3 solver failure.

use crate::bench::{aggregate, Suite, SuiteSpec};
use crate::distance_field::{EdtMethod, ObstacleField};
use crate::dynamics::{DiffDriveModel, HeadingConvention, NU};
use crate::geometry::{PaddedPolygon, Pose2, Vec2};
use crate::map_io::{self, read_points_csv};
use crate::ocp_core::{LimitProfile, Limits, OcpProblem, SlackWeights, TrackingWeights, Trajectory};
use crate::simulator::{self, generate_reference, min_distance_trace, OverrunPolicy, Reference, Scenario, SimSettings};
use crate::sip_solver::{solve_ocp, SolveConfig, SolveMode, SolverReport};
use crate::svg;
use crate::uncertainty::{NoiseSpec, UncertaintyTube};
use clap::{Parser, Subcommand};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::path::{Path, PathBuf};

pub const THREADS_ENV: &str = "SIP_COLAV_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("solver failure: {0}")]
    Solver(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Solver(_) => 3,
        }
    }
}

fn input<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Input(e.to_string())
}

fn io_at(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Input(format!("{}: {e}", path.display()))
}

// ---------------------------------------------------------------------------
// scenario schema

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotSpec {
    /// Counter-clockwise body-frame vertices.
    pub vertices: Vec<[f64; 2]>,
    pub r_shp: f64,
}

impl Default for RobotSpec {
    fn default() -> Self {
        let poly = PaddedPolygon::reference_robot();
        Self { vertices: poly.vertices().iter().map(|v| [v.x, v.y]).collect(), r_shp: poly.r_shp() }
    }
}

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    /// Pure kinematic model; the default when no velocity dynamics are given.
    pub kinematic_only: Option<bool>,
    #[serde(rename = "A_nu")]
    pub a_nu: Option<Rows>,
    #[serde(rename = "B_nu")]
    pub b_nu: Option<Rows>,
    #[serde(rename = "C_nu")]
    pub c_nu: Option<Rows>,
    #[serde(rename = "D_nu")]
    pub d_nu: Option<Rows>,
    pub heading: Option<HeadingConvention>,
}

fn matrix(name: &str, rows: &Rows, shape: (usize, usize)) -> Result<DMatrix<f64>, CliError> {
    if rows.len() != shape.0 || rows.iter().any(|r| r.len() != shape.1) {
        return Err(CliError::Input(format!("{name} must be {}x{}", shape.0, shape.1)));
    }
    Ok(DMatrix::from_fn(shape.0, shape.1, |i, j| rows[i][j]))
}

impl ModelSpec {
    fn build(&mut self, heading_default: HeadingConvention) -> Result<DiffDriveModel, CliError> {
        let given = [&self.a_nu, &self.b_nu, &self.c_nu, &self.d_nu].iter().filter(|m| m.is_some()).count();
        let kinematic = self.kinematic_only.unwrap_or(given == 0);
        let heading = *self.heading.get_or_insert(heading_default);
        self.kinematic_only = Some(kinematic);
        let model = if kinematic {
            if given > 0 {
                return Err(CliError::Input("kinematic_only excludes A_nu, B_nu, C_nu, D_nu".into()));
            }
            DiffDriveModel::kinematic()
        } else {
            if given != 4 {
                return Err(CliError::Input("velocity dynamics need all of A_nu, B_nu, C_nu, D_nu".into()));
            }
            let n = self.a_nu.as_ref().map_or(0, Vec::len);
            DiffDriveModel::new(
                matrix("A_nu", self.a_nu.as_ref().unwrap(), (n, n))?,
                matrix("B_nu", self.b_nu.as_ref().unwrap(), (n, NU))?,
                matrix("C_nu", self.c_nu.as_ref().unwrap(), (NU, n))?,
                matrix("D_nu", self.d_nu.as_ref().unwrap(), (NU, NU))?,
            )
            .map_err(input)?
        };
        Ok(model.with_heading(heading))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LimitsSpec {
    Profile(LimitProfile),
    Custom(Limits),
}

impl Default for LimitsSpec {
    fn default() -> Self {
        LimitsSpec::Profile(LimitProfile::Medium)
    }
}

impl LimitsSpec {
    pub fn limits(&self) -> Limits {
        match self {
            LimitsSpec::Profile(p) => p.limits(),
            LimitsSpec::Custom(l) => *l,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonSpec {
    #[serde(rename = "N")]
    pub n: usize,
    pub dt: f64,
}

impl HorizonSpec {
    pub const OFFLINE: HorizonSpec = HorizonSpec { n: 30, dt: 0.2 };
    pub const MPC: HorizonSpec = HorizonSpec { n: 20, dt: 0.05 };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightsSpec {
    #[serde(rename = "Q")]
    pub q: [f64; 5],
    #[serde(rename = "R")]
    pub r: [f64; 2],
    #[serde(rename = "Q_N")]
    pub q_n: [f64; 5],
    pub slack_l1: f64,
    pub slack_l2: f64,
}

impl Default for WeightsSpec {
    fn default() -> Self {
        let (t, s) = (TrackingWeights::default(), SlackWeights::default());
        Self { q: t.q, r: t.r, q_n: t.q_n, slack_l1: s.l1, slack_l2: s.l2 }
    }
}

/// `Sigma0` as a variance on the pose states or as a full matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SigmaSpec {
    PoseVariance(f64),
    Matrix(Rows),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UncertaintySpec {
    #[serde(rename = "Sigma0")]
    pub sigma0: SigmaSpec,
    #[serde(rename = "W_per_50ms", skip_serializing_if = "Option::is_none")]
    pub w_per_50ms: Option<f64>,
    #[serde(rename = "W", skip_serializing_if = "Option::is_none")]
    pub w: Option<Rows>,
}

impl Default for UncertaintySpec {
    fn default() -> Self {
        Self { sigma0: SigmaSpec::PoseVariance(4e-5), w_per_50ms: None, w: None }
    }
}

impl UncertaintySpec {
    fn resolve(&mut self, nx: usize) -> Result<(DMatrix<f64>, NoiseSpec), CliError> {
        let sigma0 = match &self.sigma0 {
            SigmaSpec::PoseVariance(s) => DMatrix::from_fn(nx, nx, |i, j| if i == j && i < 3 { *s } else { 0.0 }),
            SigmaSpec::Matrix(rows) => matrix("Sigma0", rows, (nx, nx))?,
        };
        let noise = match (self.w_per_50ms, &self.w) {
            (Some(_), Some(_)) => return Err(CliError::Input("give either W_per_50ms or W, not both".into())),
            (_, Some(w)) => NoiseSpec::Full { w: w.clone() },
            (w, None) => NoiseSpec::Per50ms { w_per_50ms: *self.w_per_50ms.get_or_insert(w.unwrap_or(2.5e-4)) },
        };
        Ok((sigma0, noise))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub waypoints: Option<Vec<[f64; 2]>>,
    /// CSV with an `x,y` header, relative to the scenario file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub robot: RobotSpec,
    #[serde(default)]
    pub model: ModelSpec,
    /// Simulated plant for `mpc`; the prediction model when absent.
    #[serde(default)]
    pub plant: Option<ModelSpec>,
    #[serde(default)]
    pub limits: LimitsSpec,
    #[serde(default)]
    pub horizon: Option<HorizonSpec>,
    #[serde(default)]
    pub weights: WeightsSpec,
    #[serde(default)]
    pub uncertainty: UncertaintySpec,
    /// Solver settings on top of the offline or closed-loop defaults.
    #[serde(default)]
    pub solver: serde_json::Map<String, Value>,
    pub reference: ReferenceSpec,
    /// Point cloud (.csv) or occupancy image (.pgm); obstacle-free when absent.
    #[serde(default)]
    pub map: Option<PathBuf>,
    #[serde(default = "default_resolution")]
    pub map_resolution: f64,
    /// Start pose `[px, py, θ]`; the reference start when absent.
    #[serde(default)]
    pub start: Option<[f64; 3]>,
    #[serde(default)]
    pub sim: SimSettings,
}

fn default_resolution() -> f64 {
    0.02
}

impl ScenarioFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(io_at(path))?;
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Offline,
    ClosedLoop,
}

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub map: Option<PathBuf>,
    pub mode: Option<SolveMode>,
    pub max_iter: Option<usize>,
    pub tol: Option<f64>,
}

fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, p) => *b = p.clone(),
    }
}

/// A scenario with every default filled in; `file` echoes the resolved values.
pub struct Resolved {
    pub file: ScenarioFile,
    pub field: ObstacleField,
    pub poly: PaddedPolygon,
    pub model: DiffDriveModel,
    pub plant: DiffDriveModel,
    pub limits: Limits,
    pub weights: TrackingWeights,
    pub slack: SlackWeights,
    pub horizon: HorizonSpec,
    pub cfg: SolveConfig,
    pub waypoints: Vec<Vec2>,
    pub reference: Reference,
    pub start: Pose2,
    pub sigma0: DMatrix<f64>,
    pub noise: NoiseSpec,
}

impl Resolved {
    pub fn from_path(path: &Path, purpose: Purpose, over: &Overrides) -> Result<Self, CliError> {
        let file = ScenarioFile::load(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::new(file, base, purpose, over)
    }

    /// Relative paths in `file` are taken from `base`.
    pub fn new(mut file: ScenarioFile, base: &Path, purpose: Purpose, over: &Overrides) -> Result<Self, CliError> {
        let poly = PaddedPolygon::from_pairs(&file.robot.vertices, file.robot.r_shp).map_err(input)?;
        let model = file.model.build(HeadingConvention::default())?;
        let mut plant_spec = file.plant.take().unwrap_or_else(|| file.model.clone());
        let plant = plant_spec.build(model.heading)?;
        file.plant = Some(plant_spec);
        if plant.nx() < model.nx() {
            return Err(CliError::Input("the plant must extend the prediction model".into()));
        }
        let limits = file.limits.limits();
        if !limits.is_valid() {
            return Err(CliError::Input("limits must be positive".into()));
        }
        let horizon = *file.horizon.get_or_insert(match purpose {
            Purpose::Offline => HorizonSpec::OFFLINE,
            Purpose::ClosedLoop => HorizonSpec::MPC,
        });
        if horizon.n == 0 || !(horizon.dt > 0.0) {
            return Err(CliError::Input("horizon needs N ≥ 1 and dt > 0".into()));
        }
        let w = &file.weights;
        let weights = TrackingWeights { q: w.q, r: w.r, q_n: w.q_n };
        let slack = SlackWeights { l1: w.slack_l1, l2: w.slack_l2 };
        let (sigma0, noise) = file.uncertainty.resolve(model.nx())?;

        let file_mode = match file.solver.get("mode") {
            Some(m) => Some(serde_json::from_value::<SolveMode>(m.clone()).map_err(|e| CliError::Input(format!("solver.mode: {e}")))?),
            None => None,
        };
        let mode = over.mode.or(file_mode).unwrap_or_default();
        let defaults = match purpose {
            Purpose::Offline => SolveConfig::offline(mode),
            Purpose::ClosedLoop => SolveConfig::mpc(mode),
        };
        let mut merged = serde_json::to_value(&defaults).map_err(input)?;
        merge(&mut merged, &Value::Object(file.solver.clone()));
        let mut cfg: SolveConfig = serde_json::from_value(merged).map_err(|e| CliError::Input(format!("solver: {e}")))?;
        cfg.mode = mode;
        if let Some(k) = over.max_iter {
            cfg.max_iter = k;
        }
        if let Some(t) = over.tol {
            cfg.eps_cvg = t;
        }
        cfg.validate().map_err(input)?;
        file.solver = match serde_json::to_value(&cfg).map_err(input)? {
            Value::Object(m) => m,
            _ => unreachable!("config serializes to an object"),
        };

        let waypoints: Vec<Vec2> = match (&file.reference.waypoints, &file.reference.file) {
            (Some(w), None) => w.iter().map(|p| Vec2::new(p[0], p[1])).collect(),
            (None, Some(f)) => read_points_csv(&base.join(f)).map_err(input)?,
            _ => return Err(CliError::Input("reference needs exactly one of waypoints or file".into())),
        };
        let reference = generate_reference(&model, &waypoints, &limits, horizon.dt).map_err(input)?;
        let start = match file.start {
            Some([px, py, theta]) => Pose2::new(px, py, theta),
            None => Pose2::from_state(reference.x[0].as_slice()),
        };
        file.start = Some([start.px, start.py, start.theta]);

        if let Some(m) = &over.map {
            file.map = Some(m.clone());
        }
        let field = match &file.map {
            Some(m) => {
                let p = if over.map.is_some() { m.clone() } else { base.join(m) };
                map_io::load_field(&p, file.map_resolution, EdtMethod::Exact).map_err(input)?
            }
            None => ObstacleField::free(file.map_resolution),
        };
        Ok(Self { file, field, poly, model, plant, limits, weights, slack, horizon, cfg, waypoints, reference, start, sigma0, noise })
    }

    pub fn problem(&self) -> Result<OcpProblem, CliError> {
        let (x_ref, u_ref) = self.reference.window(0, self.horizon.n);
        let x0 = self.model.steady_state([self.start.px, self.start.py, self.start.theta], 0.0, 0.0);
        OcpProblem::new(self.model.clone(), self.horizon.dt, x0, x_ref, u_ref, self.limits, &self.weights, self.slack).map_err(input)
    }

    pub fn tube0(&self) -> Result<UncertaintyTube, CliError> {
        let w = self.noise.matrix(self.model.nx(), self.horizon.dt).map_err(input)?;
        Ok(UncertaintyTube::new(self.sigma0.clone(), vec![w; self.horizon.n]))
    }

    pub fn scenario(&self) -> Scenario {
        Scenario {
            field: self.field.clone(),
            poly: self.poly.clone(),
            model: self.model.clone(),
            plant: self.plant.clone(),
            cfg: self.cfg.clone(),
            weights: self.weights.clone(),
            slack: self.slack,
            limits: self.limits,
            horizon: self.horizon.n,
            dt: self.horizon.dt,
            reference: self.reference.clone(),
            x0: self.plant.steady_state([self.start.px, self.start.py, self.start.theta], 0.0, 0.0),
            sigma0: self.sigma0.clone(),
            noise: self.noise.clone(),
            sim: self.file.sim.clone(),
        }
    }
}

// ---------------------------------------------------------------------------
// output files

/// Writes through a temporary sibling and renames, so readers never see a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out")
    ));
    std::fs::write(&tmp, contents).map_err(io_at(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_at(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(input)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// `t, px, py, θ, v_cmd, ω_cmd, ν…, a, α`; the last row has no input.
pub fn write_trajectory_csv(path: &Path, traj: &Trajectory, dt: f64) -> Result<(), CliError> {
    let nx = traj.x.first().map_or(0, |x| x.len());
    let mut w = csv::Writer::from_path(path).map_err(input)?;
    let mut header = vec!["t".to_string()];
    header.extend(simulator::state_columns(nx));
    header.extend(["a".to_string(), "alpha".to_string()]);
    w.write_record(&header).map_err(input)?;
    for (k, x) in traj.x.iter().enumerate() {
        let mut row = vec![(k as f64 * dt).to_string()];
        row.extend(x.iter().map(|v| v.to_string()));
        match traj.u.get(k) {
            Some(u) => row.extend(u.iter().map(|v| v.to_string())),
            None => row.extend([String::new(), String::new()]),
        }
        w.write_record(&row).map_err(input)?;
    }
    w.flush().map_err(input)
}

/// Poses `(px, py, θ)` from any CSV with those columns.
pub fn read_poses_csv(path: &Path) -> Result<Vec<Pose2>, CliError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let headers = rdr.headers().map_err(input)?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| CliError::Input(format!("{}: missing column `{name}`", path.display())))
    };
    let (ix, iy, it) = (col("px")?, col("py")?, col("theta")?);
    let mut poses = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(input)?;
        let get = |i: usize| {
            rec.get(i)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| CliError::Input(format!("{}: row {}: bad number", path.display(), line + 2)))
        };
        poses.push(Pose2::new(get(ix)?, get(iy)?, get(it)?));
    }
    Ok(poses)
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReportFile {
    pub mode: SolveMode,
    pub converged: bool,
    pub iterations: usize,
    pub final_step: f64,
    /// Exact metric over stages `1..=N`.
    pub min_distance: f64,
    /// Exact metric per trajectory row, stage 0 included.
    pub min_distance_trace: Vec<f64>,
    pub solver: SolverReport,
    pub scenario: ScenarioFile,
}

// ---------------------------------------------------------------------------
// commands

#[derive(Debug, Parser)]
#[command(name = "sip-colav", version, about = "Collision-avoiding trajectory optimization and MPC for padded-polygon robots")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimize one trajectory offline.
    Solve(SolveArgs),
    /// Run the closed-loop simulation.
    Mpc(MpcArgs),
    /// Run a randomized benchmark suite.
    Bench(BenchArgs),
    /// Evaluate the exact min signed distance of a trajectory.
    Eval(EvalArgs),
    /// Dump the signed distance field as an image.
    Sdt(SdtArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ModeArg {
    Nominal,
    Robust,
}

impl From<ModeArg> for SolveMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Nominal => SolveMode::Nominal,
            ModeArg::Robust => SolveMode::Robust,
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Overrides the scenario's map.
    #[arg(long)]
    pub map: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Debug, clap::Args)]
pub struct MpcArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub overrun: Option<OverrunPolicy>,
    #[arg(long)]
    pub map: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Directory for run.csv, summary.json and run.svg.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub suite: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub trajectory: PathBuf,
    #[arg(long)]
    pub map: PathBuf,
    /// Robot footprint source; the reference robot when absent.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long, default_value_t = 0.02)]
    pub resolution: f64,
}

#[derive(Debug, clap::Args)]
pub struct SdtArgs {
    #[arg(long)]
    pub map: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.02)]
    pub resolution: f64,
    /// Distance mapped to white.
    #[arg(long, default_value_t = 1.0)]
    pub max_distance: f64,
}

fn out_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(io_at(dir))
}

fn reference_path(r: &Resolved) -> Vec<Vec2> {
    r.reference.x.iter().map(|x| Vec2::new(x[0], x[1])).collect()
}

pub fn cmd_solve(args: &SolveArgs) -> Result<SolveReportFile, CliError> {
    let over = Overrides { map: args.map.clone(), mode: args.mode.map(Into::into), max_iter: args.max_iter, tol: args.tol };
    let r = Resolved::from_path(&args.scenario, Purpose::Offline, &over)?;
    let prob = r.problem()?;
    let guess = Trajectory { x: prob.x_ref.clone(), u: prob.u_ref.clone() };
    let tube0 = r.tube0()?;
    let out = solve_ocp(&prob, &r.field, &r.poly, &tube0, &guess, None, &r.cfg).map_err(|e| CliError::Solver(e.to_string()))?;
    out_dir(&args.out)?;
    write_trajectory_csv(&args.out.join("trajectory.csv"), &out.traj, prob.dt)?;
    let trace = min_distance_trace(r.field.points(), &r.poly, &out.traj.x);
    let poses: Vec<Pose2> = out.traj.x.iter().map(|x| Pose2::from_state(x.as_slice())).collect();
    let overlay = svg::map_overlay(r.field.points(), &r.poly, &poses, &reference_path(&r));
    write_atomic(&args.out.join("trajectory.svg"), overlay.as_bytes())?;
    let report = SolveReportFile {
        mode: r.cfg.mode,
        converged: out.report.converged,
        iterations: out.report.iterations,
        final_step: out.report.final_step(),
        min_distance: simulator::trajectory_min_distance(r.field.points(), &r.poly, &out.traj),
        min_distance_trace: trace,
        solver: out.report,
        scenario: r.file,
    };
    write_json(&args.out.join("report.json"), &report)?;
    Ok(report)
}

pub fn cmd_mpc(args: &MpcArgs) -> Result<simulator::RunSummary, CliError> {
    let over = Overrides { map: args.map.clone(), mode: args.mode.map(Into::into), ..Overrides::default() };
    let mut r = Resolved::from_path(&args.scenario, Purpose::ClosedLoop, &over)?;
    let sim = &mut r.file.sim;
    sim.steps = args.steps.unwrap_or(sim.steps);
    sim.seed = args.seed.unwrap_or(sim.seed);
    sim.overrun = args.overrun.unwrap_or(sim.overrun);
    let log = simulator::run_mpc(&r.scenario()).map_err(|e| CliError::Input(e.to_string()))?;
    let summary = log.summary();
    if let Some(dir) = &args.out {
        out_dir(dir)?;
        log.write_csv(&dir.join("run.csv")).map_err(input)?;
        write_json(&dir.join("summary.json"), &serde_json::json!({ "summary": summary, "scenario": r.file }))?;
        let poses: Vec<Pose2> = log.records.iter().map(|t| Pose2::from_state(&t.state)).collect();
        let overlay = svg::map_overlay(r.field.points(), &r.poly, &poses, &reference_path(&r));
        write_atomic(&dir.join("run.svg"), overlay.as_bytes())?;
    }
    if let Some(reason) = &log.aborted {
        return Err(CliError::Solver(reason.clone()));
    }
    Ok(summary)
}

const TIMING_KEYS: [&str; 5] = ["seconds", "subset_update", "lower_level", "upper_level", "propagation"];

/// Runs the suite, one atomically written file per case. Returns the
/// deterministic aggregates; timing quantiles go to `timing.json`.
pub fn cmd_bench(args: &BenchArgs) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(&args.suite).map_err(io_at(&args.suite))?;
    let mut spec: SuiteSpec = serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", args.suite.display())))?;
    let suite = match spec.map.take() {
        Some(m) => {
            let p = args.suite.parent().unwrap_or(Path::new(".")).join(&m);
            let field = map_io::load_field(&p, spec.resolution, EdtMethod::Exact).map_err(input)?;
            spec.map = Some(m);
            Suite::with_field(spec, field)
        }
        None => Suite::l_corridor(spec),
    }
    .map_err(input)?;
    let case_dir = args.out.join("cases");
    out_dir(&case_dir)?;
    let cases = (0..suite.spec.cases)
        .into_par_iter()
        .map(|i| {
            let c = suite.run_case(i);
            write_json(&case_dir.join(format!("case_{i:04}.json")), &c)?;
            Ok(c)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let agg = aggregate(&cases, suite.spec.max_iter);
    let mut value = serde_json::to_value(&agg).map_err(input)?;
    let mut timing = serde_json::Map::new();
    if let Value::Object(m) = &mut value {
        for k in TIMING_KEYS {
            if let Some(v) = m.remove(k) {
                timing.insert(k.to_string(), v);
            }
        }
    }
    let doc = serde_json::json!({ "spec": suite.spec, "aggregates": value });
    write_json(&args.out.join("aggregates.json"), &doc)?;
    write_json(&args.out.join("timing.json"), &timing)?;
    let hist: Vec<f64> = agg.iteration_histogram.iter().map(|&c| c as f64).collect();
    write_atomic(&args.out.join("iterations.svg"), svg::bar_chart("converged runs per iteration count", &hist).as_bytes())?;
    let curves = svg::line_chart(
        "violation after j iterations",
        &[("median", &agg.median_violation), ("p90", &agg.p90_violation), ("feasible fraction", &agg.feasible_fraction)],
    );
    write_atomic(&args.out.join("violation.svg"), curves.as_bytes())?;
    let medians =
        [agg.subset_update.p50, agg.lower_level.p50, agg.upper_level.p50, agg.propagation.p50];
    let bars = svg::bar_chart("median phase seconds: subset, lower, upper, propagation", &medians);
    write_atomic(&args.out.join("timing.svg"), bars.as_bytes())?;
    Ok(doc)
}

/// Per-row exact min signed distance and the global minimum.
pub fn cmd_eval(args: &EvalArgs) -> Result<(Vec<f64>, f64), CliError> {
    let poly = match &args.scenario {
        Some(path) => {
            let f = ScenarioFile::load(path)?;
            PaddedPolygon::from_pairs(&f.robot.vertices, f.robot.r_shp).map_err(input)?
        }
        None => PaddedPolygon::reference_robot(),
    };
    let points = match args.map.extension().and_then(|e| e.to_str()) {
        Some("csv") => read_points_csv(&args.map).map_err(input)?,
        _ => map_io::load_field(&args.map, args.resolution, EdtMethod::Exact).map_err(input)?.points().to_vec(),
    };
    let poses = read_poses_csv(&args.trajectory)?;
    let rows: Vec<f64> = poses.iter().map(|p| simulator::evaluate_min_distance(&points, &poly, p)).collect();
    let global = rows.iter().copied().fold(f64::INFINITY, f64::min);
    Ok((rows, global))
}

pub fn cmd_sdt(args: &SdtArgs) -> Result<(), CliError> {
    if !(args.max_distance > 0.0) {
        return Err(CliError::Input("--max-distance must be positive".into()));
    }
    let field = map_io::load_field(&args.map, args.resolution, EdtMethod::Exact).map_err(input)?;
    map_io::write_sdt(&args.out, &field, args.max_distance).map_err(input)
}

/// Applies the worker cap from the environment to the global thread pool.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = raw.trim().parse().map_err(|_| CliError::Input(format!("{THREADS_ENV} must be a non-negative integer, got `{raw}`")))?;
    if n > 0 {
        // a pool that already exists keeps its size
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    configure_threads()?;
    match &cli.command {
        Command::Solve(a) => {
            let r = cmd_solve(a)?;
            println!(
                "{} solve: converged={} iterations={} final_step={:.3e} min_distance={:.6}",
                serde_json::to_value(r.mode).map_err(input)?.as_str().unwrap_or("?"),
                r.converged,
                r.iterations,
                r.final_step,
                r.min_distance
            );
            println!("wrote {}", a.out.display());
        }
        Command::Mpc(a) => {
            let s = cmd_mpc(a)?;
            println!("{}", serde_json::to_string_pretty(&s).map_err(input)?);
        }
        Command::Bench(a) => {
            let doc = cmd_bench(a)?;
            println!("{}", serde_json::to_string_pretty(&doc["aggregates"]).map_err(input)?);
        }
        Command::Eval(a) => {
            let (rows, global) = cmd_eval(a)?;
            println!("row,min_distance");
            for (i, d) in rows.iter().enumerate() {
                println!("{i},{d}");
            }
            println!("global_min,{global}");
        }
        Command::Sdt(a) => {
            cmd_sdt(a)?;
            println!("wrote {}", a.out.display());
        }
    }
    Ok(())
}

/// Parses the arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> ScenarioFile {
        serde_json::from_str(r#"{"reference": {"waypoints": [[0, 0], [2, 0]]}}"#).unwrap()
    }

    #[test]
    fn defaults_are_filled_and_echoed() {
        let r = Resolved::new(minimal(), Path::new("."), Purpose::Offline, &Overrides::default()).unwrap();
        assert_eq!(r.horizon, HorizonSpec::OFFLINE);
        assert_eq!(r.file.horizon, Some(HorizonSpec::OFFLINE));
        assert_eq!(r.file.model.kinematic_only, Some(true));
        assert_eq!(r.file.uncertainty.w_per_50ms, Some(2.5e-4));
        assert_eq!(r.file.solver["max_iter"], 100);
        assert_eq!(r.file.solver["subset"]["cap"], 25);
        assert!(r.field.is_free());
        let c = Resolved::new(minimal(), Path::new("."), Purpose::ClosedLoop, &Overrides::default()).unwrap();
        assert_eq!(c.horizon, HorizonSpec::MPC);
        assert_eq!(c.cfg.subset.cap, 6);
    }

    #[test]
    fn nested_solver_fields_merge_over_defaults() {
        let mut f = minimal();
        f.solver = serde_json::from_str(r#"{"subset": {"cap": 7}, "eps_cvg": 1e-4}"#).unwrap();
        let over = Overrides { tol: Some(1e-3), ..Overrides::default() };
        let r = Resolved::new(f, Path::new("."), Purpose::Offline, &over).unwrap();
        assert_eq!(r.cfg.subset.cap, 7);
        assert_eq!(r.cfg.subset.eps_cl, 0.5);
        assert_eq!(r.cfg.eps_cvg, 1e-3);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<ScenarioFile>(r#"{"reference": {"waypoints": [[0,0],[1,0]]}, "horizn": {}}"#).is_err());
        let mut f = minimal();
        f.solver = serde_json::from_str(r#"{"max_iters": 3}"#).unwrap();
        assert!(Resolved::new(f, Path::new("."), Purpose::Offline, &Overrides::default()).is_err());
    }

    #[test]
    fn model_spec_checks_shapes() {
        let mut lag = ModelSpec {
            a_nu: Some(vec![vec![-5.0, 0.0], vec![0.0, -5.0]]),
            b_nu: Some(vec![vec![5.0, 0.0], vec![0.0, 5.0]]),
            c_nu: Some(vec![vec![1.0, 0.0], vec![0.0, 1.0]]),
            d_nu: Some(vec![vec![0.0, 0.0], vec![0.0, 0.0]]),
            ..ModelSpec::default()
        };
        assert_eq!(lag.build(HeadingConvention::CosSin).unwrap().nx(), 7);
        assert_eq!(lag.kinematic_only, Some(false));
        lag.b_nu = Some(vec![vec![5.0]]);
        assert!(lag.build(HeadingConvention::CosSin).is_err());
    }

    #[test]
    fn exit_codes_follow_error_kind() {
        assert_eq!(run(["sip-colav", "solve"]), 2);
        assert_eq!(CliError::Solver("x".into()).exit_code(), 3);
    }
}
