//! Paired-seed closed-loop comparisons on the L-corridor:
//! nominal against robust MPC on a reference that hugs the walls, and a
//! kinematic prediction model against the full lag model at fast limits.
//!
//!     cargo run --release --example closed_loop_comparison -- [SEEDS] [STEPS]

use serde_json::{json, Value};
use sip_colav::cli::{Overrides, Purpose, Resolved, ScenarioFile};
use sip_colav::simulator::{run_mpc, RunLog};
use std::path::Path;

const LAG: [[f64; 2]; 2] = [[-10.0, 0.0], [0.0, -10.0]];

fn lag_model() -> Value {
    json!({ "A_nu": LAG, "B_nu": [[10.0, 0.0], [0.0, 10.0]], "C_nu": [[1.0, 0.0], [0.0, 1.0]], "D_nu": [[0.0, 0.0], [0.0, 0.0]], "heading": "cos_sin" })
}

/// Runs one configuration over `seeds` and pools the ticks.
fn pooled(doc: &Value, mode: &str, seeds: u64, steps: usize) -> Result<RunLog, Box<dyn std::error::Error>> {
    let file: ScenarioFile = serde_json::from_value(doc.clone())?;
    let base = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    let over = Overrides { mode: Some(if mode == "robust" { sip_colav::sip_solver::SolveMode::Robust } else { Default::default() }), ..Default::default() };
    let resolved = Resolved::new(file, &base, Purpose::ClosedLoop, &over)?;
    let mut all: Option<RunLog> = None;
    for seed in 1..=seeds {
        let mut sc = resolved.scenario();
        sc.sim.steps = steps;
        sc.sim.seed = seed;
        let log = run_mpc(&sc)?;
        if let Some(reason) = &log.aborted {
            println!("  seed {seed}: aborted after {} ticks: {reason}", log.records.len());
        }
        match &mut all {
            Some(a) => a.records.extend(log.records),
            None => all = Some(log),
        }
    }
    Ok(all.expect("at least one seed"))
}

fn show(label: &str, log: &RunLog) {
    let s = log.summary();
    println!(
        "{label:>28}: {} ticks, negative fraction {:.4}, worst {:+.4} m, median solve {:.1} ms",
        s.ticks,
        s.negative_fraction,
        s.worst_distance,
        s.timing_quantiles.solve.p50 * 1e3
    );
}

pub fn wall_hugging() -> Value {
    json!({
        "model": { "kinematic_only": true, "heading": "cos_sin" },
        "plant": lag_model(),
        "limits": "medium",
        "reference": { "waypoints": [[0.6, 0.6], [1.4, 0.3], [3.2, 0.3], [4.1, 0.8], [4.1, 3.6]] },
        "map": "l_corridor.csv",
    })
}

pub fn fast_centreline(model: Value) -> Value {
    json!({
        "model": model,
        "plant": lag_model(),
        "limits": "fast",
        "reference": { "waypoints": [[0.6, 0.6], [4.1, 0.6], [4.1, 3.6]] },
        "map": "l_corridor.csv",
    })
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let seeds = args.next().map(|s| s.parse()).transpose()?.unwrap_or(4);
    let steps = args.next().map(|s| s.parse()).transpose()?.unwrap_or(200);

    println!("wall-hugging reference, medium limits");
    let nominal = pooled(&wall_hugging(), "nominal", seeds, steps)?;
    let robust = pooled(&wall_hugging(), "robust", seeds, steps)?;
    show("nominal", &nominal);
    show("robust", &robust);

    println!("centreline at fast limits, lag plant");
    let kinematic = pooled(&fast_centreline(json!({ "kinematic_only": true, "heading": "cos_sin" })), "nominal", seeds, steps)?;
    let full = pooled(&fast_centreline(lag_model()), "nominal", seeds, steps)?;
    show("kinematic prediction", &kinematic);
    show("full dynamics prediction", &full);
    Ok(())
}
