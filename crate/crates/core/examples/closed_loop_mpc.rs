//! Closed-loop MPC on the corridor scenario shipped in `data/`: a lagged
//! plant driven by a kinematic prediction model under bounded disturbances.
//!
//!     cargo run --release --example closed_loop_mpc -- [nominal|robust] [STEPS]

use sip_colav::cli::{Overrides, Purpose, Resolved};
use sip_colav::sip_solver::SolveMode;
use std::path::Path;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let mode = match args.next().as_deref() {
        Some("robust") => SolveMode::Robust,
        _ => SolveMode::Nominal,
    };
    let steps = args.next().map(|s| s.parse()).transpose()?.unwrap_or(200);
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/corridor_mpc.json");
    let resolved = Resolved::from_path(&path, Purpose::ClosedLoop, &Overrides { mode: Some(mode), ..Overrides::default() })?;
    let mut scenario = resolved.scenario();
    scenario.sim.steps = steps;

    let log = sip_colav::simulator::run_mpc(&scenario)?;
    for r in log.records.iter().step_by(20) {
        println!(
            "t {:5.2} s: pose ({:.3}, {:.3}, {:+.3}), min sd {:+.4}, {} iterations, {:.1} ms",
            r.time,
            r.state[0],
            r.state[1],
            r.state[2],
            r.min_distance,
            r.iterations,
            r.solve_seconds * 1e3
        );
    }
    let s = log.summary();
    println!(
        "{mode:?}: {} ticks, negative fraction {:.4}, worst {:+.4} m, mean tracking error {:.3} m, median solve {:.1} ms",
        s.ticks,
        s.negative_fraction,
        s.worst_distance,
        s.mean_tracking_error,
        s.timing_quantiles.solve.p50 * 1e3
    );
    if let Some(reason) = log.aborted {
        println!("aborted: {reason}");
    }
    Ok(())
}
