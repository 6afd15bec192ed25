//! Randomized-start benchmark on the L-corridor: convergence histogram and
//! feasibility against the iteration count.
//!
//!     cargo run --release --example benchmark_suite -- [CASES]

use sip_colav::bench::{Suite, SuiteSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cases = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(20);
    let suite = Suite::l_corridor(SuiteSpec { cases, ..SuiteSpec::default() })?;
    let report = suite.run();
    let a = &report.aggregates;
    println!("{} cases, {} failed, {:.0}% converged, median {} iterations", a.cases, a.failed, 100.0 * a.converged_fraction, a.median_iterations);
    for (j, f) in a.feasible_fraction.iter().enumerate().take(10) {
        println!(
            "after {:2} iterations: {:5.1}% feasible, median violation {:.2e}, p90 {:.2e}",
            j + 1,
            100.0 * f,
            a.median_violation[j],
            a.p90_violation[j]
        );
    }
    let hist: Vec<String> = a.iteration_histogram.iter().enumerate().filter(|(_, c)| **c > 0).map(|(j, c)| format!("{}:{c}", j + 1)).collect();
    println!("converged at iteration: {}", hist.join(" "));
    println!("median solve {:.3} s (upper-level QP share {:.3} s)", a.seconds.p50, a.upper_level.p50);
    Ok(())
}
