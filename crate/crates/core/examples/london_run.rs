//! Runs the ten-minute London scenario and prints the report summary.
//!
//! Pass `outage` to cut core-ab between 120 s and 180 s.

use qsmn::runner::{run_scenario, Scenario};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let name = match std::env::args().nth(1).as_deref() {
        Some("outage") => "london_outage.json",
        _ => "london_scenario.json",
    };
    let scenario = Scenario::load(format!("{}/examples/{name}", env!("CARGO_MANIFEST_DIR")))?;
    let out = run_scenario(&scenario)?;
    let r = &out.report;
    for (id, l) in &r.links {
        println!(
            "{id:<10} {:>12.0} bps  blocks {:>4}  min free {:>8} B  mirrors identical: {}",
            l.nominal_rate_bps,
            l.blocks_completed(),
            l.min_free_bytes,
            l.mirrors_identical
        );
    }
    for s in &r.sessions {
        println!(
            "{} -> {} via {:?}: {} epochs at {:?}, {} frames delivered",
            s.master_sae, s.slave_sae, s.route, s.epochs_master, s.epoch_times, s.frames_delivered
        );
    }
    println!("alarms: {:?}", r.alarms);
    if let Some(path) = &scenario.outputs.report {
        println!("report written to {}", path.display());
    }
    Ok(())
}
