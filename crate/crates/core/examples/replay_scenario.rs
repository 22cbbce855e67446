//! Replays a scenario script and prints the report plus the transcript.
//!
//!     cargo run -p nbcollab --example replay_scenario -- scenarios/paired_t2_baseline.json

use std::path::Path;

use nbcollab::scenario::{run_scenario, ScenarioScript};

fn main() {
    let default = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/rubric_s2_common1.json");
    let path = std::env::args().nth(1).map(Into::into).unwrap_or(default);
    let script = match ScenarioScript::load(&path) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            std::process::exit(2);
        }
    };
    let report = run_scenario(&script).unwrap_or_else(|e| {
        eprintln!("{e}");
        std::process::exit(2);
    });
    for entry in &report.transcript {
        println!("{}", serde_json::to_string(entry).unwrap());
    }
    println!("{}", report.summary());
    std::process::exit(if report.ok() { 0 } else { 1 });
}
