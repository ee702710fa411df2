//! Runs a scenario written in TOML through every engine and writes the CSV,
//! JSON and SVG outputs.
//!
//! `cargo run --release --example scenario_run -- [out_dir]`

use std::path::{Path, PathBuf};

use evoclim::harness::{run_and_write, Scenario};

const SCENARIO: &str = r#"
name = "shift-and-wobble"
seed = 3
engines = ["analytic", "ibm", "ide"]

[params]
n = 1
lambda = 0.005
U = 0.1125

[trajectory]
kind = "linear_plus_sin"
c = 0.0005
delta_max = 0.05
omega = 0.05

[times]
horizon = 100.0
step = 5.0

[ibm]
N = 200
replicates = 50

[ide]
points = 1024
"#;

fn main() -> evoclim::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("evoclim-scenario"));
    let scenario = Scenario::from_toml_str(SCENARIO)?;
    let report = run_and_write(&scenario, Path::new("."), &out)?;
    for d in &report.deviations {
        println!("sup |{} - {}| = {:.3e}", d.a, d.b, d.sup);
    }
    println!("coverage {:?}", report.coverage);
    println!("outputs in {}", out.display());
    Ok(())
}
