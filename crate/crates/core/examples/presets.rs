//! Lists the figure presets with their scenario files and long-run values.
//!
//! `cargo run --example presets`

use std::path::Path;

use evoclim::analytic::asymptotic_summary;
use evoclim::harness::{preset, PRESETS};

fn main() -> evoclim::Result<()> {
    for name in PRESETS {
        let scenario = preset(name)?;
        let plan = scenario.resolve(Path::new("."))?;
        println!("## {name}");
        print!("{}", scenario.to_toml_string());
        match asymptotic_summary(&plan.scenario.params, &plan.trajectory) {
            Ok(s) => println!("# long run: {s:?}\n"),
            Err(e) => println!("# long run: {e}\n"),
        }
    }
    Ok(())
}
