//! Long-run mean fitness and variance across mutation rates for a steadily
//! moving optimum, with the refined optima.
//!
//! `cargo run --example sweep`

use std::path::Path;

use evoclim::harness::{parse_values, sweep};

const BASE: &str = r#"
name = "mu-sweep"
engines = ["analytic"]

[params]
n = 3
lambda = 0.005
mu = 0.02

[trajectory]
kind = "linear"
c = 0.01

[times]
values = [0.0]
"#;

fn main() -> evoclim::Result<()> {
    let table: toml::Table = BASE.parse().expect("valid TOML");
    let values = parse_values("0.005:0.08:31")?;
    let s = sweep(&table, Path::new("."), "mu", &values)?;
    let mut out = std::io::stdout().lock();
    s.write_csv(&mut out)?;
    for e in &s.extrema {
        println!("# {} {:?} near mu = {:.5}", e.column, e.kind, e.refined);
    }
    let c: f64 = 0.01;
    println!(
        "# expected: mbar max at {:.5}, V_m min at {:.5}",
        (2.0 * c * c / 3.0).cbrt(),
        (c * c / 3.0).cbrt()
    );
    Ok(())
}
