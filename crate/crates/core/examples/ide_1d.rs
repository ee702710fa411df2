//! The one-dimensional integro-differential equation on a grid, started from
//! a Gaussian and checked against the analytic engine with the same start.
//!
//! `cargo run --release --example ide_1d`

use evoclim::analytic::AnalyticModel;
use evoclim::environment::{EnvTrajectory, ModelParams};
use evoclim::ide::{solve_ide_1d, Grid1D, InitialDensity};

fn main() -> evoclim::Result<()> {
    let params = ModelParams::new(1, 0.005, 0.1125, 0.0)?;
    let traj = EnvTrajectory::Sin {
        delta_max: 0.1,
        omega: 0.05,
    };
    let init = InitialDensity::Gaussian {
        mean: 0.0,
        var: 0.005,
    };
    let times: Vec<f64> = (0..=20).map(|k| 10.0 * k as f64).collect();
    let grid = Grid1D::for_scenario(&params, &traj, &init, 200.0, 1024)?;
    let sol = solve_ide_1d(&params, &traj, &init, &times, grid, 0.05)?;
    let reference = init.to_initial_condition(&params);
    let model = AnalyticModel::new(params, &traj, &reference)?;
    println!(
        "{:>5} {:>12} {:>12} {:>10}",
        "t", "grid", "analytic", "diff"
    );
    for (k, &t) in times.iter().enumerate() {
        let a = model.mbar(t)?;
        let g = sol.moments.mbar[k];
        println!("{t:>5} {g:>12.7} {a:>12.7} {:>10.2e}", g - a);
    }
    println!("{:?}", sol.diagnostics);
    Ok(())
}
