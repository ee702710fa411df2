//! Diffusion limit in three dimensions, solved on the (axial, radial) grid.
//!
//! `cargo run --release --example reduced_pde`

use evoclim::analytic::AnalyticModel;
use evoclim::environment::{EnvTrajectory, ModelParams};
use evoclim::ide::{solve_pde_reduced, GridReduced, InitialDensity};

fn main() -> evoclim::Result<()> {
    let params = ModelParams::new(3, 0.005, 0.1125, 0.0)?;
    let c = (3.0 * params.mu().powi(3)).sqrt();
    let traj = EnvTrajectory::Linear { c };
    let init = InitialDensity::NearDirac { mean: 0.0 };
    let horizon = 200.0;
    let times: Vec<f64> = (0..=10).map(|k| 20.0 * k as f64).collect();
    let grid = GridReduced::for_scenario(&params, &traj, &init, horizon, (256, 128))?;
    let sol = solve_pde_reduced(&params, &traj, &init, &times, grid, 0.05)?;
    let reference = init.to_initial_condition(&params);
    let model = AnalyticModel::new(params, &traj, &reference)?;
    println!(
        "{:>5} {:>12} {:>12} {:>12}",
        "t", "pde mbar", "analytic", "pde V_m"
    );
    for (k, &t) in times.iter().enumerate() {
        println!(
            "{t:>5} {:>12.7} {:>12.7} {:>12.4e}",
            sol.moments.mbar[k],
            model.mbar(t)?,
            sol.moments.vm[k]
        );
    }
    Ok(())
}
