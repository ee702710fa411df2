//! Critical speed of a moving optimum and the population density just below
//! and above it.
//!
//! `cargo run --example persistence`

use evoclim::analytic::{
    critical_speed, critical_speed_with_fluctuations, AnalyticModel, InitialCondition,
};
use evoclim::environment::{EnvTrajectory, ModelParams};
use evoclim::moments::uniform_grid;

fn main() -> evoclim::Result<()> {
    let params = ModelParams::new(3, 0.005, 0.1125, 0.1)?;
    let mu = params.mu();
    let cs = critical_speed(&params);
    let omega = mu * std::f64::consts::PI;
    let csf = critical_speed_with_fluctuations(&params, 0.1, omega);
    println!("c* = {:.6}, with fluctuations {:.6}", cs.c_star, csf.c_star);
    let times = uniform_grid(5000.0, 5001);
    for factor in [0.9, 1.1] {
        let traj = EnvTrajectory::Linear {
            c: factor * cs.c_star,
        };
        let model = AnalyticModel::new(params, &traj, &InitialCondition::Clonal)?;
        let rho = model.persistence_rho(&times, 0.05, 1e-12)?;
        println!(
            "c = {factor} c*: rho(5000) = {:.3e}, extinct at {:?}",
            rho.rho.last().unwrap(),
            rho.extinct_at
        );
    }
    Ok(())
}
