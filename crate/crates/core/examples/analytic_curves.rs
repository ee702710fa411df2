//! Mean fitness of a clonal population under each optimum trajectory.
//!
//! `cargo run --example analytic_curves`

use std::f64::consts::PI;

use evoclim::analytic::{asymptotic_summary, AnalyticModel, InitialCondition};
use evoclim::environment::{EnvTrajectory, ModelParams};

fn main() -> evoclim::Result<()> {
    let params = ModelParams::new(3, 0.005, 0.1125, 0.0)?;
    let mu = params.mu();
    let c = (3.0 * mu.powi(3)).sqrt();
    let omega = mu * PI;
    let dm = (31.0f64 * 0.005).sqrt();
    let variants = [
        EnvTrajectory::steady(),
        EnvTrajectory::Linear { c },
        EnvTrajectory::power(c, 0.5)?,
        EnvTrajectory::Sin {
            delta_max: dm,
            omega,
        },
        EnvTrajectory::SinSq {
            delta_max: 10.0 * 0.005f64.sqrt(),
            omega,
        },
        EnvTrajectory::LinearPlusSin {
            c,
            delta_max: dm,
            omega,
        },
    ];
    println!(
        "mu = {mu:.6}, mutation load = {:.6}",
        params.mutation_load()
    );
    print!("{:>6}", "t");
    for v in &variants {
        print!("{:>17}", v.name());
    }
    println!();
    let models: Vec<_> = variants
        .iter()
        .map(|v| AnalyticModel::new(params, v, &InitialCondition::Clonal))
        .collect::<evoclim::Result<_>>()?;
    for k in 0..=10 {
        let t = 100.0 * k as f64;
        print!("{t:>6}");
        for m in &models {
            print!("{:>17.6}", m.mbar(t)?);
        }
        println!();
    }
    for v in &variants {
        println!("{:>16}: {:?}", v.name(), asymptotic_summary(&params, v)?);
    }
    let m = &models[1];
    let mo = m.moments(1000.0)?;
    println!(
        "linear shift at t = 1000: V_m = {:.6e}, Skew_m = {:.4}",
        mo.vm, mo.skew
    );
    Ok(())
}
