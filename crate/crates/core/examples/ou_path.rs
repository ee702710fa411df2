//! A realized Ornstein-Uhlenbeck optimum and the analytic mean fitness along
//! it, for two mutation rates. Prints CSV.
//!
//! `cargo run --example ou_path > ou.csv`

use evoclim::analytic::{AnalyticModel, InitialCondition};
use evoclim::environment::{EnvTrajectory, ModelParams, OuSpec};
use evoclim::numerics::RngStream;

fn main() -> evoclim::Result<()> {
    let spec = OuSpec {
        nu: 0.01,
        beta_noise: 0.1,
        dt: 0.1,
        horizon: 500.0,
        stream: RngStream::new(7, 1 << 63),
    };
    let path = EnvTrajectory::realize_ou(&spec)?;
    let low = ModelParams::new(3, 0.005, 0.01125, 0.0)?;
    let high = ModelParams::new(3, 0.005, 0.1125, 0.0)?;
    let a = AnalyticModel::new(low, &path, &InitialCondition::Clonal)?;
    let b = AnalyticModel::new(high, &path, &InitialCondition::Clonal)?;
    println!("t,delta,mbar_low_U,mbar_high_U");
    for k in 0..=100 {
        let t = 5.0 * k as f64;
        println!("{t},{},{},{}", path.delta(t)?, a.mbar(t)?, b.mbar(t)?);
    }
    Ok(())
}
