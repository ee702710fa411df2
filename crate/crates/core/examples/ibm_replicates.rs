//! Wright-Fisher replicates under a linearly moving optimum, compared with
//! the analytic mean fitness.
//!
//! `cargo run --release --example ibm_replicates`

use evoclim::analytic::{AnalyticModel, InitialCondition};
use evoclim::environment::{EnvTrajectory, ModelParams};
use evoclim::ibm::{run_replicates, IbmConfig};
use evoclim::numerics::RngStream;

fn main() -> evoclim::Result<()> {
    let params = ModelParams::new(3, 0.005, 0.1125, 0.0)?;
    let c = (3.0 * params.mu().powi(3)).sqrt();
    let traj = EnvTrajectory::Linear { c };
    let cfg = IbmConfig::new(500, 300, 100, 25);
    let stats = run_replicates(&params, &traj, &cfg, RngStream::new(42, 0))?;
    let model = AnalyticModel::new(params, &traj, &InitialCondition::Clonal)?;
    println!(
        "{:>5} {:>10} {:>10} {:>10} {:>10}",
        "t", "analytic", "ibm mean", "q025", "q975"
    );
    let mut analytic = vec![];
    for (k, &t) in stats.times.iter().enumerate() {
        let m = model.mbar(t)?;
        analytic.push(m);
        println!(
            "{t:>5} {m:>10.5} {:>10.5} {:>10.5} {:>10.5}",
            stats.mean_mbar[k], stats.q025[k], stats.q975[k]
        );
    }
    let coverage = stats.coverage(&stats.times, &analytic).unwrap_or(f64::NAN);
    println!("fraction of times inside the 95% band: {coverage:.2}");
    Ok(())
}
