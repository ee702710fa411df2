//! A population started away from the optimum: the transient term added to
//! the clonal mean fitness.
//!
//! `cargo run --example initial_condition`

use evoclim::analytic::{AnalyticModel, InitialCondition};
use evoclim::environment::{EnvTrajectory, ModelParams};

fn main() -> evoclim::Result<()> {
    let params = ModelParams::new(3, 0.005, 0.1125, 0.0)?;
    let traj = EnvTrajectory::steady();
    let starts = [
        ("clonal", InitialCondition::Clonal),
        ("dirac", InitialCondition::dirac_at(&[0.25, 0.0, 0.0])),
        (
            "gaussian",
            InitialCondition::IsotropicGaussian {
                a: 0.25,
                sigma2: 0.01,
            },
        ),
    ];
    for (name, init) in &starts {
        let m = AnalyticModel::new(params, &traj, init)?;
        print!("{name:>9}:");
        for t in [0.0, 10.0, 50.0, 100.0, 300.0] {
            print!(" {:>10.6}", m.mbar(t)?);
        }
        println!("   R0'(50) = {:.6}", m.r0_prime(50.0)?);
    }
    Ok(())
}
