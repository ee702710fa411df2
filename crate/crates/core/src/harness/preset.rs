//! Ready-made scenarios for the standard mean-fitness figure panels.

use super::config::{
    Engine, IbmSection, IdeSection, InitSpec, ParamsSpec, Scenario, TimesSpec, TrajectorySpec,
};
use crate::error::{Error, Result};

pub const PRESETS: [&str; 6] = ["fig2a", "fig2b", "fig2c", "fig2d", "fig3a", "fig3b"];

/// Shared by every preset; the two OU panels see the same realized path.
pub const PRESET_SEED: u64 = 20_190_101;

const N: usize = 3;
const LAMBDA: f64 = 0.005;
const HORIZON: f64 = 1000.0;
const STEP: f64 = 10.0;
const REPLICATES: usize = 1000;

/// `n^2 lambda / 4`
const U_C: f64 = 0.01125;

fn base(
    name: &str,
    u: f64,
    trajectory: TrajectorySpec,
    size: usize,
    engines: Vec<Engine>,
) -> Scenario {
    let ide = engines.contains(&Engine::Ide).then(IdeSection::default);
    Scenario {
        name: name.to_string(),
        seed: PRESET_SEED,
        engines,
        params: ParamsSpec {
            n: N,
            lambda: LAMBDA,
            u: Some(u),
            mu: None,
            r_max: 0.0,
        },
        trajectory,
        init: InitSpec::Clonal,
        times: TimesSpec::stepped(HORIZON, STEP),
        ibm: Some(IbmSection {
            size,
            replicates: REPLICATES,
            record_every: None,
            keep_replicates: false,
        }),
        ide,
    }
}

/// The scenario behind one figure panel.
pub fn preset(name: &str) -> Result<Scenario> {
    let u = 0.1125;
    let mu = (u * LAMBDA).sqrt();
    let n = N as f64;
    let c = (n * mu.powi(3)).sqrt();
    let omega = mu * std::f64::consts::PI;
    let dm_sin = (31.0 * LAMBDA).sqrt();
    let fig2 = vec![Engine::Analytic, Engine::Ibm, Engine::Ide];
    let fig3 = vec![Engine::Analytic, Engine::Ibm];
    let ou = TrajectorySpec::Ou {
        nu: 0.01,
        beta: 0.1,
        dt: 0.1,
        horizon: Some(HORIZON),
    };
    Ok(match name {
        "fig2a" => base(name, u, TrajectorySpec::Linear { c }, 10_000, fig2),
        "fig2b" => base(
            name,
            u,
            TrajectorySpec::Sin {
                delta_max: dm_sin,
                omega,
            },
            1000,
            fig2,
        ),
        "fig2c" => base(
            name,
            u,
            TrajectorySpec::SinSq {
                delta_max: 10.0 * LAMBDA.sqrt(),
                omega,
            },
            1000,
            fig2,
        ),
        "fig2d" => base(
            name,
            u,
            TrajectorySpec::LinearPlusSin {
                c,
                delta_max: dm_sin,
                omega,
            },
            1000,
            fig2,
        ),
        "fig3a" => base(name, U_C, ou, 1000, fig3),
        "fig3b" => base(name, u, ou, 1000, fig3),
        other => {
            return Err(Error::config(
                "preset",
                format!(
                    "unknown preset `{other}`; expected one of {}",
                    PRESETS.join(", ")
                ),
            ))
        }
    })
}
