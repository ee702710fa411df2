//! Scenario files, cross-engine comparison runs, figure presets and
//! parameter sweeps.

mod config;
mod preset;
mod run;
pub mod svg;
mod sweep;

pub use config::{
    Engine, IbmSection, IdeGrid, IdeSection, IdeSetup, InitSpec, ParamsSpec, Plan,
    ResolvedScenario, Scenario, TimesSpec, TrajectorySpec, INIT_KINDS, OU_STREAM, TRAJECTORY_KINDS,
};
pub use preset::{preset, PRESETS, PRESET_SEED};
pub use run::{
    run_and_write, run_plan, run_scenario, ComparisonReport, Deviation, IbmBand, RunOutput,
    IDE_REFERENCE,
};
pub use sweep::{
    parabola_vertex, parse_values, patch, sweep, sweep_file, Extremum, ExtremumKind, SweepRow,
    SweepTable,
};
