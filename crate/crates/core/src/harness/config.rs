//! Scenario files: parsing, validation and resolution into engine inputs.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::analytic::InitialCondition;
use crate::environment::{EnvTrajectory, ModelParams, OuSpec, TabulatedPath};
use crate::error::{Error, Result};
use crate::ibm::IbmConfig;
use crate::ide::{Grid1D, GridReduced, InitialDensity};
use crate::moments::{check_times, uniform_grid};
use crate::numerics::RngStream;

/// Stream id of the random stream realizing an Ornstein-Uhlenbeck optimum.
/// IBM replicates use ids `0..replicates`.
pub const OU_STREAM: u64 = 1 << 63;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Analytic,
    Ibm,
    Ide,
}

impl Engine {
    pub fn as_str(self) -> &'static str {
        match self {
            Engine::Analytic => "analytic",
            Engine::Ibm => "ibm",
            Engine::Ide => "ide",
        }
    }
}

/// `[params]`: exactly one of `U` and `mu` must be given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSpec {
    pub n: usize,
    pub lambda: f64,
    #[serde(rename = "U", default, skip_serializing_if = "Option::is_none")]
    pub u: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default)]
    pub r_max: f64,
}

impl ParamsSpec {
    pub fn resolve(&self) -> Result<ModelParams> {
        let p = match (self.u, self.mu) {
            (Some(u), None) => ModelParams::new(self.n, self.lambda, u, self.r_max),
            (None, Some(mu)) => ModelParams::with_mu(self.n, self.lambda, mu, self.r_max),
            _ => {
                return Err(Error::config(
                    "params.U",
                    "give exactly one of `U` and `mu`",
                ))
            }
        };
        p.map_err(|e| scoped("params", e))
    }
}

impl From<ModelParams> for ParamsSpec {
    fn from(p: ModelParams) -> Self {
        Self {
            n: p.n,
            lambda: p.lambda,
            u: Some(p.u),
            mu: None,
            r_max: p.r_max,
        }
    }
}

pub const TRAJECTORY_KINDS: [&str; 8] = [
    "steady",
    "linear",
    "power",
    "sin",
    "sin_sq",
    "linear_plus_sin",
    "ou",
    "tabulated",
];

/// `[trajectory]`, selected by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrajectorySpec {
    Steady,
    Linear {
        c: f64,
    },
    Power {
        c: f64,
        alpha: f64,
    },
    Sin {
        delta_max: f64,
        omega: f64,
    },
    SinSq {
        delta_max: f64,
        omega: f64,
    },
    LinearPlusSin {
        c: f64,
        delta_max: f64,
        omega: f64,
    },
    /// One Ornstein-Uhlenbeck path realized from the scenario seed.
    Ou {
        nu: f64,
        beta: f64,
        dt: f64,
        /// Defaults to the last output time.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        horizon: Option<f64>,
    },
    /// `t,delta` CSV, relative to the scenario file.
    Tabulated {
        file: PathBuf,
    },
}

impl TrajectorySpec {
    pub fn is_periodic(&self) -> bool {
        matches!(
            self,
            TrajectorySpec::Sin { .. }
                | TrajectorySpec::SinSq { .. }
                | TrajectorySpec::LinearPlusSin { .. }
        )
    }

    fn realize(&self, seed: u64, base_dir: &Path, last_time: f64) -> Result<EnvTrajectory> {
        let traj = match self {
            TrajectorySpec::Steady => EnvTrajectory::steady(),
            TrajectorySpec::Linear { c } => EnvTrajectory::Linear { c: *c },
            TrajectorySpec::Power { c, alpha } => EnvTrajectory::Power {
                c: *c,
                alpha: *alpha,
            },
            TrajectorySpec::Sin { delta_max, omega } => EnvTrajectory::Sin {
                delta_max: *delta_max,
                omega: *omega,
            },
            TrajectorySpec::SinSq { delta_max, omega } => EnvTrajectory::SinSq {
                delta_max: *delta_max,
                omega: *omega,
            },
            TrajectorySpec::LinearPlusSin {
                c,
                delta_max,
                omega,
            } => EnvTrajectory::LinearPlusSin {
                c: *c,
                delta_max: *delta_max,
                omega: *omega,
            },
            TrajectorySpec::Ou {
                nu,
                beta,
                dt,
                horizon,
            } => EnvTrajectory::realize_ou(&OuSpec {
                nu: *nu,
                beta_noise: *beta,
                dt: *dt,
                horizon: horizon.unwrap_or(last_time),
                stream: RngStream::new(seed, OU_STREAM),
            })
            .map_err(|e| scoped("trajectory", e))?,
            TrajectorySpec::Tabulated { file } => {
                let path = base_dir.join(file);
                TabulatedPath::load(&path)
                    .map(EnvTrajectory::Tabulated)
                    .map_err(|e| {
                        Error::config("trajectory.file", format!("{}: {e}", path.display()))
                    })?
            }
        };
        traj.validate().map_err(|e| scoped("trajectory", e))?;
        Ok(traj)
    }
}

pub const INIT_KINDS: [&str; 3] = ["clonal", "dirac", "isotropic_gaussian"];

/// `[init]`: the initial phenotype distribution.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    /// Every individual at the optimum.
    #[default]
    Clonal,
    /// Every individual at phenotype `x` (all `n` coordinates).
    Dirac { x: Vec<f64> },
    /// `N(a e_1, sigma2 I)`.
    IsotropicGaussian { a: f64, sigma2: f64 },
}

impl InitSpec {
    fn condition(&self, n: usize) -> Result<InitialCondition> {
        let ic = match self {
            InitSpec::Clonal => InitialCondition::Clonal,
            InitSpec::Dirac { x } => {
                if x.len() != n {
                    return Err(Error::config(
                        "init.x",
                        format!("must have n = {n} coordinates"),
                    ));
                }
                InitialCondition::dirac_at(x)
            }
            InitSpec::IsotropicGaussian { a, sigma2 } => InitialCondition::IsotropicGaussian {
                a: *a,
                sigma2: *sigma2,
            },
        };
        ic.validate().map_err(|e| scoped("init", e))?;
        Ok(ic)
    }

    /// The grid engines' version of this distribution: clonal starts
    /// become one-mutational-step Gaussians.
    fn density(&self) -> Result<InitialDensity> {
        match self {
            InitSpec::Clonal => Ok(InitialDensity::NearDirac { mean: 0.0 }),
            InitSpec::Dirac { x } => {
                if x.iter().skip(1).any(|v| *v != 0.0) {
                    return Err(Error::config(
                        "init.x",
                        "the ide engine needs a start on the first axis (set ide.init to override)",
                    ));
                }
                Ok(InitialDensity::NearDirac { mean: x[0] })
            }
            InitSpec::IsotropicGaussian { a, sigma2 } => {
                if *sigma2 > 0.0 {
                    Ok(InitialDensity::Gaussian {
                        mean: *a,
                        var: *sigma2,
                    })
                } else {
                    Ok(InitialDensity::NearDirac { mean: *a })
                }
            }
        }
    }
}

/// `[times]`: either `values`, or `horizon` with one of `step` and `points`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimesSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
}

impl TimesSpec {
    pub fn stepped(horizon: f64, step: f64) -> Self {
        Self {
            horizon: Some(horizon),
            step: Some(step),
            points: None,
            values: None,
        }
    }

    pub fn resolve(&self) -> Result<Vec<f64>> {
        let times =
            match (self.values.as_ref(), self.horizon, self.step, self.points) {
                (Some(v), None, None, None) => v.clone(),
                (None, Some(h), Some(s), None) => {
                    if !(h >= 0.0 && h.is_finite()) {
                        return Err(Error::config("times.horizon", "must be finite and >= 0"));
                    }
                    if !(s > 0.0 && s.is_finite()) {
                        return Err(Error::config("times.step", "must be > 0"));
                    }
                    let k = (h / s).round();
                    if (k * s - h).abs() > 1e-9 * h.max(1.0) {
                        return Err(Error::config("times.step", "must divide the horizon"));
                    }
                    let k = k as usize;
                    // integer steps give exact integer times
                    (0..=k)
                        .map(|i| if i == k { h } else { i as f64 * s })
                        .collect()
                }
                (None, Some(h), None, Some(p)) => {
                    if !(h >= 0.0 && h.is_finite()) {
                        return Err(Error::config("times.horizon", "must be finite and >= 0"));
                    }
                    if p == 0 || (p == 1) != (h == 0.0) {
                        return Err(Error::config(
                            "times.points",
                            "need >= 2 points (1 when horizon = 0)",
                        ));
                    }
                    uniform_grid(h, p)
                }
                _ => return Err(Error::config(
                    "times",
                    "give either `values`, or `horizon` with exactly one of `step` and `points`",
                )),
            };
        if times.is_empty() {
            return Err(Error::config("times", "must not be empty"));
        }
        check_times(&times).map_err(|e| scoped("times", e))?;
        Ok(times)
    }
}

/// `[ibm]`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IbmSection {
    #[serde(rename = "N")]
    pub size: usize,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    /// Must divide every output time; the gcd of the output times by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_every: Option<u64>,
    /// Also write every replicate's mean-fitness series.
    #[serde(default)]
    pub keep_replicates: bool,
}

fn default_replicates() -> usize {
    1000
}

/// `[ide]`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdeSection {
    #[serde(default = "default_ide_dt")]
    pub dt: f64,
    /// Nodes of the one-dimensional grid (`n = 1`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
    /// Nodes of the reduced grid along `x1` and `r` (`n >= 2`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points_x: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points_r: Option<usize>,
    /// Overrides the density derived from `[init]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<InitialDensity>,
}

impl Default for IdeSection {
    fn default() -> Self {
        Self {
            dt: default_ide_dt(),
            points: None,
            points_x: None,
            points_r: None,
            init: None,
        }
    }
}

fn default_ide_dt() -> f64 {
    0.05
}

/// A scenario file as written by the user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub engines: Vec<Engine>,
    pub params: ParamsSpec,
    pub trajectory: TrajectorySpec,
    #[serde(default)]
    pub init: InitSpec,
    pub times: TimesSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ibm: Option<IbmSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ide: Option<IdeSection>,
}

const SECTIONS: [&str; 9] = [
    "name",
    "seed",
    "engines",
    "params",
    "trajectory",
    "init",
    "times",
    "ibm",
    "ide",
];

impl Scenario {
    /// Parses TOML text. Errors name the offending field.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config("<file>", e.message().to_string()))?;
        Self::from_table(&table)
    }

    pub fn from_table(table: &toml::Table) -> Result<Self> {
        if let Some(key) = table.keys().find(|k| !SECTIONS.contains(&k.as_str())) {
            return Err(Error::config(key.clone(), "unknown key"));
        }
        check_kind(table, "trajectory", &TRAJECTORY_KINDS, true)?;
        check_kind(table, "init", &INIT_KINDS, false)?;
        Ok(Self {
            name: required(table, "name")?,
            seed: optional(table, "seed")?.unwrap_or(0),
            engines: required(table, "engines")?,
            params: required(table, "params")?,
            trajectory: required(table, "trajectory")?,
            init: optional(table, "init")?.unwrap_or_default(),
            times: required(table, "times")?,
            ibm: optional(table, "ibm")?,
            ide: optional(table, "ide")?,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("<file>", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes to TOML")
    }

    /// Validates the scenario and builds every engine input. Relative
    /// paths are taken from `base_dir`.
    pub fn resolve(&self, base_dir: &Path) -> Result<Plan> {
        if self.engines.is_empty() {
            return Err(Error::config(
                "engines",
                "select at least one of analytic, ibm, ide",
            ));
        }
        let mut engines = self.engines.clone();
        engines.sort();
        engines.dedup();
        if engines.len() != self.engines.len() {
            return Err(Error::config(
                "engines",
                "engines are listed more than once",
            ));
        }
        let params = self.params.resolve()?;
        let times = self.times.resolve()?;
        let last = *times.last().unwrap();
        let traj = self.trajectory.realize(self.seed, base_dir, last)?;
        if let Some(h) = traj.horizon() {
            if last > h * (1.0 + 1e-12) {
                return Err(Error::config(
                    "times",
                    format!("last time {last} is past the trajectory horizon {h}"),
                ));
            }
        }
        let init = self.init.condition(params.n)?;

        let ibm = if engines.contains(&Engine::Ibm) {
            let sec = self.ibm.as_ref().ok_or_else(|| {
                Error::config("ibm", "section required when the ibm engine is selected")
            })?;
            Some(self.resolve_ibm(sec, &params, &times)?)
        } else {
            None
        };
        let ide = if engines.contains(&Engine::Ide) {
            let sec = self.ide.clone().unwrap_or_default();
            Some(self.resolve_ide(&sec, &params, &traj, last)?)
        } else {
            None
        };

        let resolved = ResolvedScenario {
            name: self.name.clone(),
            seed: self.seed,
            engines,
            params,
            mu: params.mu(),
            trajectory: self.trajectory.clone(),
            init: self.init.clone(),
            times: times.clone(),
            ibm: ibm.clone(),
            ide: ide.clone(),
        };
        Ok(Plan {
            scenario: resolved,
            trajectory: traj,
            init,
        })
    }

    fn resolve_ibm(
        &self,
        sec: &IbmSection,
        params: &ModelParams,
        times: &[f64],
    ) -> Result<IbmConfig> {
        let mut gens = Vec::with_capacity(times.len());
        for &t in times {
            if t.fract() != 0.0 {
                return Err(Error::config(
                    "times",
                    format!("the ibm engine needs integer times (got {t})"),
                ));
            }
            gens.push(t as u64);
        }
        let every = match sec.record_every {
            Some(e) => {
                if e == 0 || gens.iter().any(|g| g % e != 0) {
                    return Err(Error::config(
                        "ibm.record_every",
                        "must be >= 1 and divide every output time",
                    ));
                }
                e
            }
            None => gens.iter().fold(0, |a, &b| gcd(a, b)).max(1),
        };
        let mut cfg = IbmConfig::new(sec.size, *gens.last().unwrap(), sec.replicates, every);
        cfg.keep_replicates = sec.keep_replicates;
        cfg.start = match &self.init {
            InitSpec::Clonal => None,
            InitSpec::Dirac { x } => Some(x.clone()),
            InitSpec::IsotropicGaussian { .. } => {
                return Err(Error::config(
                    "init.kind",
                    "the ibm engine starts clonal; use `clonal` or `dirac`",
                ))
            }
        };
        cfg.validate(params).map_err(|e| scoped("ibm", e))?;
        Ok(cfg)
    }

    fn resolve_ide(
        &self,
        sec: &IdeSection,
        params: &ModelParams,
        traj: &EnvTrajectory,
        last: f64,
    ) -> Result<IdeSetup> {
        if !(sec.dt > 0.0 && sec.dt.is_finite()) {
            return Err(Error::config("ide.dt", "must be finite and > 0"));
        }
        let init = match sec.init {
            Some(d) => d,
            None => self.init.density()?,
        };
        init.validate().map_err(|e| scoped("ide.init", e))?;
        let grid = if params.n == 1 {
            if sec.points_x.is_some() || sec.points_r.is_some() {
                return Err(Error::config("ide.points_x", "n = 1 uses `points`"));
            }
            let points = sec.points.unwrap_or(Grid1D::DEFAULT_POINTS);
            IdeGrid::OneD(
                Grid1D::for_scenario(params, traj, &init, last, points)
                    .map_err(|e| scoped("ide", e))?,
            )
        } else {
            if sec.points.is_some() {
                return Err(Error::config(
                    "ide.points",
                    "n >= 2 uses `points_x` and `points_r`",
                ));
            }
            let (dx, dr) = GridReduced::DEFAULT_POINTS;
            let points = (sec.points_x.unwrap_or(dx), sec.points_r.unwrap_or(dr));
            IdeGrid::Reduced(
                GridReduced::for_scenario(params, traj, &init, last, points)
                    .map_err(|e| scoped("ide", e))?,
            )
        };
        Ok(IdeSetup {
            dt: sec.dt,
            init,
            grid,
        })
    }
}

/// The grid used by the ide engine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IdeGrid {
    OneD(Grid1D),
    Reduced(GridReduced),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdeSetup {
    pub dt: f64,
    pub init: InitialDensity,
    pub grid: IdeGrid,
}

/// Every setting a run uses, defaults filled in. Written at the top of each
/// output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedScenario {
    pub name: String,
    pub seed: u64,
    pub engines: Vec<Engine>,
    pub params: ModelParams,
    pub mu: f64,
    pub trajectory: TrajectorySpec,
    pub init: InitSpec,
    pub times: Vec<f64>,
    pub ibm: Option<IbmConfig>,
    pub ide: Option<IdeSetup>,
}

impl ResolvedScenario {
    pub fn has(&self, e: Engine) -> bool {
        self.engines.contains(&e)
    }

    /// One-line JSON form.
    pub fn header(&self) -> String {
        serde_json::to_string(self).expect("scenario serializes to JSON")
    }
}

/// A validated scenario with its realized trajectory and initial condition.
#[derive(Debug, Clone)]
pub struct Plan {
    pub scenario: ResolvedScenario,
    pub trajectory: EnvTrajectory,
    pub init: InitialCondition,
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Moves a parameter error under a config section.
fn scoped(section: &str, e: Error) -> Error {
    match e {
        Error::InvalidParameter { field, reason } if section.ends_with(field) => {
            Error::config(section, reason)
        }
        Error::InvalidParameter { field, reason } => {
            Error::config(format!("{section}.{field}"), reason)
        }
        Error::OutOfHorizon { t, horizon } => Error::config(
            "times",
            format!("time {t} is past the trajectory horizon {horizon}"),
        ),
        other => other,
    }
}

fn check_kind(table: &toml::Table, section: &str, kinds: &[&str], required: bool) -> Result<()> {
    let Some(value) = table.get(section) else {
        return Ok(());
    };
    let field = format!("{section}.kind");
    match value.get("kind") {
        None if required => Err(Error::config(field, "missing")),
        None => Ok(()),
        Some(toml::Value::String(k)) if kinds.contains(&k.as_str()) => Ok(()),
        Some(toml::Value::String(k)) => Err(Error::config(
            field,
            format!("unknown kind `{k}`; expected one of {}", kinds.join(", ")),
        )),
        Some(_) => Err(Error::config(field, "must be a string")),
    }
}

fn required<T: DeserializeOwned>(table: &toml::Table, key: &str) -> Result<T> {
    optional(table, key)?.ok_or_else(|| Error::config(key, "missing"))
}

fn optional<T: DeserializeOwned>(table: &toml::Table, key: &str) -> Result<Option<T>> {
    let Some(value) = table.get(key) else {
        return Ok(None);
    };
    value
        .clone()
        .try_into()
        .map(Some)
        .map_err(|e: toml::de::Error| {
            let msg = e.message().to_string();
            Error::config(field_in(key, &msg), msg)
        })
}

/// `section.field` when a serde message names the field.
fn field_in(section: &str, msg: &str) -> String {
    for marker in ["missing field `", "unknown field `"] {
        if let Some(start) = msg.find(marker) {
            let rest = &msg[start + marker.len()..];
            if let Some(end) = rest.find('`') {
                return format!("{section}.{}", &rest[..end]);
            }
        }
    }
    section.to_string()
}
