//! Deterministic grid solvers: the mutation-selection integro-differential
//! equation in one trait dimension, and the diffusion approximation in
//! reduced coordinates `(x1, r)`, `r = |(x2, .., xn)|`, for `n >= 2`.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::analytic::InitialCondition;
use crate::environment::{csv_err, fmt_f64, EnvTrajectory, ModelParams};
use crate::error::{Error, Result};
use crate::moments::{check_times, MomentTrajectory, Source};

/// Largest admissible `dt * max|m - mbar|`.
pub const CFL_LIMIT: f64 = 0.2;
/// Edge density above which a boundary warning is logged.
pub const EDGE_WARN: f64 = 1e-9;
/// Cells below this fraction of the peak density are ignored by the
/// reduced solver's stability check.
const SUPPORT_CUTOFF: f64 = 1e-12;
/// Densities below this are set to zero, keeping the sweeps out of
/// subnormal arithmetic.
const FLUSH: f64 = 1e-200;

/// Initial density, isotropic about `mean * e_1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialDensity {
    Gaussian {
        mean: f64,
        var: f64,
    },
    /// Gaussian with variance `lambda`, one mutational step wide.
    NearDirac {
        mean: f64,
    },
}

impl Default for InitialDensity {
    fn default() -> Self {
        InitialDensity::NearDirac { mean: 0.0 }
    }
}

impl InitialDensity {
    /// `(mean, variance per trait)`.
    pub fn resolve(&self, params: &ModelParams) -> (f64, f64) {
        match *self {
            InitialDensity::Gaussian { mean, var } => (mean, var),
            InitialDensity::NearDirac { mean } => (mean, params.lambda),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (mean, var) = match *self {
            InitialDensity::Gaussian { mean, var } => (mean, var),
            InitialDensity::NearDirac { mean } => (mean, 1.0),
        };
        if !mean.is_finite() {
            return Err(Error::invalid("mean", "must be finite"));
        }
        if !(var > 0.0 && var.is_finite()) {
            return Err(Error::invalid("var", "must be finite and > 0"));
        }
        Ok(())
    }

    /// The same distribution as an initial condition of the closed-form engine.
    pub fn to_initial_condition(&self, params: &ModelParams) -> InitialCondition {
        let (a, sigma2) = self.resolve(params);
        InitialCondition::IsotropicGaussian { a, sigma2 }
    }
}

/// Uniform grid on `[-half_width, half_width]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub half_width: f64,
    pub points: usize,
}

impl Grid1D {
    pub const DEFAULT_POINTS: usize = 4096;

    pub fn new(half_width: f64, points: usize) -> Result<Self> {
        let g = Self { half_width, points };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.half_width > 0.0 && self.half_width.is_finite()) {
            return Err(Error::invalid("half_width", "must be finite and > 0"));
        }
        if self.points < 8 || !self.points.is_power_of_two() {
            return Err(Error::invalid("points", "must be a power of two >= 8"));
        }
        Ok(())
    }

    /// Smallest symmetric domain holding the optimum path plus `8 sqrt(mu)`
    /// on each side (and the initial density to 8 standard deviations).
    pub fn for_scenario(
        params: &ModelParams,
        traj: &EnvTrajectory,
        init: &InitialDensity,
        horizon: f64,
        points: usize,
    ) -> Result<Self> {
        let (mean, var) = init.resolve(params);
        let reach = traj.max_abs(horizon)? + 8.0 * params.mu().sqrt();
        Self::new(reach.max(mean.abs() + 8.0 * var.sqrt()), points)
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.half_width / (self.points - 1) as f64
    }

    /// Node positions, exactly antisymmetric about the centre.
    pub fn nodes(&self) -> Vec<f64> {
        let m = self.points;
        let dx = self.dx();
        let mut x: Vec<f64> = (0..m).map(|i| -self.half_width + i as f64 * dx).collect();
        for i in 0..m / 2 {
            x[m - 1 - i] = -x[i];
        }
        x
    }
}

/// Rectangular grid in `(x1, r)`: `x1 in [x_min, x_max]`, `r in [0, r_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridReduced {
    pub x_min: f64,
    pub x_max: f64,
    pub points_x: usize,
    pub r_max: f64,
    pub points_r: usize,
}

impl GridReduced {
    pub const DEFAULT_POINTS: (usize, usize) = (512, 256);

    pub fn new(
        x_min: f64,
        x_max: f64,
        points_x: usize,
        r_max: f64,
        points_r: usize,
    ) -> Result<Self> {
        let g = Self {
            x_min,
            x_max,
            points_x,
            r_max,
            points_r,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x_min.is_finite() && self.x_max.is_finite() && self.x_max > self.x_min) {
            return Err(Error::invalid("x_range", "need finite x_min < x_max"));
        }
        if !(self.r_max > 0.0 && self.r_max.is_finite()) {
            return Err(Error::invalid("r_max", "must be finite and > 0"));
        }
        if self.points_x < 4 || self.points_r < 4 {
            return Err(Error::invalid("points", "need at least 4 nodes per axis"));
        }
        Ok(())
    }

    /// Covers the range of the optimum path widened by `8 sqrt(mu)` (and the
    /// initial density to 8 standard deviations); `r_max = 8 sqrt(mu)`.
    pub fn for_scenario(
        params: &ModelParams,
        traj: &EnvTrajectory,
        init: &InitialDensity,
        horizon: f64,
        points: (usize, usize),
    ) -> Result<Self> {
        let (mean, var) = init.resolve(params);
        let w = 8.0 * params.mu().sqrt();
        let wi = 8.0 * var.sqrt();
        let (mut lo, mut hi) = (0.0f64, 0.0f64);
        // sample the path densely enough to see every excursion
        let samples = ((horizon * 10.0).ceil() as usize).clamp(1, 200_000);
        for k in 0..=samples {
            let d = traj.delta(horizon * k as f64 / samples as f64)?;
            lo = lo.min(d);
            hi = hi.max(d);
        }
        Self::new(
            (lo - w).min(mean - wi),
            (hi + w).max(mean + wi),
            points.0,
            w.max(wi),
            points.1,
        )
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.points_x - 1) as f64
    }

    pub fn dr(&self) -> f64 {
        self.r_max / (self.points_r - 1) as f64
    }

    pub fn x_nodes(&self) -> Vec<f64> {
        let dx = self.dx();
        (0..self.points_x)
            .map(|i| self.x_min + i as f64 * dx)
            .collect()
    }

    pub fn r_nodes(&self) -> Vec<f64> {
        let dr = self.dr();
        (0..self.points_r).map(|j| j as f64 * dr).collect()
    }
}

/// Per-run health figures of a grid solve.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GridDiagnostics {
    pub steps: u64,
    /// Largest relative mass correction applied in one step.
    pub max_mass_correction: f64,
    /// Largest mass removed by the positivity clamp in one step.
    pub max_clamped_mass: f64,
    /// Largest density seen next to the outer boundary.
    pub max_edge_density: f64,
    /// Largest `dt * max|m - mbar|` encountered.
    pub max_cfl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSolution {
    pub moments: MomentTrajectory,
    pub diagnostics: GridDiagnostics,
}

fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid("dt", "must be finite and > 0"))
    }
}

fn check_horizon(traj: &EnvTrajectory, t: f64) -> Result<()> {
    match traj.horizon() {
        Some(h) if t > h * (1.0 + 1e-12) => Err(Error::OutOfHorizon { t, horizon: h }),
        _ => Ok(()),
    }
}

/// Weighted moments of `m` under a unit-mass density.
fn weighted_moments(iter: impl Iterator<Item = (f64, f64)> + Clone) -> (f64, f64, f64) {
    let mbar: f64 = iter.clone().map(|(w, m)| w * m).sum();
    let (mut v, mut k3) = (0.0, 0.0);
    for (w, m) in iter {
        let d = m - mbar;
        v += w * d * d;
        k3 += w * d * d * d;
    }
    let v = v.max(0.0);
    let skew = if v > 0.0 { k3 / v.powf(1.5) } else { f64::NAN };
    (mbar, v, skew)
}

fn warn_edge(diag: &mut GridDiagnostics, edge: f64, warned: &mut bool, t: f64) {
    diag.max_edge_density = diag.max_edge_density.max(edge);
    if edge > EDGE_WARN && !*warned {
        log::warn!("density {edge:.3e} at the grid boundary at t = {t}; widen the domain");
        *warned = true;
    }
}

/// Explicit-Euler integrator of
/// `q_t = U (J * q - q) + q (m - mbar)` with `m = -(x - delta)^2 / 2`.
pub struct Ide1d {
    params: ModelParams,
    traj: EnvTrajectory,
    grid: Grid1D,
    x: Vec<f64>,
    q: Vec<f64>,
    t: f64,
    dt: f64,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    kernel_hat: Vec<f64>,
    buf: Vec<Complex64>,
    scratch: Vec<Complex64>,
    diag: GridDiagnostics,
    warned: bool,
}

impl Ide1d {
    pub fn new(
        params: &ModelParams,
        traj: &EnvTrajectory,
        init: &InitialDensity,
        grid: Grid1D,
        dt: f64,
    ) -> Result<Self> {
        params.validate()?;
        traj.validate()?;
        init.validate()?;
        grid.validate()?;
        check_dt(dt)?;
        if params.n != 1 {
            return Err(Error::invalid(
                "n",
                "the integro-differential solver is one-dimensional",
            ));
        }
        let m = grid.points;
        let dx = grid.dx();
        let x = grid.nodes();
        let (mean, var) = init.resolve(params);
        let mut q: Vec<f64> = x
            .iter()
            .map(|&xi| (-(xi - mean).powi(2) / (2.0 * var)).exp())
            .collect();

        let p = 2 * m;
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(p);
        let ifft = planner.plan_fft_inverse(p);
        let mut kernel = vec![Complex64::new(0.0, 0.0); p];
        for d in 0..m {
            let xd = d as f64 * dx;
            let v = (-xd * xd / (2.0 * params.lambda)).exp();
            kernel[d].re = v;
            if d > 0 {
                kernel[p - d].re = v;
            }
        }
        let ksum: f64 = kernel.iter().map(|c| c.re).sum();
        for c in &mut kernel {
            c.re /= ksum;
        }
        let scratch_len = fft
            .get_inplace_scratch_len()
            .max(ifft.get_inplace_scratch_len());
        let mut scratch = vec![Complex64::new(0.0, 0.0); scratch_len];
        fft.process_with_scratch(&mut kernel, &mut scratch);
        // symmetric real kernel: the transform is real
        let kernel_hat = kernel.iter().map(|c| c.re / p as f64).collect();

        let mut s = Self {
            params: *params,
            traj: traj.clone(),
            grid,
            x,
            q: vec![],
            t: 0.0,
            dt,
            fft,
            ifft,
            kernel_hat,
            buf: vec![Complex64::new(0.0, 0.0); p],
            scratch,
            diag: GridDiagnostics::default(),
            warned: false,
        };
        let mass = s.mass_of(&q);
        q.iter_mut().for_each(|v| *v /= mass);
        s.q = q;
        let edge = s.q[0].max(s.q[m - 1]);
        warn_edge(&mut s.diag, edge, &mut s.warned, 0.0);
        Ok(s)
    }

    fn mass_of(&self, q: &[f64]) -> f64 {
        let dx = self.grid.dx();
        dx * (q.iter().sum::<f64>() - 0.5 * (q[0] + q[q.len() - 1]))
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn nodes(&self) -> &[f64] {
        &self.x
    }

    pub fn density(&self) -> &[f64] {
        &self.q
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn diagnostics(&self) -> &GridDiagnostics {
        &self.diag
    }

    pub fn mass(&self) -> f64 {
        self.mass_of(&self.q)
    }

    /// `(mbar, V_m, skewness)` of the current density.
    pub fn moments(&self) -> Result<(f64, f64, f64)> {
        let delta = self.traj.delta(self.t)?;
        let dx = self.grid.dx();
        let last = self.q.len() - 1;
        Ok(weighted_moments(
            self.x
                .iter()
                .zip(&self.q)
                .enumerate()
                .map(move |(i, (&x, &q))| {
                    let w = if i == 0 || i == last { 0.5 * dx } else { dx };
                    (w * q, -0.5 * (x - delta) * (x - delta))
                }),
        ))
    }

    fn convolve(&mut self) -> Vec<f64> {
        let m = self.q.len();
        for (b, &v) in self.buf.iter_mut().zip(&self.q) {
            *b = Complex64::new(v, 0.0);
        }
        for b in &mut self.buf[m..] {
            *b = Complex64::new(0.0, 0.0);
        }
        self.fft
            .process_with_scratch(&mut self.buf, &mut self.scratch);
        for (b, k) in self.buf.iter_mut().zip(&self.kernel_hat) {
            *b *= *k;
        }
        self.ifft
            .process_with_scratch(&mut self.buf, &mut self.scratch);
        self.buf[..m].iter().map(|c| c.re).collect()
    }

    /// One explicit Euler step of length `h <= dt`.
    fn step_by(&mut self, h: f64) -> Result<()> {
        let delta = self.traj.delta(self.t)?;
        let (mbar, _, _) =
            {
                let dx = self.grid.dx();
                let last = self.q.len() - 1;
                weighted_moments(self.x.iter().zip(&self.q).enumerate().map(
                    move |(i, (&x, &q))| {
                        let w = if i == 0 || i == last { 0.5 * dx } else { dx };
                        (w * q, -0.5 * (x - delta) * (x - delta))
                    },
                ))
            };
        let m_lo = self
            .x
            .iter()
            .map(|&x| -0.5 * (x - delta) * (x - delta))
            .fold(f64::INFINITY, f64::min);
        let m_hi = if delta >= self.x[0] && delta <= self.x[self.x.len() - 1] {
            0.0
        } else {
            -0.5 * (self.x[0] - delta)
                .abs()
                .min((self.x[self.x.len() - 1] - delta).abs())
                .powi(2)
        };
        let cfl = h * (mbar - m_lo).abs().max((m_hi - mbar).abs());
        self.diag.max_cfl = self.diag.max_cfl.max(cfl);
        if cfl > CFL_LIMIT {
            return Err(Error::Cfl(format!(
                "dt * max|m - mbar| = {cfl:.4} > {CFL_LIMIT} at t = {}; reduce dt or the domain",
                self.t
            )));
        }

        let conv = self.convolve();
        let u = self.params.u;
        let mut clamped = 0.0;
        for ((q, &x), c) in self.q.iter_mut().zip(&self.x).zip(conv) {
            let m = -0.5 * (x - delta) * (x - delta);
            let mut v = *q + h * (u * (c - *q) + *q * (m - mbar));
            if v < 0.0 {
                clamped -= v;
                v = 0.0;
            }
            *q = v;
        }
        let dx = self.grid.dx();
        self.diag.max_clamped_mass = self.diag.max_clamped_mass.max(clamped * dx);
        let mass = self.mass();
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::StepFailure {
                t: self.t,
                reason: "density mass vanished".into(),
            });
        }
        self.diag.max_mass_correction = self.diag.max_mass_correction.max((mass - 1.0).abs());
        self.q.iter_mut().for_each(|v| *v /= mass);
        self.t += h;
        self.diag.steps += 1;
        let edge = self.q[0].max(self.q[self.q.len() - 1]);
        warn_edge(&mut self.diag, edge, &mut self.warned, self.t);
        Ok(())
    }

    /// Advances to time `t`, shortening the last step to land on it exactly.
    pub fn advance_to(&mut self, t: f64) -> Result<()> {
        check_horizon(&self.traj, t)?;
        while self.t < t - 1e-12 * t.max(1.0) {
            let h = self.dt.min(t - self.t);
            self.step_by(h)?;
        }
        self.t = self.t.max(t);
        Ok(())
    }

    pub fn write_density_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["x", "q"]).map_err(csv_err)?;
        for (x, q) in self.x.iter().zip(&self.q) {
            w.write_record([fmt_f64(*x), fmt_f64(*q)])
                .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn record<S>(
    solver: &mut S,
    times: &[f64],
    advance: impl Fn(&mut S, f64) -> Result<()>,
    moments: impl Fn(&S) -> Result<(f64, f64, f64)>,
    mut snapshot: impl FnMut(&S, usize) -> Result<()>,
) -> Result<MomentTrajectory> {
    check_times(times)?;
    let (mut mb, mut vm, mut sk) = (vec![], vec![], vec![]);
    for (k, &t) in times.iter().enumerate() {
        advance(solver, t)?;
        let (a, b, c) = moments(solver)?;
        mb.push(a);
        vm.push(b);
        sk.push(c);
        snapshot(solver, k)?;
    }
    MomentTrajectory::new(times.to_vec(), mb, vm, sk, Source::Ide)
}

/// Grid description stored next to density snapshots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SnapshotGrid {
    /// Files hold `x,q` columns.
    OneD { grid: Grid1D },
    /// Files hold the full-space density `p(x1, r)`, one row per `x1` node.
    Reduced { grid: GridReduced, n: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotManifest {
    pub times: Vec<f64>,
    pub files: Vec<String>,
    pub grid: SnapshotGrid,
}

fn snapshot_name(k: usize) -> String {
    format!("density_{k:05}.csv")
}

fn write_manifest(dir: &Path, times: &[f64], grid: SnapshotGrid) -> Result<()> {
    let manifest = SnapshotManifest {
        times: times.to_vec(),
        files: (0..times.len()).map(snapshot_name).collect(),
        grid,
    };
    let f = std::fs::File::create(dir.join("manifest.json"))?;
    serde_json::to_writer_pretty(f, &manifest)?;
    Ok(())
}

/// Solves the one-dimensional IDE and records moments at `times`.
pub fn solve_ide_1d(
    params: &ModelParams,
    traj: &EnvTrajectory,
    init: &InitialDensity,
    times: &[f64],
    grid: Grid1D,
    dt: f64,
) -> Result<GridSolution> {
    solve_ide_1d_impl(params, traj, init, times, grid, dt, None)
}

/// As [`solve_ide_1d`], also writing the density at every recorded time
/// into `dir` with a `manifest.json`.
pub fn solve_ide_1d_with_snapshots(
    params: &ModelParams,
    traj: &EnvTrajectory,
    init: &InitialDensity,
    times: &[f64],
    grid: Grid1D,
    dt: f64,
    dir: &Path,
) -> Result<GridSolution> {
    solve_ide_1d_impl(params, traj, init, times, grid, dt, Some(dir))
}

fn solve_ide_1d_impl(
    params: &ModelParams,
    traj: &EnvTrajectory,
    init: &InitialDensity,
    times: &[f64],
    grid: Grid1D,
    dt: f64,
    dir: Option<&Path>,
) -> Result<GridSolution> {
    let mut s = Ide1d::new(params, traj, init, grid, dt)?;
    let moments = record(
        &mut s,
        times,
        |s, t| s.advance_to(t),
        |s| s.moments(),
        |s, k| match dir {
            Some(d) => s.write_density_csv(std::fs::File::create(d.join(snapshot_name(k)))?),
            None => Ok(()),
        },
    )?;
    if let Some(d) = dir {
        write_manifest(d, times, SnapshotGrid::OneD { grid })?;
    }
    Ok(GridSolution {
        moments,
        diagnostics: s.diag,
    })
}

/// Solves the reduced diffusion PDE (`n >= 2`) and records moments at `times`.
pub fn solve_pde_reduced(
    params: &ModelParams,
    traj: &EnvTrajectory,
    init: &InitialDensity,
    times: &[f64],
    grid: GridReduced,
    dt: f64,
) -> Result<GridSolution> {
    solve_pde_reduced_impl(params, traj, init, times, grid, dt, None)
}

/// As [`solve_pde_reduced`], also writing density snapshots into `dir`.
pub fn solve_pde_reduced_with_snapshots(
    params: &ModelParams,
    traj: &EnvTrajectory,
    init: &InitialDensity,
    times: &[f64],
    grid: GridReduced,
    dt: f64,
    dir: &Path,
) -> Result<GridSolution> {
    solve_pde_reduced_impl(params, traj, init, times, grid, dt, Some(dir))
}

fn solve_pde_reduced_impl(
    params: &ModelParams,
    traj: &EnvTrajectory,
    init: &InitialDensity,
    times: &[f64],
    grid: GridReduced,
    dt: f64,
    dir: Option<&Path>,
) -> Result<GridSolution> {
    let mut s = ReducedPde::new(params, traj, init, grid, dt)?;
    let moments = record(
        &mut s,
        times,
        |s, t| s.advance_to(t),
        |s| s.moments(),
        |s, k| match dir {
            Some(d) => s.write_density_csv(std::fs::File::create(d.join(snapshot_name(k)))?),
            None => Ok(()),
        },
    )?;
    if let Some(d) = dir {
        write_manifest(d, times, SnapshotGrid::Reduced { grid, n: params.n })?;
    }
    Ok(GridSolution {
        moments,
        diagnostics: s.diag,
    })
}

/// Surface area of the unit sphere in `R^(n-1)`.
pub fn angular_measure(n: usize) -> f64 {
    // 2 pi^(k/2) / Gamma(k/2) with k = n - 1
    let k = n - 1;
    let mut gamma = if k.is_multiple_of(2) {
        1.0
    } else {
        std::f64::consts::PI.sqrt()
    };
    let mut a = if k.is_multiple_of(2) { 1.0 } else { 0.5 };
    while a < k as f64 / 2.0 - 1e-9 {
        gamma *= a;
        a += 1.0;
    }
    2.0 * std::f64::consts::PI.powf(k as f64 / 2.0) / gamma
}

/// Precomputed Thomas factors of a tridiagonal system with the last
/// unknown pinned to zero.
#[derive(Debug, Clone)]
struct Tridiag {
    lower: Vec<f64>,
    upper_prime: Vec<f64>,
    inv_den: Vec<f64>,
}

impl Tridiag {
    fn new(lower: Vec<f64>, diag: &[f64], upper: &[f64]) -> Self {
        let k = diag.len();
        let mut upper_prime = vec![0.0; k];
        let mut inv_den = vec![0.0; k];
        for i in 0..k {
            let den = diag[i]
                - if i > 0 {
                    lower[i] * upper_prime[i - 1]
                } else {
                    0.0
                };
            inv_den[i] = 1.0 / den;
            upper_prime[i] = upper[i] * inv_den[i];
        }
        Self {
            lower,
            upper_prime,
            inv_den,
        }
    }
}

/// Crank-Nicolson / ADI splitting for the diffusion approximation
/// `q_t = (mu^2 / 2) Lap q + q (m - mbar)` with isotropy about the `x1` axis.
///
/// The stored values are the full-space density `p(x1, r)`; the reduced
/// density is `omega r^(n-2) p`, with `omega` the area of the unit sphere in
/// `R^(n-1)`. The radial operator uses finite volumes with the exact shell
/// volumes, so `r = 0` is reflecting and mass is conserved up to boundary
/// flux.
pub struct ReducedPde {
    traj: EnvTrajectory,
    grid: GridReduced,
    x: Vec<f64>,
    r: Vec<f64>,
    /// `dx * omega * V_j`.
    weights_r: Vec<f64>,
    p: Vec<f64>,
    tmp: Vec<f64>,
    t: f64,
    dt: f64,
    vol: Vec<f64>,
    faces: Vec<f64>,
    diff: f64,
    full: (XSweep, RSweep),
    half: (XSweep, RSweep),
    diag: GridDiagnostics,
    warned: bool,
}

#[derive(Debug, Clone)]
struct XSweep {
    s: f64,
    sys: Tridiag,
}

#[derive(Debug, Clone)]
struct RSweep {
    lo: Vec<f64>,
    mid: Vec<f64>,
    hi: Vec<f64>,
    sys: Tridiag,
}

impl XSweep {
    /// `(I - tau D / 2 L) p' = (I + tau D / 2 L) p` on interior nodes.
    fn new(diff: f64, tau: f64, dx: f64, points: usize) -> Self {
        let s = 0.5 * tau * diff / (dx * dx);
        let k = points - 2;
        let sys = Tridiag::new(vec![-s; k], &vec![1.0 + 2.0 * s; k], &vec![-s; k]);
        Self { s, sys }
    }
}

impl RSweep {
    fn new(diff: f64, tau: f64, r: &[f64], vol: &[f64], faces: &[f64], dr: f64) -> Self {
        let k = r.len() - 1;
        let (mut lo, mut mid, mut hi) = (vec![0.0; k], vec![0.0; k], vec![0.0; k]);
        let (mut a, mut b, mut c) = (vec![0.0; k], vec![0.0; k], vec![0.0; k]);
        for j in 0..k {
            let f_lo = if j == 0 { 0.0 } else { faces[j - 1] };
            let f_hi = faces[j];
            let g = 0.5 * tau * diff / (dr * vol[j]);
            lo[j] = g * f_lo;
            hi[j] = g * f_hi;
            mid[j] = 1.0 - g * (f_lo + f_hi);
            a[j] = -g * f_lo;
            c[j] = -g * f_hi;
            b[j] = 1.0 + g * (f_lo + f_hi);
        }
        Self {
            lo,
            mid,
            hi,
            sys: Tridiag::new(a, &b, &c),
        }
    }

    fn apply(&self, row: &mut [f64], work: &mut [f64]) {
        let k = self.mid.len();
        for j in 0..k {
            let left = if j > 0 { row[j - 1] } else { 0.0 };
            work[j] = self.lo[j] * left + self.mid[j] * row[j] + self.hi[j] * row[j + 1];
        }
        for j in 0..k {
            let prev = if j > 0 { work[j - 1] } else { 0.0 };
            work[j] = (work[j] - self.sys.lower[j] * prev) * self.sys.inv_den[j];
        }
        row[k] = 0.0;
        for j in (0..k).rev() {
            row[j] = work[j] - self.sys.upper_prime[j] * row[j + 1];
        }
    }
}

impl ReducedPde {
    pub fn new(
        params: &ModelParams,
        traj: &EnvTrajectory,
        init: &InitialDensity,
        grid: GridReduced,
        dt: f64,
    ) -> Result<Self> {
        params.validate()?;
        traj.validate()?;
        init.validate()?;
        grid.validate()?;
        check_dt(dt)?;
        let n = params.n;
        if n < 2 {
            return Err(Error::invalid("n", "the reduced solver needs n >= 2"));
        }
        let x = grid.x_nodes();
        let r = grid.r_nodes();
        let dx = grid.dx();
        let dr = grid.dr();
        let e = (n - 1) as f64;
        let shell = |a: f64, b: f64| (b.powf(e) - a.max(0.0).powf(e)) / e;
        let vol: Vec<f64> = r
            .iter()
            .map(|&rj| shell(rj - 0.5 * dr, rj + 0.5 * dr))
            .collect();
        let faces: Vec<f64> = r
            .iter()
            .map(|&rj| (rj + 0.5 * dr).powi(n as i32 - 2))
            .collect();
        let omega = angular_measure(n);
        let weights_r: Vec<f64> = vol.iter().map(|v| dx * omega * v).collect();

        let diff = 0.5 * params.mu() * params.mu();
        let full = (
            XSweep::new(diff, dt, dx, grid.points_x),
            RSweep::new(diff, dt, &r, &vol, &faces, dr),
        );
        let half = (
            XSweep::new(diff, 0.5 * dt, dx, grid.points_x),
            RSweep::new(diff, 0.5 * dt, &r, &vol, &faces, dr),
        );

        let (mean, var) = init.resolve(params);
        let mr = grid.points_r;
        let mut p = vec![0.0; grid.points_x * mr];
        for (i, &xi) in x.iter().enumerate() {
            if i == 0 || i == x.len() - 1 {
                continue;
            }
            for j in 0..mr - 1 {
                let d2 = (xi - mean).powi(2) + r[j] * r[j];
                p[i * mr + j] = (-d2 / (2.0 * var)).exp();
            }
        }
        let mut s = Self {
            traj: traj.clone(),
            grid,
            x,
            r,
            weights_r,
            tmp: vec![0.0; p.len()],
            p,
            t: 0.0,
            dt,
            vol,
            faces,
            diff,
            full,
            half,
            diag: GridDiagnostics::default(),
            warned: false,
        };
        let mass = s.mass();
        s.p.iter_mut().for_each(|v| *v /= mass);
        s.check_edges();
        Ok(s)
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn grid(&self) -> &GridReduced {
        &self.grid
    }

    pub fn x_nodes(&self) -> &[f64] {
        &self.x
    }

    pub fn r_nodes(&self) -> &[f64] {
        &self.r
    }

    /// Full-space density `p(x1, r)`, row-major in `x1`.
    pub fn density(&self) -> &[f64] {
        &self.p
    }

    /// Mass weight of node `(i, j)`: `dx * omega * shell volume`.
    pub fn weight(&self, j: usize) -> f64 {
        self.weights_r[j]
    }

    pub fn diagnostics(&self) -> &GridDiagnostics {
        &self.diag
    }

    pub fn mass(&self) -> f64 {
        let mr = self.grid.points_r;
        self.p
            .chunks(mr)
            .map(|row| {
                row.iter()
                    .zip(&self.weights_r)
                    .map(|(p, w)| p * w)
                    .sum::<f64>()
            })
            .sum()
    }

    pub fn moments(&self) -> Result<(f64, f64, f64)> {
        Ok(self.moments_at(self.traj.delta(self.t)?))
    }

    fn check_edges(&mut self) {
        let mr = self.grid.points_r;
        let mx = self.grid.points_x;
        let mut edge = 0.0f64;
        for j in 0..mr {
            edge = edge.max(self.p[mr + j]).max(self.p[(mx - 2) * mr + j]);
        }
        for i in 0..mx {
            edge = edge.max(self.p[i * mr + mr - 2]);
        }
        let t = self.t;
        warn_edge(&mut self.diag, edge, &mut self.warned, t);
    }

    /// Zeroes negative and negligible values; returns `(clamped mass, mass)`.
    fn clamp(&mut self) -> (f64, f64) {
        let mr = self.grid.points_r;
        let w = &self.weights_r;
        self.p
            .par_chunks_mut(mr)
            .map(|row| {
                let (mut lost, mut mass) = (0.0, 0.0);
                for (v, wj) in row.iter_mut().zip(w) {
                    if *v < FLUSH {
                        if *v < 0.0 {
                            lost -= *v * wj;
                        }
                        *v = 0.0;
                    }
                    mass += *v * wj;
                }
                (lost, mass)
            })
            .collect::<Vec<_>>()
            .into_iter()
            // ordered sum: results do not depend on the thread count
            .fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1))
    }

    fn diffuse(&mut self, xs: &XSweep, rs: &RSweep) -> (f64, f64) {
        let mr = self.grid.points_r;
        let mx = self.grid.points_x;
        let s = xs.s;
        // x direction, vectorised over r
        {
            let (p, tmp) = (&mut self.p, &mut self.tmp);
            for i in 1..mx - 1 {
                let lower = xs.sys.lower[i - 1];
                let inv = xs.sys.inv_den[i - 1];
                for j in 0..mr {
                    let rhs = s * (p[(i - 1) * mr + j] + p[(i + 1) * mr + j])
                        + (1.0 - 2.0 * s) * p[i * mr + j];
                    let prev = if i > 1 { tmp[(i - 1) * mr + j] } else { 0.0 };
                    tmp[i * mr + j] = (rhs - lower * prev) * inv;
                }
            }
            // the forward pass read p[(i-1)] before it was overwritten, so the
            // back substitution may write p in place
            for j in 0..mr {
                p[(mx - 1) * mr + j] = 0.0;
                p[j] = 0.0;
            }
            for i in (1..mx - 1).rev() {
                let up = xs.sys.upper_prime[i - 1];
                for j in 0..mr {
                    p[i * mr + j] = tmp[i * mr + j] - up * p[(i + 1) * mr + j];
                }
            }
        }
        // r direction, one row at a time
        self.p
            .par_chunks_mut(mr)
            .zip(self.tmp.par_chunks_mut(mr))
            .for_each(|(row, work)| rs.apply(row, work));
        self.clamp()
    }

    fn grow(&mut self, h: f64, delta: f64) -> Result<f64> {
        let mr = self.grid.points_r;
        let gr: Vec<f64> = self.r.iter().map(|r| (-0.5 * h * r * r).exp()).collect();
        let x = &self.x;
        let w = &self.weights_r;
        let mass: f64 = self
            .p
            .par_chunks_mut(mr)
            .enumerate()
            .map(|(i, row)| {
                let gx = (-0.5 * h * (x[i] - delta).powi(2)).exp();
                let mut m = 0.0;
                for ((v, g), wj) in row.iter_mut().zip(&gr).zip(w) {
                    *v *= gx * g;
                    m += *v * wj;
                }
                m
            })
            .collect::<Vec<f64>>()
            .into_iter()
            .sum();
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::StepFailure {
                t: self.t,
                reason: "density mass vanished".into(),
            });
        }
        self.p.par_iter_mut().for_each(|v| *v /= mass);
        Ok(mass)
    }

    /// Largest `h * |m - mbar|` over cells above the support cut-off.
    fn support_cfl(&self, h: f64, delta: f64) -> Result<f64> {
        let (mbar, _, _) = self.moments_at(delta);
        let mr = self.grid.points_r;
        let peak = self.p.iter().cloned().fold(0.0, f64::max);
        let cut = peak * SUPPORT_CUTOFF;
        let mut worst = 0.0f64;
        for (k, &p) in self.p.iter().enumerate() {
            if p > cut {
                let (i, j) = (k / mr, k % mr);
                let m = -0.5 * ((self.x[i] - delta).powi(2) + self.r[j] * self.r[j]);
                worst = worst.max((m - mbar).abs());
            }
        }
        Ok(h * worst)
    }

    fn moments_at(&self, delta: f64) -> (f64, f64, f64) {
        let mr = self.grid.points_r;
        weighted_moments(self.p.iter().enumerate().map(move |(k, &p)| {
            let (i, j) = (k / mr, k % mr);
            let dx1 = self.x[i] - delta;
            (
                p * self.weights_r[j],
                -0.5 * (dx1 * dx1 + self.r[j] * self.r[j]),
            )
        }))
    }

    fn sweeps(&self, tau: f64) -> (XSweep, RSweep) {
        (
            XSweep::new(self.diff, tau, self.grid.dx(), self.grid.points_x),
            RSweep::new(
                self.diff,
                tau,
                &self.r,
                &self.vol,
                &self.faces,
                self.grid.dr(),
            ),
        )
    }

    /// Crank-Nicolson diffusion over a span `tau`, then renormalisation.
    fn diffuse_span(&mut self, tau: f64) -> Result<()> {
        let (lost, mass) = if tau == self.dt {
            let (xs, rs) = self.full.clone();
            self.diffuse(&xs, &rs)
        } else if tau == 0.5 * self.dt {
            let (xs, rs) = self.half.clone();
            self.diffuse(&xs, &rs)
        } else {
            let (xs, rs) = self.sweeps(tau);
            self.diffuse(&xs, &rs)
        };
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::StepFailure {
                t: self.t,
                reason: "density mass vanished".into(),
            });
        }
        self.diag.max_mass_correction = self.diag.max_mass_correction.max((mass - 1.0).abs());
        self.diag.max_clamped_mass = self.diag.max_clamped_mass.max(lost);
        self.p.par_iter_mut().for_each(|v| *v /= mass);
        Ok(())
    }

    fn grow_step(&mut self, h: f64) -> Result<()> {
        let delta = self.traj.delta(self.t + 0.5 * h)?;
        if self.diag.steps.is_multiple_of(64) || h < self.dt {
            let cfl = self.support_cfl(h, delta)?;
            self.diag.max_cfl = self.diag.max_cfl.max(cfl);
            if cfl > CFL_LIMIT {
                return Err(Error::Cfl(format!(
                    "dt * max|m - mbar| = {cfl:.4} > {CFL_LIMIT} at t = {}; reduce dt",
                    self.t
                )));
            }
        }
        self.grow(h, delta)?;
        self.t += h;
        self.diag.steps += 1;
        self.check_edges();
        Ok(())
    }

    /// Advances to time `t` by Strang splitting: half a diffusion step, then
    /// alternating growth and diffusion, closing with half a diffusion step.
    /// Consecutive diffusion halves are merged.
    pub fn advance_to(&mut self, t: f64) -> Result<()> {
        check_horizon(&self.traj, t)?;
        let mut prev = 0.0;
        while self.t < t - 1e-12 * t.max(1.0) {
            let h = self.dt.min(t - self.t);
            self.diffuse_span(0.5 * (prev + h))?;
            self.grow_step(h)?;
            prev = h;
        }
        if prev > 0.0 {
            self.diffuse_span(0.5 * prev)?;
        }
        self.t = self.t.max(t);
        Ok(())
    }

    /// Density matrix with one row per `x1` node and one column per `r` node.
    pub fn write_density_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mr = self.grid.points_r;
        for row in self.p.chunks(mr) {
            w.write_record(row.iter().map(|v| fmt_f64(*v)))
                .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}
