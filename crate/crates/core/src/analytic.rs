//! Closed-form moment dynamics: characteristic curves, the Q integral that
//! solves the CGF transport equation, `H_delta`, and the mean fitness,
//! variance and skewness trajectories built from them.
//!
//! Partials of `Q` are extracted with finite-difference stencils. To keep
//! those stencils well conditioned, `Q` is evaluated internally in offset
//! coordinates `(z, e)` with `e = (z - z~) cosh(mu (z + t)) / cosh(mu z)`: the
//! second characteristic term then stays `O(e)` instead of growing like
//! `e^{mu t}`, and all stencil points of one time share a single set of
//! quadrature nodes.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::{EnvTrajectory, ModelParams};
use crate::error::{Error, Result};
use crate::moments::{check_times, MomentTrajectory, Source};
use crate::numerics::{
    cosh_over_cosh, integrate_vec_l1, ln_cosh, sech, sinh_over_cosh, Order, QuadratureSpec, Stencil,
};

type Cgf = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// A user-supplied initial CGF `C0(z1, z2)` with optional analytic partials.
#[derive(Clone)]
pub struct CustomCgf {
    pub c0: Cgf,
    pub d1: Option<Cgf>,
    pub d2: Option<Cgf>,
}

impl CustomCgf {
    pub fn new(c0: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            c0: Arc::new(c0),
            d1: None,
            d2: None,
        }
    }

    pub fn with_partials(
        mut self,
        d1: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        d2: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.d1 = Some(Arc::new(d1));
        self.d2 = Some(Arc::new(d2));
        self
    }
}

impl fmt::Debug for CustomCgf {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomCgf")
            .field("d1", &self.d1.is_some())
            .field("d2", &self.d2.is_some())
            .finish()
    }
}

/// Step for central differences of a custom `C0` without analytic partials.
const CUSTOM_FD_STEP: f64 = 1e-5;

/// Initial distribution of the fitness components, given by its CGF
/// `C0(z1, z2) = ln E[exp(z1 x1 - z2 |x|^2 / 2)]`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialCondition {
    /// Every individual at the optimum: `C0 = 0`.
    #[default]
    Clonal,
    /// Every individual at one phenotype `x*` with `x*_1 = x1_star` and
    /// `|x*|^2 = norm2_star`.
    Dirac { x1_star: f64, norm2_star: f64 },
    /// `N(a e_1, sigma2 I_n)`.
    IsotropicGaussian { a: f64, sigma2: f64 },
    #[serde(skip)]
    Custom(CustomCgf),
}

impl InitialCondition {
    /// Dirac mass at an explicit phenotype.
    pub fn dirac_at(x: &[f64]) -> Self {
        InitialCondition::Dirac {
            x1_star: x.first().copied().unwrap_or(0.0),
            norm2_star: x.iter().map(|v| v * v).sum(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            InitialCondition::Clonal | InitialCondition::Custom(_) => Ok(()),
            InitialCondition::Dirac {
                x1_star,
                norm2_star,
            } => {
                if !x1_star.is_finite() || !norm2_star.is_finite() {
                    return Err(Error::invalid("init", "Dirac coordinates must be finite"));
                }
                if norm2_star < x1_star * x1_star * (1.0 - 1e-12) {
                    return Err(Error::invalid("norm2_star", "must be >= x1_star^2"));
                }
                Ok(())
            }
            InitialCondition::IsotropicGaussian { a, sigma2 } => {
                if !a.is_finite() {
                    return Err(Error::invalid("a", "must be finite"));
                }
                if !(sigma2 >= 0.0) || !sigma2.is_finite() {
                    return Err(Error::invalid("sigma2", "must be finite and >= 0"));
                }
                Ok(())
            }
        }
    }

    pub fn is_clonal(&self) -> bool {
        matches!(self, InitialCondition::Clonal)
    }

    /// `C0(z1, z2)` in trait dimension `n`.
    pub fn c0(&self, n: usize, z1: f64, z2: f64) -> f64 {
        match self {
            InitialCondition::Clonal => 0.0,
            InitialCondition::Dirac {
                x1_star,
                norm2_star,
            } => z1 * x1_star - 0.5 * z2 * norm2_star,
            InitialCondition::IsotropicGaussian { a, sigma2 } => {
                let d = 1.0 + z2 * sigma2;
                -0.5 * n as f64 * (z2 * sigma2).ln_1p()
                    + (z1 * z1 * sigma2 + 2.0 * a * z1 - z2 * a * a) / (2.0 * d)
            }
            InitialCondition::Custom(c) => (c.c0)(z1, z2),
        }
    }

    /// `(d C0 / d z1, d C0 / d z2)`.
    pub fn grad(&self, n: usize, z1: f64, z2: f64) -> (f64, f64) {
        match self {
            InitialCondition::Clonal => (0.0, 0.0),
            InitialCondition::Dirac {
                x1_star,
                norm2_star,
            } => (*x1_star, -0.5 * norm2_star),
            InitialCondition::IsotropicGaussian { a, sigma2 } => {
                let d = 1.0 + z2 * sigma2;
                let quad = z1 * z1 * sigma2 + 2.0 * a * z1 - z2 * a * a;
                let d1 = (z1 * sigma2 + a) / d;
                let d2 = -0.5 * n as f64 * sigma2 / d
                    - a * a / (2.0 * d)
                    - sigma2 * quad / (2.0 * d * d);
                (d1, d2)
            }
            InitialCondition::Custom(c) => {
                let h = CUSTOM_FD_STEP;
                let d1 = match &c.d1 {
                    Some(f) => f(z1, z2),
                    None => ((c.c0)(z1 + h, z2) - (c.c0)(z1 - h, z2)) / (2.0 * h),
                };
                let d2 = match &c.d2 {
                    Some(f) => f(z1, z2),
                    None => ((c.c0)(z1, z2 + h) - (c.c0)(z1, z2 - h)) / (2.0 * h),
                };
                (d1, d2)
            }
        }
    }

    /// `C0(z1 + dz1, z2 + dz2) - C0(z1, z2)`, exact for the affine variants.
    fn increment(&self, n: usize, z1: f64, z2: f64, dz1: f64, dz2: f64) -> f64 {
        match self {
            InitialCondition::Clonal => 0.0,
            InitialCondition::Dirac {
                x1_star,
                norm2_star,
            } => dz1 * x1_star - 0.5 * dz2 * norm2_star,
            _ => self.c0(n, z1 + dz1, z2 + dz2) - self.c0(n, z1, z2),
        }
    }
}

/// A point `phi_t(z, z~) = (y1, y2)` on a characteristic curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CharacteristicPoint {
    pub y1: f64,
    pub y2: f64,
}

/// `y2(z) = tanh(mu z) / mu`.
pub fn y2(params: &ModelParams, z: f64) -> f64 {
    let mu = params.mu();
    sinh_over_cosh(mu * z, mu * z) / mu
}

/// Partial derivatives of `Q` and `R(t, z) = Q(t, z, z)` at the origin.
/// The two `z~` quantities are divided by `cosh(mu t)`, which is how they
/// enter the moment formulas and keeps them bounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QPartials {
    pub r_z: f64,
    pub r_zz: f64,
    pub r_zzz: f64,
    /// `d_z~ Q / cosh(mu t)`
    pub q_zt: f64,
    /// `(d_z d_z~ Q + d_z~z~ Q - mu tanh(mu t) d_z~ Q) / cosh(mu t)`
    pub q_mixed: f64,
}

/// Stencil step sizes used by [`AnalyticModel::q_partials_with_steps`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StencilSteps {
    pub first: f64,
    pub third: f64,
}

impl Default for StencilSteps {
    fn default() -> Self {
        Self {
            first: Order::First.default_step(0.0),
            third: Order::Third.default_step(0.0),
        }
    }
}

/// Mean fitness, variance and skewness at one time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mbar: f64,
    pub vm: f64,
    pub skew: f64,
}

/// Options for [`AnalyticModel::trajectory`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryOptions {
    /// Also compute `V_m` and `Skew_m` through the stencil path.
    pub higher_moments: bool,
    /// Integrate the population density from this initial value.
    pub rho0: Option<f64>,
    pub rho_floor: f64,
}

impl Default for TrajectoryOptions {
    fn default() -> Self {
        Self {
            higher_moments: true,
            rho0: None,
            rho_floor: DEFAULT_RHO_FLOOR,
        }
    }
}

pub const DEFAULT_RHO_FLOOR: f64 = 1e-12;

/// Relative slack below zero tolerated (and clamped) in a computed variance.
const VARIANCE_SLACK: f64 = 1e-6;

/// The analytic engine for one parameter set, trajectory and initial
/// condition.
#[derive(Debug, Clone)]
pub struct AnalyticModel<'a> {
    params: ModelParams,
    traj: &'a EnvTrajectory,
    init: &'a InitialCondition,
    quad: QuadratureSpec,
}

// Gauss-Legendre 4-point rule on [-1, 1], used segment by segment on
// tabulated paths where delta is only piecewise linear.
const GL4_X: [f64; 4] = [
    -0.861_136_311_594_052_6,
    -0.339_981_043_584_856_3,
    0.339_981_043_584_856_3,
    0.861_136_311_594_052_6,
];
const GL4_W: [f64; 4] = [
    0.347_854_845_137_453_8,
    0.652_145_154_862_546_1,
    0.652_145_154_862_546_1,
    0.347_854_845_137_453_8,
];

/// Above this `mu t` the scaled prefix sums of [`LookBack`] could overflow.
const LOOK_BACK_MAX_MU_T: f64 = 600.0;

/// Widest outer quadrature piece on a tabulated path, in units of `1 / mu`.
const OUTER_PIECE: f64 = 0.02;

/// Smallest step of a one-sided z-stencil.
const ONE_SIDED_STEP: f64 = 5e-3;

/// Prefix sums of `int_0^v delta(t - w) exp(+-mu w) dw` over the nodes of a
/// tabulated path, for one fixed `t`. Turns the look-back integrals of
/// [`AnalyticModel::q_offset`] from a walk over every segment into a search.
struct LookBack<'p> {
    t: f64,
    mu: f64,
    times: &'p [f64],
    values: &'p [f64],
    // look-back distances of the nodes below t, ascending, starting at 0
    v: Vec<f64>,
    // scaled by exp(-mu t)
    plus: Vec<f64>,
    minus: Vec<f64>,
}

impl<'p> LookBack<'p> {
    fn new(times: &'p [f64], values: &'p [f64], t: f64, mu: f64) -> Self {
        let mut lb = Self {
            t,
            mu,
            times,
            values,
            v: vec![0.0],
            plus: vec![0.0],
            minus: vec![0.0],
        };
        let top = times.partition_point(|&x| x < t);
        for i in (0..top).rev() {
            let v = t - times[i];
            let (p, m) = lb.segment(*lb.v.last().unwrap(), v);
            lb.plus.push(lb.plus.last().unwrap() + p);
            lb.minus.push(lb.minus.last().unwrap() + m);
            lb.v.push(v);
        }
        lb
    }

    fn delta(&self, u: f64) -> f64 {
        let i = self
            .times
            .partition_point(|&x| x <= u)
            .clamp(1, self.times.len() - 1)
            - 1;
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        self.values[i] + (self.values[i + 1] - self.values[i]) * (u - t0) / (t1 - t0)
    }

    /// Both scaled integrals over `[a, b]`, inside one linear piece.
    fn segment(&self, a: f64, b: f64) -> (f64, f64) {
        let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
        let (mut p, mut m) = (0.0, 0.0);
        for (x, wq) in GL4_X.iter().zip(GL4_W) {
            let w = mid + half * x;
            let d = self.delta(self.t - w);
            p += half * wq * d * (self.mu * (w - self.t)).exp();
            m += half * wq * d * (-self.mu * w).exp();
        }
        (p, m)
    }

    /// `int_0^t f(s) ds` for an integrand that is smooth between the
    /// look-back distances of the nodes: Gauss-Legendre on pieces no wider
    /// than `OUTER_PIECE / mu`.
    fn outer(
        &self,
        dim: usize,
        mut f: impl FnMut(f64, &mut [f64]) -> Result<()>,
    ) -> Result<Vec<f64>> {
        let mut total = vec![0.0; dim];
        let mut vals = vec![0.0; dim];
        let ends = self.v.iter().copied().chain(std::iter::once(self.t));
        for (a, b) in self.v.iter().copied().zip(ends.skip(1)) {
            if b <= a {
                continue;
            }
            let pieces = (self.mu * (b - a) / OUTER_PIECE).ceil().max(1.0);
            let w = (b - a) / pieces;
            for j in 0..pieces as usize {
                let mid = a + (j as f64 + 0.5) * w;
                for (x, wq) in GL4_X.iter().zip(GL4_W) {
                    f(mid + 0.5 * w * x, &mut vals)?;
                    for (acc, v) in total.iter_mut().zip(&vals) {
                        *acc += 0.5 * w * wq * v;
                    }
                }
            }
        }
        Ok(total)
    }

    /// `int_{t-s}^t delta(u) [cosh, sinh](mu (t - u)) du / cosh(mu s)`.
    fn integrals(&self, s: f64) -> (f64, f64) {
        let s = s.min(self.t);
        let k = self.v.partition_point(|&x| x <= s) - 1;
        let (dp, dm) = self.segment(self.v[k], s);
        let (p, m) = (self.plus[k] + dp, self.minus[k] + dm);
        let den = 1.0 + (-2.0 * self.mu * s).exp();
        let a = p * (self.mu * (self.t - s)).exp() / den;
        let b = m * (-self.mu * s).exp() / den;
        (a + b, a - b)
    }
}

impl<'a> AnalyticModel<'a> {
    pub fn new(
        params: ModelParams,
        traj: &'a EnvTrajectory,
        init: &'a InitialCondition,
    ) -> Result<Self> {
        params.validate()?;
        traj.validate()?;
        init.validate()?;
        Ok(Self {
            params,
            traj,
            init,
            quad: QuadratureSpec::default(),
        })
    }

    pub fn with_quadrature(mut self, quad: QuadratureSpec) -> Result<Self> {
        quad.validate()?;
        self.quad = quad;
        Ok(self)
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn trajectory_spec(&self) -> &EnvTrajectory {
        self.traj
    }

    fn mu(&self) -> f64 {
        self.params.mu()
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::Domain(format!(
                "time must be finite and >= 0, got {t}"
            )));
        }
        if let Some(h) = self.traj.horizon() {
            if t > h {
                return Err(Error::OutOfHorizon { t, horizon: h });
            }
        }
        Ok(())
    }

    /// `int_lo^hi delta(u) w_k(u) du` for `D` weights at once; `delta` is
    /// taken as 0 for `u < 0`.
    fn delta_integrals<const D: usize>(
        &self,
        lo: f64,
        hi: f64,
        w: impl Fn(f64) -> [f64; D],
    ) -> Result<[f64; D]> {
        let mut out = [0.0; D];
        let lo = lo.max(0.0);
        if hi <= lo {
            return Ok(out);
        }
        match self.traj {
            EnvTrajectory::Tabulated(path) => {
                let (times, values) = (path.times(), path.values());
                let horizon = path.horizon();
                if hi > horizon * (1.0 + 1e-12) {
                    return Err(Error::OutOfHorizon { t: hi, horizon });
                }
                let hi = hi.min(horizon);
                let mut i = times.partition_point(|&x| x <= lo).saturating_sub(1);
                while i + 1 < times.len() && times[i] < hi {
                    let (t0, t1) = (times[i], times[i + 1]);
                    let a = lo.max(t0);
                    let b = hi.min(t1);
                    if b > a {
                        let slope = (values[i + 1] - values[i]) / (t1 - t0);
                        let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
                        for (x, wq) in GL4_X.iter().zip(GL4_W) {
                            let u = mid + half * x;
                            let d = values[i] + slope * (u - t0);
                            let ww = w(u);
                            for k in 0..D {
                                out[k] += half * wq * d * ww[k];
                            }
                        }
                    }
                    i += 1;
                }
                Ok(out)
            }
            traj => {
                let v = integrate_vec_l1(
                    |u, o| {
                        let d = traj.delta_ext(u)?;
                        let ww = w(u);
                        for k in 0..D {
                            o[k] = d * ww[k];
                        }
                        Ok(())
                    },
                    D,
                    lo,
                    hi,
                    &self.quad,
                )?;
                out.copy_from_slice(&v);
                Ok(out)
            }
        }
    }

    /// `H_delta(t) = mu int_0^t delta(u) sinh(mu u) / cosh(mu t) du`.
    pub fn h_delta(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        let mu = self.mu();
        let [h] = self.delta_integrals(0.0, t, |u| [mu * sinh_over_cosh(mu * u, mu * t)])?;
        Ok(h)
    }

    /// `H_delta(t)` and `y1(0, t, t) = int_0^t delta(t - s) cosh(mu s) / cosh(mu t) ds`.
    fn h_and_y1_diag(&self, t: f64) -> Result<(f64, f64)> {
        let mu = self.mu();
        let [h, y] = self.delta_integrals(0.0, t, |u| {
            [
                mu * sinh_over_cosh(mu * u, mu * t),
                cosh_over_cosh(mu * (t - u), mu * t),
            ]
        })?;
        Ok((h, y))
    }

    /// `int_0^z delta(z + t - s) cosh(mu s) / cosh(mu z) ds`, oriented, so
    /// negative `z` (used by stencils) is allowed.
    fn y1_integral(&self, t: f64, z: f64) -> Result<f64> {
        if z == 0.0 {
            return Ok(0.0);
        }
        let mu = self.mu();
        let (lo, hi) = if z > 0.0 { (t, t + z) } else { (t + z, t) };
        let [v] = self.delta_integrals(lo, hi, |u| [cosh_over_cosh(mu * (t + z - u), mu * z)])?;
        Ok(if z > 0.0 { v } else { -v })
    }

    /// First characteristic coordinate `y1(t, z, z~)`.
    pub fn y1(&self, t: f64, z: f64, z_tilde: f64) -> Result<f64> {
        self.check_time(t)?;
        if z < 0.0 || z_tilde < 0.0 {
            return Err(Error::Domain(format!(
                "y1 requires z, z~ >= 0, got ({z}, {z_tilde})"
            )));
        }
        self.check_time(t + z)?;
        let mu = self.mu();
        let integral = self.y1_integral(t, z)?;
        Ok(integral + scaled_offset(z - z_tilde, mu, t, z))
    }

    /// `phi_t(z, z~) = (y1(t, z, z~), y2(z))`.
    pub fn phi(&self, t: f64, z: f64, z_tilde: f64) -> Result<CharacteristicPoint> {
        Ok(CharacteristicPoint {
            y1: self.y1(t, z, z_tilde)?,
            y2: y2(&self.params, z),
        })
    }

    /// `Q(t, z, z~)`, the solution of the CGF transport equation along
    /// characteristics.
    pub fn q_eval(&self, t: f64, z: f64, z_tilde: f64) -> Result<f64> {
        self.check_time(t)?;
        if z < 0.0 || z_tilde < 0.0 {
            return Err(Error::Domain(format!(
                "q_eval requires z, z~ >= 0, got ({z}, {z_tilde})"
            )));
        }
        self.check_time(t + z)?;
        let e = scaled_offset(z - z_tilde, self.mu(), t, z);
        if !e.is_finite() {
            return Err(Error::Domain(format!(
                "q_eval: offset coordinate overflows at t = {t}, z = {z}, z~ = {z_tilde}"
            )));
        }
        Ok(self.q_offset(t, &[(z, e)])?[0])
    }

    /// `Q` at several points given in offset coordinates `(z, e)` with
    /// `e = (z - z~) cosh(mu (z + t)) / cosh(mu z)`. All points share one set
    /// of quadrature nodes. `z` may be slightly negative (stencil use).
    pub fn q_offset(&self, t: f64, points: &[(f64, f64)]) -> Result<Vec<f64>> {
        self.check_time(t)?;
        let mu = self.mu();
        let n = self.params.n as f64;
        let zmax = points.iter().fold(0.0f64, |m, p| m.max(p.0));
        self.check_time(t + zmax)?;

        // Constant part of the first coordinate at s = t, per point.
        let j: Vec<f64> = points
            .iter()
            .map(|&(z, e)| Ok(self.y1_integral(t, z)? + e))
            .collect::<Result<_>>()?;
        let coeffs = |s: f64, k: usize| -> (f64, f64, f64, f64) {
            let a = mu * points[k].0;
            let b = mu * s;
            let (k_ss, k_sc) = if a >= 0.0 {
                let den = 2.0 * (1.0 + (-2.0 * (a + b)).exp());
                let sa = -(-2.0 * a).exp_m1();
                (
                    sa * -(-2.0 * b).exp_m1() / den,
                    sa * (1.0 + (-2.0 * b).exp()) / den,
                )
            } else {
                (
                    a.sinh() * sinh_over_cosh(b, a + b),
                    a.sinh() * cosh_over_cosh(b, a + b),
                )
            };
            let k_c = cosh_over_cosh(a, a + b);
            let dy2 = sinh_over_cosh(a, a + b) * sech(b) / mu;
            (k_ss, k_sc, k_c, dy2)
        };
        // Displacement of the first coordinate relative to the (0, 0) curve.
        let shift = |s: f64, k: usize, ic: f64, is: f64| -> (f64, f64) {
            let (k_ss, k_sc, k_c, dy2) = coeffs(s, k);
            (-k_ss * ic + k_sc * is + k_c * j[k], dy2)
        };
        let look_back = match self.traj {
            EnvTrajectory::Tabulated(p) if mu * t < LOOK_BACK_MAX_MU_T && t <= p.horizon() => {
                Some(LookBack::new(p.times(), p.values(), t, mu))
            }
            _ => None,
        };
        let inner = |s: f64| -> Result<(f64, f64)> {
            if let Some(lb) = &look_back {
                return Ok(lb.integrals(s));
            }
            let [ic, is] = self.delta_integrals(t - s, t, |u| {
                let v = mu * (t - u);
                [cosh_over_cosh(v, mu * s), sinh_over_cosh(v, mu * s)]
            })?;
            Ok((ic, is))
        };

        let integrand = |s: f64, out: &mut [f64]| -> Result<()> {
            let (ic, is) = inner(s)?;
            for (k, o) in out.iter_mut().enumerate() {
                let (d, dy2) = shift(s, k, ic, is);
                *o = mu * mu * (d * (ic + 0.5 * d) - 0.5 * n * dy2);
            }
            Ok(())
        };
        let mut q = match &look_back {
            Some(lb) => lb.outer(points.len(), integrand)?,
            None => integrate_vec_l1(integrand, points.len(), 0.0, t, &self.quad)?,
        };

        if !self.init.is_clonal() {
            let (ic, is) = inner(t)?;
            let y2t = y2(&self.params, t);
            for (k, qk) in q.iter_mut().enumerate() {
                let (d, dy2) = shift(t, k, ic, is);
                *qk += self.init.increment(self.params.n, ic, y2t, d, dy2);
            }
        }
        for (qk, &(z, e)) in q.iter_mut().zip(points) {
            if z == 0.0 && e == 0.0 {
                *qk = 0.0;
            }
        }
        Ok(q)
    }

    /// Stencil-extracted partials of `Q` at `(t, 0, 0)` with default steps.
    pub fn q_partials(&self, t: f64) -> Result<QPartials> {
        self.q_partials_with_steps(t, StencilSteps::default())
    }

    pub fn q_partials_with_steps(&self, t: f64, steps: StencilSteps) -> Result<QPartials> {
        let s1 = self.z_stencil(t, Order::First, steps.first)?;
        let s2 = self.z_stencil(t, Order::Second, steps.first)?;
        let s3 = self.z_stencil(t, Order::Third, steps.third)?;
        // the offset coordinate does not move along the time axis
        let se = Stencil::new(Order::First, steps.first)?;
        let mut pts: Vec<(f64, f64)> = Vec::with_capacity(40);
        pts.extend(s1.offsets.iter().map(|&z| (z, 0.0)));
        pts.extend(s2.offsets.iter().map(|&z| (z, 0.0)));
        pts.extend(s3.offsets.iter().map(|&z| (z, 0.0)));
        pts.extend(se.offsets.iter().map(|&e| (0.0, e)));
        for &z in &s1.offsets {
            pts.extend(se.offsets.iter().map(|&e| (z, e)));
        }
        let v = self.q_offset(t, &pts)?;
        let (n1, n2, n3, ne) = (
            s1.offsets.len(),
            s2.offsets.len(),
            s3.offsets.len(),
            se.offsets.len(),
        );
        let mut at = 0;
        let mut take = |len: usize| {
            let out = &v[at..at + len];
            at += len;
            out
        };
        let r_z = s1.apply(take(n1));
        let r_zz = s2.apply(take(n2));
        let r_zzz = s3.apply(take(n3));
        let k_e = se.apply(take(ne));
        let rows: Vec<f64> = (0..n1).map(|_| se.apply(take(ne))).collect();
        let k_ze = s1.apply(&rows);
        Ok(QPartials {
            r_z,
            r_zz,
            r_zzz,
            q_zt: -k_e,
            q_mixed: -k_ze,
        })
    }

    /// A stencil in `z` whose time footprint `[t - reach, t + reach]` stays on
    /// one smooth piece of `delta`: central where it fits, one-sided near
    /// `t = 0` and near the nodes of a tabulated path.
    fn z_stencil(&self, t: f64, order: Order, h: f64) -> Result<Stencil> {
        let (lo, hi) = match self.traj {
            EnvTrajectory::Tabulated(p) => p.piece(t)?,
            _ => (0.0, f64::INFINITY),
        };
        let mut h = h;
        // one-sided weights amplify quadrature noise far more than central
        // ones, so they need the larger step
        let mut h1 = h.max(ONE_SIDED_STEP);
        while h1 > 1e-12 {
            let c = Stencil::new(order, h)?;
            if t - c.reach() >= lo && t + c.reach() <= hi {
                return Ok(c);
            }
            let f = Stencil::one_sided(order, h1, true)?;
            if t + f.reach() <= hi {
                return Ok(f);
            }
            let b = Stencil::one_sided(order, h1, false)?;
            if t - b.reach() >= lo {
                return Ok(b);
            }
            h *= 0.5;
            h1 *= 0.5;
        }
        Err(Error::Domain(format!(
            "no stencil fits the trajectory piece around t = {t}"
        )))
    }

    /// Mean fitness `-mu n/2 tanh(mu t) - (H_delta - delta)^2 / 2 + R0'(t)`.
    pub fn mbar(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        let mu = self.mu();
        let n = self.params.n as f64;
        let delta = self.traj.delta(t)?;
        let base = -mu * 0.5 * n * sinh_over_cosh(mu * t, mu * t);
        if self.init.is_clonal() {
            let h = self.h_delta(t)?;
            return Ok(base - 0.5 * (h - delta).powi(2));
        }
        let (h, y1d) = self.h_and_y1_diag(t)?;
        Ok(base - 0.5 * (h - delta).powi(2) + self.r0_prime_with(t, delta, h, y1d))
    }

    /// Mean fitness for a clonal population at the optimum under the same
    /// trajectory.
    pub fn mbar_clonal(&self, t: f64) -> Result<f64> {
        let clonal = InitialCondition::Clonal;
        AnalyticModel {
            init: &clonal,
            ..self.clone()
        }
        .mbar(t)
    }

    /// Contribution `R0'(t)` of the initial condition to the mean fitness.
    pub fn r0_prime(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        if self.init.is_clonal() {
            return Ok(0.0);
        }
        let delta = self.traj.delta(t)?;
        let (h, y1d) = self.h_and_y1_diag(t)?;
        Ok(self.r0_prime_with(t, delta, h, y1d))
    }

    fn r0_prime_with(&self, t: f64, delta: f64, h: f64, y1d: f64) -> f64 {
        let mu = self.mu();
        let (d1, d2) = self.init.grad(self.params.n, y1d, y2(&self.params, t));
        let sc = sech(mu * t);
        (delta - h) * sc * d1 + sc * sc * d2
    }

    /// Mean fitness through the transport solution, `d_z R(t, 0) - delta^2 / 2`.
    pub fn mbar_from_q(&self, t: f64) -> Result<f64> {
        let p = self.q_partials(t)?;
        Ok(p.r_z - 0.5 * self.traj.delta(t)?.powi(2))
    }

    /// Mean fitness, variance and skewness from one stencil batch. The
    /// skewness is `NaN` where the variance vanishes.
    pub fn moments(&self, t: f64) -> Result<Moments> {
        let p = self.q_partials(t)?;
        let vm = self.variance_from(t, &p)?;
        let skew = match self.skewness_from(t, &p, vm) {
            Ok(s) => s,
            Err(Error::ZeroVariance { .. }) => f64::NAN,
            Err(e) => return Err(e),
        };
        Ok(Moments {
            mbar: self.mbar(t)?,
            vm,
            skew,
        })
    }

    /// Fitness variance `d_zz R(t, 0) + delta'(t) d_z~ Q(t, 0, 0) / cosh(mu t)`.
    pub fn variance(&self, t: f64) -> Result<f64> {
        let p = self.q_partials(t)?;
        self.variance_from(t, &p)
    }

    fn variance_tolerance(&self) -> f64 {
        let mu = self.mu();
        VARIANCE_SLACK * mu * mu * self.params.n as f64 / 2.0
    }

    fn variance_from(&self, t: f64, p: &QPartials) -> Result<f64> {
        let v = p.r_zz + self.traj.delta_prime(t)? * p.q_zt;
        if v >= 0.0 {
            Ok(v)
        } else if v >= -self.variance_tolerance() {
            if v < -1e-300 {
                log::warn!("clamping slightly negative fitness variance {v:e} at t = {t}");
            }
            Ok(0.0)
        } else {
            Err(Error::NegativeVariance { t, value: v })
        }
    }

    /// Fitness skewness from the third cumulant of fitness.
    pub fn skewness(&self, t: f64) -> Result<f64> {
        let p = self.q_partials(t)?;
        let vm = self.variance_from(t, &p)?;
        self.skewness_from(t, &p, vm)
    }

    fn skewness_from(&self, t: f64, p: &QPartials, vm: f64) -> Result<f64> {
        if vm <= self.variance_tolerance() {
            return Err(Error::ZeroVariance { t });
        }
        let mu = self.mu();
        let third = p.r_zzz
            + 2.0 * mu * mu * p.r_z
            + self.traj.delta_second(t)? * p.q_zt
            + 3.0 * self.traj.delta_prime(t)? * p.q_mixed;
        Ok(third / vm.powf(1.5))
    }

    /// Moments over a time grid, evaluated in parallel. Each point goes
    /// through the same code as the pointwise methods.
    pub fn trajectory(&self, times: &[f64], opts: &TrajectoryOptions) -> Result<MomentTrajectory> {
        check_times(times)?;
        if let Some(&last) = times.last() {
            self.check_time(last)?;
        }
        let rows: Vec<(f64, f64, f64)> = times
            .par_iter()
            .map(|&t| {
                if opts.higher_moments {
                    let m = self.moments(t)?;
                    Ok((m.mbar, m.vm, m.skew))
                } else {
                    Ok((self.mbar(t)?, f64::NAN, f64::NAN))
                }
            })
            .collect::<Result<_>>()?;
        let mut out = MomentTrajectory::new(
            times.to_vec(),
            rows.iter().map(|r| r.0).collect(),
            rows.iter().map(|r| r.1).collect(),
            rows.iter().map(|r| r.2).collect(),
            Source::Analytic,
        )?;
        if let Some(rho0) = opts.rho0 {
            out.rho = Some(self.persistence_rho(times, rho0, opts.rho_floor)?.rho);
        }
        Ok(out)
    }

    /// Population density under `rho' = rho (r_max + mbar(t) - rho)`.
    pub fn persistence_rho(&self, times: &[f64], rho0: f64, floor: f64) -> Result<RhoSeries> {
        let r_max = self.params.r_max;
        integrate_logistic(times, rho0, floor, |t| Ok(r_max + self.mbar(t)?))
    }
}

/// `x cosh(mu (z + t)) / cosh(mu z)` without overflow.
fn scaled_offset(x: f64, mu: f64, t: f64, z: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    x.signum() * (x.abs().ln() + ln_cosh(mu * (z + t)) - ln_cosh(mu * z)).exp()
}

/// Output of [`integrate_logistic`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoSeries {
    pub times: Vec<f64>,
    pub rho: Vec<f64>,
    /// First grid time at which `rho` fell below the floor.
    pub extinct_at: Option<f64>,
}

impl RhoSeries {
    pub fn extinct(&self) -> bool {
        self.extinct_at.is_some()
    }
}

/// Classical RK4 for `rho' = rho (rbar(t) - rho)` on the supplied grid.
pub fn integrate_logistic<F>(times: &[f64], rho0: f64, floor: f64, mut rbar: F) -> Result<RhoSeries>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !(rho0 > 0.0) || !rho0.is_finite() {
        return Err(Error::invalid("rho0", "must be finite and > 0"));
    }
    if !(floor >= 0.0) {
        return Err(Error::invalid("rho_floor", "must be >= 0"));
    }
    check_times(times)?;
    let mut rho = Vec::with_capacity(times.len());
    let mut extinct_at = None;
    let Some(&t0) = times.first() else {
        return Ok(RhoSeries {
            times: vec![],
            rho,
            extinct_at,
        });
    };
    let mut y = rho0;
    let mut r_prev = rbar(t0)?;
    rho.push(y);
    if y < floor {
        extinct_at = Some(t0);
    }
    for w in times.windows(2) {
        let (t, h) = (w[0], w[1] - w[0]);
        let r_mid = rbar(t + 0.5 * h)?;
        let r_next = rbar(w[1])?;
        let f = |r: f64, y: f64| y * (r - y);
        let k1 = f(r_prev, y);
        let k2 = f(r_mid, y + 0.5 * h * k1);
        let k3 = f(r_mid, y + 0.5 * h * k2);
        let k4 = f(r_next, y + h * k3);
        y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if !(y >= 0.0) {
            return Err(Error::StepFailure {
                t: w[1],
                reason: format!("density became {y}; refine the time grid"),
            });
        }
        if y < floor && extinct_at.is_none() {
            extinct_at = Some(w[1]);
        }
        rho.push(y);
        r_prev = r_next;
    }
    Ok(RhoSeries {
        times: times.to_vec(),
        rho,
        extinct_at,
    })
}

/// A limit that may diverge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Limit {
    Finite(f64),
    NegInfinity,
    PosInfinity,
}

impl Limit {
    pub fn finite(self) -> Option<f64> {
        match self {
            Limit::Finite(v) => Some(v),
            _ => None,
        }
    }
}

/// Long-time behaviour of the moments for a closed-form trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AsymptoticSummary {
    Linear {
        mbar_inf: f64,
        vm_inf: f64,
        skew_inf: f64,
        /// Mutation parameter maximizing `mbar_inf`.
        mu_star: f64,
    },
    Power {
        mbar_inf: Limit,
        vm_inf: Limit,
        unbounded: bool,
    },
    Periodic {
        mean_over_period: f64,
        period: f64,
    },
}

impl AsymptoticSummary {
    /// `mbar_inf` for non-oscillating trajectories, the period average
    /// otherwise; `None` when it diverges.
    pub fn long_run_mbar(&self) -> Option<f64> {
        match *self {
            AsymptoticSummary::Linear { mbar_inf, .. } => Some(mbar_inf),
            AsymptoticSummary::Power { mbar_inf, .. } => mbar_inf.finite(),
            AsymptoticSummary::Periodic {
                mean_over_period, ..
            } => Some(mean_over_period),
        }
    }

    pub fn vm_inf(&self) -> Option<f64> {
        match *self {
            AsymptoticSummary::Linear { vm_inf, .. } => Some(vm_inf),
            AsymptoticSummary::Power { vm_inf, .. } => vm_inf.finite(),
            AsymptoticSummary::Periodic { .. } => None,
        }
    }
}

/// Long-time limits of the moments.
pub fn asymptotic_summary(params: &ModelParams, traj: &EnvTrajectory) -> Result<AsymptoticSummary> {
    params.validate()?;
    traj.validate()?;
    let mu = params.mu();
    let n = params.n as f64;
    let load = -0.5 * mu * n;
    let fluct = |dm: f64, w: f64| dm * dm * w * w / (4.0 * w * w + 4.0 * mu * mu);
    Ok(match *traj {
        EnvTrajectory::Linear { c } => {
            let vm_inf = mu * mu * n / 2.0 + c * c / mu;
            AsymptoticSummary::Linear {
                mbar_inf: load - c * c / (2.0 * mu * mu),
                vm_inf,
                skew_inf: -(mu.powi(3) * n + 3.0 * c * c) / vm_inf.powf(1.5),
                mu_star: (2.0 * c * c / n).cbrt(),
            }
        }
        EnvTrajectory::Power { c, alpha } => {
            if alpha < 1.0 || c == 0.0 {
                AsymptoticSummary::Power {
                    mbar_inf: Limit::Finite(load),
                    vm_inf: Limit::Finite(mu * mu * n / 2.0),
                    unbounded: false,
                }
            } else {
                AsymptoticSummary::Power {
                    mbar_inf: Limit::NegInfinity,
                    vm_inf: Limit::PosInfinity,
                    unbounded: true,
                }
            }
        }
        EnvTrajectory::Sin { delta_max, omega } => AsymptoticSummary::Periodic {
            mean_over_period: load - fluct(delta_max, omega),
            period: std::f64::consts::PI / omega,
        },
        EnvTrajectory::SinSq { delta_max, omega } => AsymptoticSummary::Periodic {
            mean_over_period: load
                - delta_max * delta_max * omega * omega / (16.0 * omega * omega + 4.0 * mu * mu),
            period: std::f64::consts::PI / omega,
        },
        EnvTrajectory::LinearPlusSin {
            c,
            delta_max,
            omega,
        } => AsymptoticSummary::Periodic {
            mean_over_period: load - c * c / (2.0 * mu * mu) - fluct(delta_max, omega),
            period: 2.0 * std::f64::consts::PI / omega,
        },
        EnvTrajectory::Tabulated(_) => return Err(Error::UnsupportedVariant("asymptotic_summary")),
    })
}

/// Critical speed of a steadily moving optimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalSpeed {
    pub c_star: f64,
    /// The population cannot persist even in a static environment.
    pub never_persists: bool,
}

/// `c* = mu sqrt(2 r_max - mu n)`.
pub fn critical_speed(params: &ModelParams) -> CriticalSpeed {
    critical_speed_with_fluctuations(params, 0.0, 0.0)
}

/// Critical shifting speed when the optimum also oscillates with amplitude
/// `delta_max` and angular frequency `omega`.
pub fn critical_speed_with_fluctuations(
    params: &ModelParams,
    delta_max: f64,
    omega: f64,
) -> CriticalSpeed {
    let mu = params.mu();
    let fluct = if delta_max == 0.0 {
        0.0
    } else {
        delta_max * delta_max * omega * omega / (2.0 * omega * omega + 2.0 * mu * mu)
    };
    let radicand = 2.0 * params.r_max - mu * params.n as f64 - fluct;
    if radicand >= 0.0 {
        CriticalSpeed {
            c_star: mu * radicand.sqrt(),
            never_persists: false,
        }
    } else {
        CriticalSpeed {
            c_star: 0.0,
            never_persists: true,
        }
    }
}

#[cfg(test)]
mod tests;
