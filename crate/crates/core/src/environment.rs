//! Optimum trajectories `delta(t)` along the fixed direction `u = e_1`, and
//! the model parameters shared by every engine.

use std::io::{Read, Write};
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::RngStream;

/// Fisher geometrical model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Trait-space dimension.
    pub n: usize,
    /// Mutational variance per trait.
    pub lambda: f64,
    /// Mutation rate per capita per generation.
    #[serde(rename = "U")]
    pub u: f64,
    /// Growth rate of the optimal phenotype.
    pub r_max: f64,
}

impl ModelParams {
    pub fn new(n: usize, lambda: f64, u: f64, r_max: f64) -> Result<Self> {
        let p = Self {
            n,
            lambda,
            u,
            r_max,
        };
        p.validate()?;
        Ok(p)
    }

    /// Parameters with `U` chosen so that `sqrt(U lambda) = mu`.
    pub fn with_mu(n: usize, lambda: f64, mu: f64, r_max: f64) -> Result<Self> {
        if !(mu > 0.0) {
            return Err(Error::invalid("mu", "must be > 0"));
        }
        Self::new(n, lambda, mu * mu / lambda, r_max)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("n", "dimension must be a positive integer"));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda", "must be > 0"));
        }
        if !(self.u > 0.0 && self.u.is_finite()) {
            return Err(Error::invalid("U", "must be > 0"));
        }
        if !(self.r_max >= 0.0) {
            return Err(Error::invalid("r_max", "must be >= 0"));
        }
        Ok(())
    }

    /// Mutation parameter `sqrt(U lambda)`.
    pub fn mu(&self) -> f64 {
        (self.u * self.lambda).sqrt()
    }

    /// Threshold `n^2 lambda / 4` above which the diffusion approximation applies.
    pub fn u_c(&self) -> f64 {
        (self.n * self.n) as f64 * self.lambda / 4.0
    }

    /// Equilibrium mutation load `-mu n / 2`.
    pub fn mutation_load(&self) -> f64 {
        -self.mu() * self.n as f64 / 2.0
    }
}

/// A piecewise-linear optimum path on strictly increasing nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabulatedPath {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl TabulatedPath {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::invalid("times", "times and values differ in length"));
        }
        if times.len() < 2 {
            return Err(Error::invalid("times", "at least two nodes are required"));
        }
        if times[0] != 0.0 {
            return Err(Error::invalid("times", "the first node must be t = 0"));
        }
        if values[0] != 0.0 {
            return Err(Error::invalid("values", "delta(0) must be 0"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("times", "must be strictly increasing"));
        }
        if times.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::invalid("values", "must be finite"));
        }
        Ok(Self { times, values })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    fn segment(&self, t: f64) -> Result<usize> {
        if !(t >= 0.0) || t > self.horizon() {
            return Err(Error::OutOfHorizon {
                t,
                horizon: self.horizon(),
            });
        }
        // index i with times[i] <= t <= times[i+1]
        let i = self.times.partition_point(|&x| x <= t);
        Ok(i.clamp(1, self.times.len() - 1) - 1)
    }

    /// End points of the linear piece containing `t` (the right-hand piece
    /// at a node).
    pub fn piece(&self, t: f64) -> Result<(f64, f64)> {
        let i = self.segment(t)?;
        Ok((self.times[i], self.times[i + 1]))
    }

    pub fn eval(&self, t: f64) -> Result<f64> {
        let i = self.segment(t)?;
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let (v0, v1) = (self.values[i], self.values[i + 1]);
        Ok(v0 + (v1 - v0) * (t - t0) / (t1 - t0))
    }

    pub fn slope(&self, t: f64) -> Result<f64> {
        let i = self.segment(t)?;
        Ok((self.values[i + 1] - self.values[i]) / (self.times[i + 1] - self.times[i]))
    }

    /// Read a two-column `t,delta` CSV with header.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(reader);
        let headers = rdr.headers().map_err(csv_err)?.clone();
        if headers.len() != 2 || &headers[0] != "t" || &headers[1] != "delta" {
            return Err(Error::invalid("csv", "header must be `t,delta`"));
        }
        let (mut times, mut values) = (Vec::new(), Vec::new());
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::invalid("csv", format!("row {}: {e}", line + 2)))
            };
            times.push(parse(&rec[0])?);
            values.push(parse(&rec[1])?);
        }
        Self::new(times, values)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "delta"]).map_err(csv_err)?;
        for (t, v) in self.times.iter().zip(&self.values) {
            w.write_record([fmt_f64(*t), fmt_f64(*v)])
                .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::invalid("csv", format!("{other:?}")),
    }
}

/// Round-trippable float formatting used by every CSV writer.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Parameters of an Ornstein-Uhlenbeck optimum, realized by Euler-Maruyama.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuSpec {
    pub nu: f64,
    pub beta_noise: f64,
    pub dt: f64,
    pub horizon: f64,
    pub stream: RngStream,
}

/// The optimum trajectory `delta(t)`, with `delta(0) = 0` for every variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvTrajectory {
    /// `c t`
    Linear { c: f64 },
    /// `c t^alpha`, `alpha > 0`, `alpha != 1`
    Power { c: f64, alpha: f64 },
    /// `delta_max sin(omega t)`
    Sin { delta_max: f64, omega: f64 },
    /// `delta_max sin^2(omega t)`
    SinSq { delta_max: f64, omega: f64 },
    /// `c t + delta_max sin(omega t)`
    LinearPlusSin { c: f64, delta_max: f64, omega: f64 },
    /// Piecewise-linear path.
    Tabulated(TabulatedPath),
}

impl EnvTrajectory {
    /// The static optimum, `delta = 0`.
    pub fn steady() -> Self {
        EnvTrajectory::Linear { c: 0.0 }
    }

    pub fn power(c: f64, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(Error::invalid("alpha", "must be > 0"));
        }
        if alpha == 1.0 {
            return Err(Error::invalid(
                "alpha",
                "alpha = 1 must be expressed as a linear trajectory",
            ));
        }
        Ok(EnvTrajectory::Power { c, alpha })
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |field: &'static str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(field, "must be finite"))
            }
        };
        match *self {
            EnvTrajectory::Linear { c } => finite("c", c),
            EnvTrajectory::Power { c, alpha } => {
                finite("c", c)?;
                Self::power(c, alpha).map(|_| ())
            }
            EnvTrajectory::Sin { delta_max, omega } | EnvTrajectory::SinSq { delta_max, omega } => {
                finite("delta_max", delta_max)?;
                if !(omega > 0.0 && omega.is_finite()) {
                    return Err(Error::invalid("omega", "must be > 0"));
                }
                Ok(())
            }
            EnvTrajectory::LinearPlusSin {
                c,
                delta_max,
                omega,
            } => {
                finite("c", c)?;
                EnvTrajectory::Sin { delta_max, omega }.validate()
            }
            EnvTrajectory::Tabulated(ref p) => {
                TabulatedPath::new(p.times.clone(), p.values.clone()).map(|_| ())
            }
        }
    }

    /// Realize one Ornstein-Uhlenbeck path
    /// `d_{k+1} = d_k - nu d_k dt + beta sqrt(dt) xi_k`, `d_0 = 0`, on nodes
    /// `k dt` covering `[0, horizon]`.
    pub fn realize_ou(spec: &OuSpec) -> Result<Self> {
        let OuSpec {
            nu,
            beta_noise,
            dt,
            horizon,
            stream,
        } = *spec;
        if !(nu >= 0.0) {
            return Err(Error::invalid("nu", "must be >= 0"));
        }
        if !(beta_noise >= 0.0) {
            return Err(Error::invalid("beta_noise", "must be >= 0"));
        }
        if !(dt > 0.0 && dt <= horizon && horizon.is_finite()) {
            return Err(Error::invalid("dt", "need 0 < dt <= horizon"));
        }
        let steps = (horizon / dt - 1e-9).ceil() as usize;
        let mut rng = stream.rng();
        let sd = beta_noise * dt.sqrt();
        let mut times = Vec::with_capacity(steps + 1);
        let mut values = Vec::with_capacity(steps + 1);
        let mut d = 0.0f64;
        times.push(0.0);
        values.push(0.0);
        for k in 1..=steps {
            let xi: f64 = StandardNormal.sample(&mut rng);
            d = d - nu * d * dt + sd * xi;
            times.push(k as f64 * dt);
            values.push(d);
        }
        Ok(EnvTrajectory::Tabulated(TabulatedPath::new(times, values)?))
    }

    /// Last time at which the trajectory is defined (`None` for closed forms).
    pub fn horizon(&self) -> Option<f64> {
        match self {
            EnvTrajectory::Tabulated(p) => Some(p.horizon()),
            _ => None,
        }
    }

    pub fn is_closed_form(&self) -> bool {
        !matches!(self, EnvTrajectory::Tabulated(_))
    }

    fn check_time(t: f64) -> Result<()> {
        if t >= 0.0 {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "trajectory evaluated at negative time {t}"
            )))
        }
    }

    pub fn delta(&self, t: f64) -> Result<f64> {
        Self::check_time(t)?;
        Ok(match *self {
            EnvTrajectory::Linear { c } => c * t,
            EnvTrajectory::Power { c, alpha } => c * t.powf(alpha),
            EnvTrajectory::Sin { delta_max, omega } => delta_max * (omega * t).sin(),
            EnvTrajectory::SinSq { delta_max, omega } => {
                let s = (omega * t).sin();
                delta_max * s * s
            }
            EnvTrajectory::LinearPlusSin {
                c,
                delta_max,
                omega,
            } => c * t + delta_max * (omega * t).sin(),
            EnvTrajectory::Tabulated(ref p) => p.eval(t)?,
        })
    }

    /// `delta'(t)`; the containing segment's slope for tabulated paths.
    pub fn delta_prime(&self, t: f64) -> Result<f64> {
        Self::check_time(t)?;
        Ok(match *self {
            EnvTrajectory::Linear { c } => c,
            EnvTrajectory::Power { c, alpha } => c * alpha * t.powf(alpha - 1.0),
            EnvTrajectory::Sin { delta_max, omega } => delta_max * omega * (omega * t).cos(),
            EnvTrajectory::SinSq { delta_max, omega } => {
                delta_max * omega * (2.0 * omega * t).sin()
            }
            EnvTrajectory::LinearPlusSin {
                c,
                delta_max,
                omega,
            } => c + delta_max * omega * (omega * t).cos(),
            EnvTrajectory::Tabulated(ref p) => p.slope(t)?,
        })
    }

    /// `delta''(t)`; a second difference over neighbouring nodes for
    /// tabulated paths.
    pub fn delta_second(&self, t: f64) -> Result<f64> {
        Self::check_time(t)?;
        Ok(match *self {
            EnvTrajectory::Linear { .. } => 0.0,
            EnvTrajectory::Power { c, alpha } => c * alpha * (alpha - 1.0) * t.powf(alpha - 2.0),
            EnvTrajectory::Sin { delta_max, omega } => {
                -delta_max * omega * omega * (omega * t).sin()
            }
            EnvTrajectory::SinSq { delta_max, omega } => {
                2.0 * delta_max * omega * omega * (2.0 * omega * t).cos()
            }
            EnvTrajectory::LinearPlusSin {
                delta_max, omega, ..
            } => -delta_max * omega * omega * (omega * t).sin(),
            EnvTrajectory::Tabulated(ref p) => {
                let i = p.segment(t)?;
                let h = p.times[i + 1] - p.times[i];
                let lo = (t - h).max(0.0);
                let hi = (t + h).min(p.horizon());
                let mid = 0.5 * (lo + hi);
                let hh = 0.5 * (hi - lo);
                (p.eval(hi)? - 2.0 * p.eval(mid)? + p.eval(lo)?) / (hh * hh)
            }
        })
    }

    /// `delta` extended by `0` to negative times, used where a centred
    /// stencil reaches just below `t = 0`.
    #[inline]
    pub(crate) fn delta_ext(&self, t: f64) -> Result<f64> {
        if t <= 0.0 {
            Ok(0.0)
        } else {
            self.delta(t)
        }
    }

    /// Largest `|delta|` over `[0, horizon]`, sampled on a fine grid for
    /// closed forms.
    pub fn max_abs(&self, horizon: f64) -> Result<f64> {
        match self {
            EnvTrajectory::Tabulated(p) => Ok(p
                .times
                .iter()
                .zip(&p.values)
                .filter(|(t, _)| **t <= horizon)
                .fold(0.0f64, |m, (_, v)| m.max(v.abs()))),
            _ => {
                let k = 20_000;
                let mut m = 0.0f64;
                for i in 0..=k {
                    m = m.max(self.delta(horizon * i as f64 / k as f64)?.abs());
                }
                Ok(m)
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EnvTrajectory::Linear { .. } => "linear",
            EnvTrajectory::Power { .. } => "power",
            EnvTrajectory::Sin { .. } => "sin",
            EnvTrajectory::SinSq { .. } => "sin_sq",
            EnvTrajectory::LinearPlusSin { .. } => "linear_plus_sin",
            EnvTrajectory::Tabulated(_) => "tabulated",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{stencil_derivative, Order};
    use rand::Rng;

    fn closed_forms() -> Vec<EnvTrajectory> {
        vec![
            EnvTrajectory::Linear { c: 0.0063262 },
            EnvTrajectory::power(2.0, 0.5).unwrap(),
            EnvTrajectory::power(0.01, 1.5).unwrap(),
            EnvTrajectory::Sin {
                delta_max: 0.3937,
                omega: 0.074506,
            },
            EnvTrajectory::SinSq {
                delta_max: 0.7071,
                omega: 0.074506,
            },
            EnvTrajectory::LinearPlusSin {
                c: 0.0063,
                delta_max: 0.3937,
                omega: 0.0745,
            },
        ]
    }

    #[test]
    fn params_derived_quantities() {
        let p = ModelParams::new(3, 0.005, 0.1125, 0.0).unwrap();
        assert!((p.mu() - 0.0237170824).abs() < 1e-9);
        assert!((p.u_c() - 0.01125).abs() < 1e-15);
        assert!(ModelParams::new(0, 0.005, 0.1, 0.0).is_err());
        assert!(ModelParams::new(3, 0.0, 0.1, 0.0).is_err());
        assert!(ModelParams::new(3, 0.005, -1.0, 0.0).is_err());
        let q = ModelParams::with_mu(3, 0.005, 0.02, 0.0).unwrap();
        assert!((q.mu() - 0.02).abs() < 1e-15);
    }

    #[test]
    fn delta_examples() {
        for traj in closed_forms() {
            assert_eq!(traj.delta(0.0).unwrap(), 0.0, "{traj:?}");
        }
        let s = EnvTrajectory::Sin {
            delta_max: 0.3937,
            omega: 0.074506,
        };
        let t = std::f64::consts::PI / (2.0 * 0.074506);
        assert!((s.delta(t).unwrap() - 0.3937).abs() < 1e-15);
        let p = EnvTrajectory::power(2.0, 0.5).unwrap();
        assert_eq!(p.delta(4.0).unwrap(), 4.0);
        assert!(EnvTrajectory::power(1.0, 1.0).is_err());
        assert!(EnvTrajectory::power(1.0, -0.5).is_err());
        assert!(s.delta(-1.0).is_err());
    }

    #[test]
    fn delta_prime_examples() {
        let lin = EnvTrajectory::Linear { c: 0.3 };
        assert_eq!(lin.delta_prime(17.0).unwrap(), 0.3);
        let s = EnvTrajectory::Sin {
            delta_max: 0.5,
            omega: 0.2,
        };
        assert_eq!(s.delta_prime(0.0).unwrap(), 0.5 * 0.2);
        let s2 = EnvTrajectory::SinSq {
            delta_max: 0.5,
            omega: 0.2,
        };
        assert_eq!(s2.delta_prime(0.0).unwrap(), 0.0);
    }

    #[test]
    fn delta_prime_matches_stencil() {
        let mut rng = RngStream::new(3, 0).rng();
        for traj in closed_forms() {
            for _ in 0..100 {
                let t: f64 = rng.random_range(1.0..500.0);
                let fd = stencil_derivative(
                    |x| traj.delta(x),
                    t,
                    Order::First,
                    Order::First.default_step(t),
                )
                .unwrap();
                let an = traj.delta_prime(t).unwrap();
                assert!(
                    (fd - an).abs() <= 1e-6 * an.abs().max(1e-3),
                    "{traj:?} t={t} {fd} {an}"
                );
                let fd2 =
                    stencil_derivative(|x| traj.delta_prime(x), t, Order::First, 1e-3 * t.max(1.0))
                        .unwrap();
                let an2 = traj.delta_second(t).unwrap();
                assert!(
                    (fd2 - an2).abs() <= 1e-6 * an2.abs().max(1e-3),
                    "{traj:?} t={t} {fd2} {an2}"
                );
            }
        }
    }

    #[test]
    fn tabulated_interpolation_and_validation() {
        let p = TabulatedPath::new(vec![0.0, 1.0, 3.0], vec![0.0, 2.0, 1.0]).unwrap();
        assert_eq!(p.eval(0.5).unwrap(), 1.0);
        assert_eq!(p.eval(2.0).unwrap(), 1.5);
        assert_eq!(p.eval(3.0).unwrap(), 1.0);
        assert_eq!(p.slope(2.0).unwrap(), -0.5);
        assert_eq!(p.slope(0.0).unwrap(), 2.0);
        assert!(matches!(p.eval(3.5), Err(Error::OutOfHorizon { .. })));
        assert!(TabulatedPath::new(vec![0.0, 1.0], vec![0.1, 2.0]).is_err());
        assert!(TabulatedPath::new(vec![0.0, 1.0, 1.0], vec![0.0, 2.0, 3.0]).is_err());
        assert!(TabulatedPath::new(vec![0.0, 2.0, 1.0], vec![0.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn tabulated_continuity_at_nodes() {
        let p = TabulatedPath::new(vec![0.0, 1.0, 3.0, 3.5], vec![0.0, 2.0, 1.0, -4.0]).unwrap();
        for &t in &p.times()[1..3] {
            let l = p.eval(t - 1e-12).unwrap();
            let r = p.eval(t + 1e-12).unwrap();
            assert!((l - r).abs() < 1e-10);
        }
    }

    #[test]
    fn csv_round_trip() {
        let p = TabulatedPath::new(vec![0.0, 0.1, 0.2], vec![0.0, -0.013, 0.5e-3]).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"t,delta\n"));
        assert_eq!(TabulatedPath::read_csv(&buf[..]).unwrap(), p);
        assert!(TabulatedPath::read_csv(&b"0,0\n1,1\n"[..]).is_err());
        assert!(TabulatedPath::read_csv(&b"t,delta\n0,0.5\n1,1\n"[..]).is_err());
    }

    fn ou(nu: f64, beta: f64, dt: f64, horizon: f64, id: u64) -> TabulatedPath {
        match EnvTrajectory::realize_ou(&OuSpec {
            nu,
            beta_noise: beta,
            dt,
            horizon,
            stream: RngStream::new(11, id),
        })
        .unwrap()
        {
            EnvTrajectory::Tabulated(p) => p,
            _ => unreachable!(),
        }
    }

    #[test]
    fn ou_without_noise_is_zero() {
        let p = ou(0.3, 0.0, 0.1, 10.0, 0);
        assert!(p.values().iter().all(|&v| v == 0.0));
        assert!(p.horizon() >= 10.0 - 1e-12);
        assert_eq!(p.times().len(), 101);
    }

    #[test]
    fn ou_reproducible() {
        assert_eq!(ou(0.01, 0.1, 0.1, 50.0, 4), ou(0.01, 0.1, 0.1, 50.0, 4));
        assert_ne!(ou(0.01, 0.1, 0.1, 50.0, 4), ou(0.01, 0.1, 0.1, 50.0, 5));
    }

    #[test]
    fn ou_parameter_validation() {
        let s = RngStream::new(0, 0);
        let mk = |nu, beta, dt, horizon| {
            EnvTrajectory::realize_ou(&OuSpec {
                nu,
                beta_noise: beta,
                dt,
                horizon,
                stream: s,
            })
        };
        assert!(mk(-1.0, 0.1, 0.1, 1.0).is_err());
        assert!(mk(0.1, -0.1, 0.1, 1.0).is_err());
        assert!(mk(0.1, 0.1, 0.0, 1.0).is_err());
        assert!(mk(0.1, 0.1, 2.0, 1.0).is_err());
    }

    #[test]
    fn wiener_variance() {
        let t_end = 10.0;
        let samples: Vec<f64> = (0..10_000)
            .map(|id| *ou(0.0, 1.0, 0.1, t_end, id).values().last().unwrap())
            .collect();
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let var =
            samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (samples.len() - 1) as f64;
        assert!((var / t_end - 1.0).abs() < 0.05, "var = {var}");
    }

    #[test]
    fn ou_stationary_variance() {
        let samples: Vec<f64> = (0..10_000)
            .map(|id| *ou(0.01, 0.1, 0.1, 500.0, id).values().last().unwrap())
            .collect();
        let var = samples.iter().map(|x| x * x).sum::<f64>() / samples.len() as f64;
        assert!((var / 0.5 - 1.0).abs() < 0.1, "var = {var}");
    }
}
