//! Wright-Fisher individual-based model: constant population size, selection
//! by multinomial sampling on Darwinian fitness `exp(m)`, Poisson mutation
//! with Gaussian effects.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::{csv_err, fmt_f64, EnvTrajectory, ModelParams};
use crate::error::{Error, Result};
use crate::moments::{MomentTrajectory, Source};
use crate::numerics::RngStream;

/// Phenotypes of `N` individuals in `n` dimensions, stored row-major.
#[derive(Debug, Clone)]
pub struct PopulationState {
    dim: usize,
    phenotypes: Vec<f64>,
    generation: u64,
    stream: RngStream,
    rng: ChaCha8Rng,
    // scratch buffers reused across generations
    cum: Vec<f64>,
    guide: Vec<usize>,
    next: Vec<f64>,
}

/// All `size` individuals at the optimum.
pub fn init_clonal(
    params: &ModelParams,
    size: usize,
    stream: RngStream,
) -> Result<PopulationState> {
    init_clonal_at(params, size, &vec![0.0; params.n], stream)
}

/// All `size` individuals at phenotype `x`.
pub fn init_clonal_at(
    params: &ModelParams,
    size: usize,
    x: &[f64],
    stream: RngStream,
) -> Result<PopulationState> {
    params.validate()?;
    if size == 0 {
        return Err(Error::invalid("N", "population size must be >= 1"));
    }
    if x.len() != params.n {
        return Err(Error::invalid(
            "x",
            format!("phenotype must have {} coordinates", params.n),
        ));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("x", "phenotype must be finite"));
    }
    let phenotypes = x.iter().copied().cycle().take(size * params.n).collect();
    Ok(PopulationState {
        dim: params.n,
        phenotypes,
        generation: 0,
        stream,
        rng: stream.rng(),
        cum: Vec::new(),
        guide: Vec::new(),
        next: Vec::new(),
    })
}

impl PopulationState {
    pub fn size(&self) -> usize {
        self.phenotypes.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn stream(&self) -> RngStream {
        self.stream
    }

    pub fn phenotypes(&self) -> &[f64] {
        &self.phenotypes
    }

    pub fn phenotype(&self, i: usize) -> &[f64] {
        &self.phenotypes[i * self.dim..(i + 1) * self.dim]
    }

    /// Malthusian fitness `m_i = -|x_i - delta e_1|^2 / 2` of every individual.
    pub fn fitness(&self, delta: f64) -> Vec<f64> {
        self.phenotypes
            .chunks_exact(self.dim)
            .map(|x| fitness_of(x, delta))
            .collect()
    }

    /// Population means of fitness and of its components `(x_1, -|x|^2/2)`,
    /// plus the variance and skewness of fitness.
    pub fn summary(&self, delta: f64) -> PopulationSummary {
        let m = self.fitness(delta);
        let (mbar, vm, skew) = sample_moments(&m);
        let size = self.size() as f64;
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for x in self.phenotypes.chunks_exact(self.dim) {
            m1 += x[0];
            m2 -= 0.5 * x.iter().map(|v| v * v).sum::<f64>();
        }
        PopulationSummary {
            mbar,
            vm,
            skew,
            m1: m1 / size,
            m2: m2 / size,
        }
    }

    /// One generation: selection at `t = generation`, then mutation.
    pub fn step(&mut self, params: &ModelParams, traj: &EnvTrajectory) -> Result<()> {
        let delta = traj.delta(self.generation as f64)?;
        let size = self.size();
        let dim = self.dim;

        // Darwinian weights exp(m_i - max m), accumulated.
        self.cum.clear();
        let mut max_m = f64::NEG_INFINITY;
        for x in self.phenotypes.chunks_exact(dim) {
            let m = fitness_of(x, delta);
            max_m = max_m.max(m);
            self.cum.push(m);
        }
        let mut acc = 0.0;
        for c in self.cum.iter_mut() {
            acc += (*c - max_m).exp();
            *c = acc;
        }

        self.next.clear();
        self.next.reserve(size * dim);
        build_guide(&self.cum, &mut self.guide);
        for _ in 0..size {
            let i = draw_index(&self.cum, &self.guide, self.rng.random::<f64>());
            self.next
                .extend_from_slice(&self.phenotypes[i * dim..(i + 1) * dim]);
        }

        // Independent Poisson(U) counts per offspring are equivalent to a
        // Poisson(N U) total spread uniformly over offspring.
        if params.u > 0.0 {
            let total = Poisson::new(params.u * size as f64)
                .map_err(|e| Error::invalid("U", e.to_string()))?
                .sample(&mut self.rng) as u64;
            let sd = params.lambda.sqrt();
            for _ in 0..total {
                let i = self.rng.random_range(0..size);
                for v in &mut self.next[i * dim..(i + 1) * dim] {
                    let g: f64 = StandardNormal.sample(&mut self.rng);
                    *v += sd * g;
                }
            }
        }
        std::mem::swap(&mut self.phenotypes, &mut self.next);
        self.generation += 1;
        Ok(())
    }
}

#[inline]
fn fitness_of(x: &[f64], delta: f64) -> f64 {
    let d0 = x[0] - delta;
    let mut s = d0 * d0;
    for v in &x[1..] {
        s += v * v;
    }
    -0.5 * s
}

/// Guide table for indexed inverse-CDF search: `guide[k]` is the first index
/// whose cumulative weight exceeds `k / len` of the total.
fn build_guide(cum: &[f64], guide: &mut Vec<usize>) {
    let len = cum.len();
    let total = cum[len - 1];
    guide.clear();
    let mut i = 0;
    for k in 0..len {
        let level = total * k as f64 / len as f64;
        while i + 1 < len && cum[i] <= level {
            i += 1;
        }
        guide.push(i);
    }
}

#[inline]
fn draw_index(cum: &[f64], guide: &[usize], u: f64) -> usize {
    let len = cum.len();
    let x = u * cum[len - 1];
    let k = ((u * len as f64) as usize).min(len - 1);
    let mut i = guide[k];
    while i + 1 < len && cum[i] <= x {
        i += 1;
    }
    i
}

/// Multinomial sample of `count` parent indices with probabilities
/// proportional to `weights`.
pub fn sample_offspring<R: Rng>(weights: &[f64], count: usize, rng: &mut R) -> Result<Vec<usize>> {
    if weights.is_empty() {
        return Err(Error::invalid("weights", "must not be empty"));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::invalid("weights", "must be finite and >= 0"));
    }
    let mut cum = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in weights {
        acc += w;
        cum.push(acc);
    }
    if !(acc > 0.0) {
        return Err(Error::invalid("weights", "total weight must be > 0"));
    }
    let mut guide = Vec::new();
    build_guide(&cum, &mut guide);
    Ok((0..count)
        .map(|_| draw_index(&cum, &guide, rng.random::<f64>()))
        .collect())
}

/// Sample mean, variance (divisor `len`) and skewness; skewness is `NaN`
/// when the variance is zero.
pub fn sample_moments(values: &[f64]) -> (f64, f64, f64) {
    let len = values.len() as f64;
    let mean = values.iter().sum::<f64>() / len;
    let (mut m2, mut m3) = (0.0, 0.0);
    for v in values {
        let d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
    }
    let (m2, m3) = (m2 / len, m3 / len);
    let skew = if m2 > 0.0 {
        m3 / m2.powf(1.5)
    } else {
        f64::NAN
    };
    (mean, m2, skew)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationSummary {
    pub mbar: f64,
    pub vm: f64,
    pub skew: f64,
    pub m1: f64,
    pub m2: f64,
}

/// Settings for [`run_replicates`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IbmConfig {
    #[serde(rename = "N")]
    pub size: usize,
    /// Number of generations simulated.
    pub generations: u64,
    pub replicates: usize,
    pub record_every: u64,
    /// Common initial phenotype; the optimum when absent.
    #[serde(default)]
    pub start: Option<Vec<f64>>,
    /// Keep every replicate's mean-fitness series.
    #[serde(default)]
    pub keep_replicates: bool,
}

impl IbmConfig {
    pub fn new(size: usize, generations: u64, replicates: usize, record_every: u64) -> Self {
        Self {
            size,
            generations,
            replicates,
            record_every,
            start: None,
            keep_replicates: false,
        }
    }

    pub fn validate(&self, params: &ModelParams) -> Result<()> {
        if self.size == 0 {
            return Err(Error::invalid("N", "must be >= 1"));
        }
        if self.replicates == 0 {
            return Err(Error::invalid("replicates", "must be >= 1"));
        }
        if self.record_every == 0 {
            return Err(Error::invalid("record_every", "must be >= 1"));
        }
        if let Some(x) = &self.start {
            if x.len() != params.n {
                return Err(Error::invalid(
                    "start",
                    format!("must have {} coordinates", params.n),
                ));
            }
        }
        Ok(())
    }

    /// Generations at which the population is recorded.
    pub fn record_times(&self) -> Vec<u64> {
        let mut out: Vec<u64> = (0..=self.generations)
            .step_by(self.record_every as usize)
            .collect();
        if *out.last().unwrap() != self.generations {
            out.push(self.generations);
        }
        out
    }
}

/// Cross-replicate statistics of the population mean fitness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateStats {
    pub times: Vec<f64>,
    pub mean_mbar: Vec<f64>,
    pub q025: Vec<f64>,
    pub q975: Vec<f64>,
    /// Replicate averages of the within-population fitness variance and
    /// skewness.
    pub mean_vm: Vec<f64>,
    pub mean_skew: Vec<f64>,
    /// Replicate averages of the fitness components `(m1, m2)`.
    pub component_means: (Vec<f64>, Vec<f64>),
    /// `per_replicate[r][k]`: mean fitness of replicate `r` at `times[k]`.
    pub per_replicate: Option<Vec<Vec<f64>>>,
}

impl ReplicateStats {
    /// Writes `t,mean_mbar,q025,q975`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "mean_mbar", "q025", "q975"])
            .map_err(csv_err)?;
        for k in 0..self.times.len() {
            w.write_record([
                fmt_f64(self.times[k]),
                fmt_f64(self.mean_mbar[k]),
                fmt_f64(self.q025[k]),
                fmt_f64(self.q975[k]),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    /// Writes the per-replicate matrix as `t,r0,r1,...`.
    pub fn write_replicates_csv<W: Write>(&self, writer: W) -> Result<()> {
        let Some(reps) = &self.per_replicate else {
            return Err(Error::invalid(
                "keep_replicates",
                "per-replicate series were not kept",
            ));
        };
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend((0..reps.len()).map(|r| format!("r{r}")));
        w.write_record(&header).map_err(csv_err)?;
        for k in 0..self.times.len() {
            let mut row = vec![fmt_f64(self.times[k])];
            row.extend(reps.iter().map(|s| fmt_f64(s[k])));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Replicate-averaged moments as a trajectory.
    pub fn to_moments(&self) -> Result<MomentTrajectory> {
        MomentTrajectory::new(
            self.times.clone(),
            self.mean_mbar.clone(),
            self.mean_vm.clone(),
            self.mean_skew.clone(),
            Source::Ibm,
        )
    }

    /// The statistics restricted to `times`, each of which must have been
    /// recorded.
    pub fn at_times(&self, times: &[f64]) -> Result<ReplicateStats> {
        let idx: Vec<usize> = times
            .iter()
            .map(|t| {
                self.times
                    .iter()
                    .position(|s| (s - t).abs() < 1e-9)
                    .ok_or_else(|| Error::invalid("times", format!("t = {t} was not recorded")))
            })
            .collect::<Result<_>>()?;
        let pick = |v: &[f64]| idx.iter().map(|&k| v[k]).collect::<Vec<f64>>();
        Ok(ReplicateStats {
            times: pick(&self.times),
            mean_mbar: pick(&self.mean_mbar),
            q025: pick(&self.q025),
            q975: pick(&self.q975),
            mean_vm: pick(&self.mean_vm),
            mean_skew: pick(&self.mean_skew),
            component_means: (pick(&self.component_means.0), pick(&self.component_means.1)),
            per_replicate: self
                .per_replicate
                .as_ref()
                .map(|reps| reps.iter().map(|r| pick(r)).collect()),
        })
    }

    /// Fraction of `(t, value)` points lying inside the quantile band.
    /// Points at times not recorded by the IBM are ignored.
    pub fn coverage(&self, times: &[f64], values: &[f64]) -> Option<f64> {
        let mut inside = 0usize;
        let mut total = 0usize;
        for (t, v) in times.iter().zip(values) {
            if let Some(k) = self.times.iter().position(|s| (s - t).abs() < 1e-9) {
                total += 1;
                if *v >= self.q025[k] && *v <= self.q975[k] {
                    inside += 1;
                }
            }
        }
        (total > 0).then(|| inside as f64 / total as f64)
    }
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let len = sorted.len();
    if len == 1 {
        return sorted[0];
    }
    let h = (len - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(len - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Simulates one replicate, returning its summary at every record time.
pub fn run_single(
    params: &ModelParams,
    traj: &EnvTrajectory,
    cfg: &IbmConfig,
    stream: RngStream,
) -> Result<Vec<PopulationSummary>> {
    let mut pop = match &cfg.start {
        Some(x) => init_clonal_at(params, cfg.size, x, stream)?,
        None => init_clonal(params, cfg.size, stream)?,
    };
    let records = cfg.record_times();
    let mut out = Vec::with_capacity(records.len());
    for &g in &records {
        while pop.generation() < g {
            pop.step(params, traj)?;
        }
        out.push(pop.summary(traj.delta(g as f64)?));
    }
    Ok(out)
}

/// Runs `cfg.replicates` independent replicates; replicate `r` uses
/// `base_stream.substream(r)`.
pub fn run_replicates(
    params: &ModelParams,
    traj: &EnvTrajectory,
    cfg: &IbmConfig,
    base_stream: RngStream,
) -> Result<ReplicateStats> {
    params.validate()?;
    traj.validate()?;
    cfg.validate(params)?;
    if let Some(h) = traj.horizon() {
        if cfg.generations as f64 > h {
            return Err(Error::OutOfHorizon {
                t: cfg.generations as f64,
                horizon: h,
            });
        }
    }
    let runs: Vec<Vec<PopulationSummary>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| run_single(params, traj, cfg, base_stream.substream(r as u64)))
        .collect::<Result<_>>()?;

    let times: Vec<f64> = cfg.record_times().iter().map(|&g| g as f64).collect();
    let reps = runs.len() as f64;
    let mut stats = ReplicateStats {
        times: times.clone(),
        mean_mbar: vec![],
        q025: vec![],
        q975: vec![],
        mean_vm: vec![],
        mean_skew: vec![],
        component_means: (vec![], vec![]),
        per_replicate: None,
    };
    for k in 0..times.len() {
        let mut vals: Vec<f64> = runs.iter().map(|s| s[k].mbar).collect();
        stats.mean_mbar.push(vals.iter().sum::<f64>() / reps);
        vals.sort_by(f64::total_cmp);
        stats.q025.push(quantile(&vals, 0.025));
        stats.q975.push(quantile(&vals, 0.975));
        stats
            .mean_vm
            .push(runs.iter().map(|s| s[k].vm).sum::<f64>() / reps);
        // NaN (zero variance) replicates are left out of the skewness mean
        let skews: Vec<f64> = runs
            .iter()
            .map(|s| s[k].skew)
            .filter(|v| v.is_finite())
            .collect();
        stats.mean_skew.push(if skews.is_empty() {
            f64::NAN
        } else {
            skews.iter().sum::<f64>() / skews.len() as f64
        });
        stats
            .component_means
            .0
            .push(runs.iter().map(|s| s[k].m1).sum::<f64>() / reps);
        stats
            .component_means
            .1
            .push(runs.iter().map(|s| s[k].m2).sum::<f64>() / reps);
    }
    if cfg.keep_replicates {
        stats.per_replicate = Some(
            runs.iter()
                .map(|s| s.iter().map(|p| p.mbar).collect())
                .collect(),
        );
    }
    Ok(stats)
}
