//! Running a scenario through its engines, comparing them and writing the
//! result files.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{Engine, IdeGrid, Plan, ResolvedScenario, Scenario};
use super::svg::{Band, HLine, Plot, Series};
use crate::analytic::{asymptotic_summary, AnalyticModel, AsymptoticSummary, TrajectoryOptions};
use crate::environment::{csv_err, fmt_f64, EnvTrajectory};
use crate::error::Result;
use crate::ibm::{run_replicates, ReplicateStats};
use crate::ide::{solve_ide_1d, solve_pde_reduced, GridDiagnostics, GridSolution};
use crate::moments::MomentTrajectory;
use crate::numerics::{try_integrate, QuadratureSpec, RngStream};

/// Key of the analytic curve started from the grid engines' initial density.
pub const IDE_REFERENCE: &str = "analytic_ide_init";

/// Deviation between the `mbar` columns of two trajectories on the shared
/// time grid; `a` is the reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub a: String,
    pub b: String,
    pub sup: f64,
    /// `sup |a - b| / sup |a|`; absent when `a` vanishes identically.
    pub rel_sup: Option<f64>,
    /// Trapezoid time average of `|a - b|` (the plain value for one point).
    pub mean_abs: f64,
}

impl Deviation {
    pub fn between(a_name: &str, a: &[f64], b_name: &str, b: &[f64], times: &[f64]) -> Self {
        let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - y).abs()).collect();
        let sup = diff.iter().fold(0.0f64, |m, v| m.max(*v));
        let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let span = times.last().unwrap() - times[0];
        let mean_abs = if span > 0.0 {
            (1..times.len())
                .map(|k| 0.5 * (diff[k] + diff[k - 1]) * (times[k] - times[k - 1]))
                .sum::<f64>()
                / span
        } else {
            diff[0]
        };
        Self {
            a: a_name.into(),
            b: b_name.into(),
            sup,
            rel_sup: (scale > 0.0).then(|| sup / scale),
            mean_abs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IbmBand {
    pub q025: Vec<f64>,
    pub q975: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub scenario: ResolvedScenario,
    /// Keyed by engine name, plus [`IDE_REFERENCE`] when the ide engine ran.
    pub trajectories: BTreeMap<String, MomentTrajectory>,
    pub ibm_band: Option<IbmBand>,
    pub deviations: Vec<Deviation>,
    /// Fraction of recorded times at which the analytic curve lies inside
    /// the IBM 95% band.
    pub coverage: Option<f64>,
    pub mutation_load: f64,
    /// Long-run mean fitness of closed-form trajectories (the period
    /// average for oscillating ones).
    pub long_run: Option<AsymptoticSummary>,
    /// Analytic mean fitness averaged over the last five periods before the
    /// final time.
    pub late_period_average: Option<f64>,
    pub ide_diagnostics: Option<GridDiagnostics>,
}

impl ComparisonReport {
    pub fn deviation(&self, a: &str, b: &str) -> Option<&Deviation> {
        self.deviations.iter().find(|d| d.a == a && d.b == b)
    }
}

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub analytic: Option<MomentTrajectory>,
    pub ibm: Option<ReplicateStats>,
    pub ide: Option<GridSolution>,
    pub ide_reference: Option<MomentTrajectory>,
    pub report: ComparisonReport,
}

/// Runs every selected engine. The IBM runs concurrently with the
/// deterministic engines.
pub fn run_plan(plan: &Plan) -> Result<RunOutput> {
    let sc = &plan.scenario;
    let (ibm, det) = rayon::join(
        || run_ibm(plan),
        || -> Result<_> {
            let analytic = if sc.has(Engine::Analytic) {
                Some(analytic_curve(plan, &plan.init).map_err(|e| e.in_engine("analytic"))?)
            } else {
                None
            };
            let (ide, reference) = match &sc.ide {
                Some(setup) => {
                    let sol = match setup.grid {
                        IdeGrid::OneD(g) => solve_ide_1d(
                            &sc.params,
                            &plan.trajectory,
                            &setup.init,
                            &sc.times,
                            g,
                            setup.dt,
                        ),
                        IdeGrid::Reduced(g) => solve_pde_reduced(
                            &sc.params,
                            &plan.trajectory,
                            &setup.init,
                            &sc.times,
                            g,
                            setup.dt,
                        ),
                    }
                    .map_err(|e| e.in_engine("ide"))?;
                    let ic = setup.init.to_initial_condition(&sc.params);
                    let reference =
                        analytic_curve(plan, &ic).map_err(|e| e.in_engine("analytic"))?;
                    (Some(sol), Some(reference))
                }
                None => (None, None),
            };
            Ok((analytic, ide, reference))
        },
    );
    let ibm = ibm?;
    let (analytic, ide, ide_reference) = det?;
    let report = compare(
        plan,
        analytic.as_ref(),
        ibm.as_ref(),
        ide.as_ref(),
        ide_reference.as_ref(),
    )?;
    Ok(RunOutput {
        analytic,
        ibm,
        ide,
        ide_reference,
        report,
    })
}

fn analytic_curve(
    plan: &Plan,
    init: &crate::analytic::InitialCondition,
) -> Result<MomentTrajectory> {
    AnalyticModel::new(plan.scenario.params, &plan.trajectory, init)?
        .trajectory(&plan.scenario.times, &TrajectoryOptions::default())
}

fn run_ibm(plan: &Plan) -> Result<Option<ReplicateStats>> {
    let Some(cfg) = &plan.scenario.ibm else {
        return Ok(None);
    };
    let stats = run_replicates(
        &plan.scenario.params,
        &plan.trajectory,
        cfg,
        RngStream::new(plan.scenario.seed, 0),
    )
    .and_then(|s| s.at_times(&plan.scenario.times))
    .map_err(|e| e.in_engine("ibm"))?;
    Ok(Some(stats))
}

fn compare(
    plan: &Plan,
    analytic: Option<&MomentTrajectory>,
    ibm: Option<&ReplicateStats>,
    ide: Option<&GridSolution>,
    reference: Option<&MomentTrajectory>,
) -> Result<ComparisonReport> {
    let sc = &plan.scenario;
    let times = &sc.times;
    let mut trajectories = BTreeMap::new();
    if let Some(a) = analytic {
        trajectories.insert("analytic".to_string(), a.clone());
    }
    if let Some(s) = ibm {
        trajectories.insert("ibm".to_string(), s.to_moments()?);
    }
    if let Some(s) = ide {
        trajectories.insert("ide".to_string(), s.moments.clone());
    }
    if let Some(r) = reference {
        trajectories.insert(IDE_REFERENCE.to_string(), r.clone());
    }

    let mut deviations = vec![];
    for (a, b) in [
        ("analytic", "ibm"),
        ("analytic", "ide"),
        ("ibm", "ide"),
        (IDE_REFERENCE, "ide"),
    ] {
        if let (Some(x), Some(y)) = (trajectories.get(a), trajectories.get(b)) {
            deviations.push(Deviation::between(a, &x.mbar, b, &y.mbar, times));
        }
    }

    let coverage = match (analytic, ibm) {
        (Some(a), Some(s)) => s.coverage(&a.times, &a.mbar),
        _ => None,
    };
    let long_run = if plan.trajectory.is_closed_form() {
        Some(asymptotic_summary(&sc.params, &plan.trajectory)?)
    } else {
        None
    };
    let late_period_average = match (long_run, analytic) {
        (Some(AsymptoticSummary::Periodic { period, .. }), Some(_)) => {
            late_average(plan, period).map_err(|e| e.in_engine("analytic"))?
        }
        _ => None,
    };
    Ok(ComparisonReport {
        scenario: sc.clone(),
        trajectories,
        ibm_band: ibm.map(|s| IbmBand {
            q025: s.q025.clone(),
            q975: s.q975.clone(),
        }),
        deviations,
        coverage,
        mutation_load: sc.params.mutation_load(),
        long_run,
        late_period_average,
        ide_diagnostics: ide.map(|s| s.diagnostics),
    })
}

/// Mean of the analytic `mbar` over `[T - 5 period, T]`.
fn late_average(plan: &Plan, period: f64) -> Result<Option<f64>> {
    let end = *plan.scenario.times.last().unwrap();
    let start = end - 5.0 * period;
    if start < 0.0 {
        return Ok(None);
    }
    let model = AnalyticModel::new(plan.scenario.params, &plan.trajectory, &plan.init)?;
    let spec = QuadratureSpec::new(1e-9, 1e-12, 1 << 12)?;
    let total = try_integrate(|t| model.mbar(t), start, end, &spec)?;
    Ok(Some(total / (end - start)))
}

impl RunOutput {
    /// `t` followed by the columns of every engine that ran.
    pub fn combined_csv(&self, header: &str) -> Result<Vec<u8>> {
        let times = &self.report.scenario.times;
        let mut cols: Vec<(String, &[f64])> = vec![];
        if let Some(a) = &self.analytic {
            cols.push(("analytic_mbar".into(), &a.mbar));
            cols.push(("analytic_vm".into(), &a.vm));
            cols.push(("analytic_skew".into(), &a.skew));
        }
        if let Some(s) = &self.ibm {
            cols.push(("ibm_mean_mbar".into(), &s.mean_mbar));
            cols.push(("ibm_q025".into(), &s.q025));
            cols.push(("ibm_q975".into(), &s.q975));
            cols.push(("ibm_mean_vm".into(), &s.mean_vm));
        }
        if let Some(s) = &self.ide {
            cols.push(("ide_mbar".into(), &s.moments.mbar));
            cols.push(("ide_vm".into(), &s.moments.vm));
            cols.push(("ide_skew".into(), &s.moments.skew));
        }
        if let Some(r) = &self.ide_reference {
            cols.push((format!("{IDE_REFERENCE}_mbar"), &r.mbar));
        }
        let mut out = comment(header);
        {
            let mut w = csv::Writer::from_writer(&mut out);
            let mut names = vec!["t".to_string()];
            names.extend(cols.iter().map(|c| c.0.clone()));
            w.write_record(&names).map_err(csv_err)?;
            for (k, t) in times.iter().enumerate() {
                let mut row = vec![fmt_f64(*t)];
                row.extend(cols.iter().map(|c| fmt_f64(c.1[k])));
                w.write_record(&row).map_err(csv_err)?;
            }
            w.flush()?;
        }
        Ok(out)
    }

    pub fn figure(&self) -> Plot {
        let sc = &self.report.scenario;
        let mut plot = Plot {
            title: sc.name.clone(),
            x_label: "t (generations)".into(),
            y_label: "mean fitness".into(),
            description: sc.header(),
            ..Default::default()
        };
        if let Some(s) = &self.ibm {
            plot.bands.push(Band {
                label: "IBM 95% band".into(),
                color: "orange",
                xs: s.times.clone(),
                lo: s.q025.clone(),
                hi: s.q975.clone(),
            });
            plot.series.push(Series {
                label: "IBM mean".into(),
                color: "darkorange",
                dashed: false,
                xs: s.times.clone(),
                ys: s.mean_mbar.clone(),
            });
        }
        if let Some(a) = &self.analytic {
            plot.series.push(Series {
                label: "analytic".into(),
                color: "black",
                dashed: false,
                xs: a.times.clone(),
                ys: a.mbar.clone(),
            });
        }
        if let Some(r) = &self.ide_reference {
            plot.series.push(Series {
                label: "analytic, grid start".into(),
                color: "gray",
                dashed: true,
                xs: r.times.clone(),
                ys: r.mbar.clone(),
            });
        }
        if let Some(s) = &self.ide {
            plot.series.push(Series {
                label: if sc.params.n == 1 {
                    "IDE".into()
                } else {
                    "PDE (reduced)".into()
                },
                color: "royalblue",
                dashed: true,
                xs: s.moments.times.clone(),
                ys: s.moments.mbar.clone(),
            });
        }
        plot.hlines.push(HLine {
            label: "mutation load".into(),
            color: "red",
            y: self.report.mutation_load,
        });
        if let Some(AsymptoticSummary::Periodic {
            mean_over_period, ..
        }) = self.report.long_run
        {
            plot.hlines.push(HLine {
                label: "period average".into(),
                color: "green",
                y: mean_over_period,
            });
        }
        plot
    }

    /// Writes the per-engine CSVs, `combined.csv`, `report.json` and
    /// `figure.svg` (plus `trajectory.csv` for tabulated or random paths).
    pub fn write(&self, plan: &Plan, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let header = self.report.scenario.header();
        let mut files: Vec<(&str, Vec<u8>)> = vec![];
        if let Some(a) = &self.analytic {
            files.push(("analytic.csv", with_comment(&header, |w| a.write_csv(w))?));
        }
        if let Some(s) = &self.ibm {
            files.push(("ibm.csv", with_comment(&header, |w| s.write_csv(w))?));
            if s.per_replicate.is_some() {
                files.push((
                    "ibm_replicates.csv",
                    with_comment(&header, |w| s.write_replicates_csv(w))?,
                ));
            }
        }
        if let Some(s) = &self.ide {
            files.push((
                "ide.csv",
                with_comment(&header, |w| s.moments.write_csv(w))?,
            ));
        }
        if let Some(r) = &self.ide_reference {
            files.push((
                "analytic_ide_init.csv",
                with_comment(&header, |w| r.write_csv(w))?,
            ));
        }
        if let EnvTrajectory::Tabulated(p) = &plan.trajectory {
            files.push(("trajectory.csv", with_comment(&header, |w| p.write_csv(w))?));
        }
        files.push(("combined.csv", self.combined_csv(&header)?));
        let mut json = serde_json::to_vec_pretty(&self.report)?;
        json.push(b'\n');
        files.push(("report.json", json));
        files.push(("figure.svg", self.figure().render().into_bytes()));
        for (name, bytes) in files {
            std::fs::write(dir.join(name), bytes)?;
        }
        Ok(())
    }
}

fn comment(header: &str) -> Vec<u8> {
    format!("# {header}\n").into_bytes()
}

fn with_comment<F>(header: &str, write: F) -> Result<Vec<u8>>
where
    F: FnOnce(&mut Vec<u8>) -> Result<()>,
{
    let mut out = comment(header);
    write(&mut out)?;
    Ok(out)
}

/// Loads, validates and runs a scenario file, writing every output into `out`.
pub fn run_scenario(path: impl AsRef<Path>, out: impl AsRef<Path>) -> Result<ComparisonReport> {
    let path = path.as_ref();
    let scenario = Scenario::load(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    run_and_write(&scenario, base, out.as_ref())
}

/// Runs an in-memory scenario, writing every output into `out`.
pub fn run_and_write(scenario: &Scenario, base_dir: &Path, out: &Path) -> Result<ComparisonReport> {
    let plan = scenario.resolve(base_dir)?;
    let output = run_plan(&plan)?;
    output.write(&plan, out)?;
    Ok(output.report)
}
