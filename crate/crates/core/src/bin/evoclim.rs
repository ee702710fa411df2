use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use evoclim::harness::{self, ComparisonReport, Scenario};
use evoclim::Error;

/// Mean-fitness dynamics under a moving optimum: run scenarios, figure
/// presets and parameter sweeps.
#[derive(Parser)]
#[command(name = "evoclim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file.
    Run {
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run a figure preset (fig2a, fig2b, fig2c, fig2d, fig3a, fig3b).
    Preset {
        name: String,
        /// Defaults to out/<name>.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Only write the preset's scenario file.
        #[arg(long)]
        config_only: bool,
    },
    /// Long-run analytic moments along one parameter axis.
    Sweep {
        config: PathBuf,
        /// Dotted path such as `trajectory.omega`, or `mu`.
        #[arg(long)]
        axis: String,
        /// `a,b,c` or `start:stop:count`.
        #[arg(long, allow_hyphen_values = true)]
        values: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Check a scenario file and print it with every default filled in.
    Validate { config: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config { .. } => 2,
                _ => 3,
            })
        }
    }
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("EVOCLIM_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| format!("EVOCLIM_THREADS must be a positive integer, got `{raw}`"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn dispatch(command: Command) -> evoclim::Result<()> {
    match command {
        Command::Run { config, out } => {
            let report = harness::run_scenario(&config, &out)?;
            summarize(&report, &out);
        }
        Command::Preset {
            name,
            out,
            config_only,
        } => {
            let scenario = harness::preset(&name)?;
            let out = out.unwrap_or_else(|| Path::new("out").join(&name));
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("scenario.toml"), scenario.to_toml_string())?;
            if !config_only {
                let report = harness::run_and_write(&scenario, Path::new("."), &out)?;
                summarize(&report, &out);
            }
        }
        Command::Sweep {
            config,
            axis,
            values,
            out,
        } => {
            let values = harness::parse_values(&values)?;
            let table = harness::sweep_file(&config, &axis, &values)?;
            std::fs::create_dir_all(&out)?;
            let scenario = std::fs::read_to_string(&config)?;
            let mut csv = format!("# sweep of `{axis}` over {}\n", config.display()).into_bytes();
            for line in scenario.lines() {
                csv.extend(format!("# {line}\n").bytes());
            }
            table.write_csv(&mut csv)?;
            std::fs::write(out.join("sweep.csv"), csv)?;
            let mut json = serde_json::to_vec_pretty(&table)?;
            json.push(b'\n');
            std::fs::write(out.join("sweep.json"), json)?;
            for e in &table.extrema {
                println!(
                    "{} {:?} at {} = {} (grid point {})",
                    e.column, e.kind, axis, e.refined, e.grid_value
                );
            }
            println!("wrote {}", out.join("sweep.csv").display());
        }
        Command::Validate { config } => {
            let scenario = Scenario::load(&config)?;
            let plan = scenario.resolve(config.parent().unwrap_or(Path::new(".")))?;
            println!("{}", serde_json::to_string_pretty(&plan.scenario)?);
        }
    }
    Ok(())
}

fn summarize(report: &ComparisonReport, out: &Path) {
    for (name, traj) in &report.trajectories {
        if let (Some(t), Some(m)) = (traj.times.last(), traj.mbar.last()) {
            println!("{name:>18}: mbar({t}) = {m:.7}");
        }
    }
    for d in &report.deviations {
        println!(
            "{:>18}: sup |{} - {}| = {:.3e}, relative {}",
            "deviation",
            d.a,
            d.b,
            d.sup,
            d.rel_sup
                .map_or("-".into(), |r| format!("{:.3}%", 100.0 * r))
        );
    }
    if let Some(c) = report.coverage {
        println!("{:>18}: {:.3}", "coverage", c);
    }
    if let Some(v) = report.late_period_average {
        println!("{:>18}: {:.7}", "period average", v);
    }
    println!("wrote {}", out.display());
}
