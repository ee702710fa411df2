use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
name = "small"
seed = 7
engines = ["analytic", "ibm", "ide"]

[params]
n = 1
lambda = 0.005
U = 0.1125

[trajectory]
kind = "linear"
c = 0.001

[times]
horizon = 20.0
step = 5.0

[ibm]
N = 50
replicates = 16

[ide]
points = 512
"#;

const OUTPUTS: [&str; 6] = [
    "analytic.csv",
    "ibm.csv",
    "ide.csv",
    "combined.csv",
    "report.json",
    "figure.svg",
];

fn evoclim(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_evoclim"));
    cmd.args(args).env("RUST_LOG", "warn");
    match threads {
        Some(t) => cmd.env("EVOCLIM_THREADS", t),
        None => cmd.env_remove("EVOCLIM_THREADS"),
    };
    cmd.output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "small.toml", SMALL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let run_a = evoclim(&["run", &config, "--out", a.to_str().unwrap()], Some("1"));
    assert_eq!(code(&run_a), 0, "{}", stderr(&run_a));
    let run_b = evoclim(&["run", &config, "--out", b.to_str().unwrap()], Some("3"));
    assert_eq!(code(&run_b), 0, "{}", stderr(&run_b));
    for name in OUTPUTS {
        let x = std::fs::read(a.join(name)).unwrap();
        let y = std::fs::read(b.join(name)).unwrap();
        assert!(x == y, "{name} differs between runs");
    }
}

#[test]
fn unknown_trajectory_kind_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(
        dir.path(),
        "bad.toml",
        &SMALL.replace("\"linear\"", "\"zigzag\""),
    );
    let out = evoclim(&["validate", &config], None);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("trajectory.kind"), "{}", stderr(&out));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    assert_eq!(code(&evoclim(&["run", missing.to_str().unwrap()], None)), 2);
    assert_eq!(
        code(&evoclim(&["preset", "fig9z", "--config-only"], None)),
        2
    );
    let negative = write(
        dir.path(),
        "neg.toml",
        &SMALL.replace("lambda = 0.005", "lambda = -1.0"),
    );
    let out = evoclim(&["validate", &negative], None);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("params.lambda"), "{}", stderr(&out));
    let config = write(dir.path(), "small.toml", SMALL);
    assert_eq!(code(&evoclim(&["validate", &config], Some("zero"))), 2);
}

#[test]
fn unstable_grid_step_is_an_engine_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL
        .replace(
            "[\"analytic\", \"ibm\", \"ide\"]",
            "[\"analytic\", \"ide\"]",
        )
        .replace("c = 0.001", "c = 0.01")
        + "dt = 5.0\n";
    let config = write(dir.path(), "cfl.toml", &text);
    let out = evoclim(
        &[
            "run",
            &config,
            "--out",
            dir.path().join("o").to_str().unwrap(),
        ],
        None,
    );
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn validate_prints_the_resolved_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "small.toml", SMALL);
    let out = evoclim(&["validate", &config], None);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["name"], "small");
    assert_eq!(json["ibm"]["replicates"], 16);
}

#[test]
fn preset_config_only_round_trips_through_validate() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("fig2b");
    let out = evoclim(
        &[
            "preset",
            "fig2b",
            "--out",
            out_dir.to_str().unwrap(),
            "--config-only",
        ],
        None,
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let scenario = out_dir.join("scenario.toml");
    let text = std::fs::read_to_string(&scenario).unwrap();
    assert!(text.contains("kind = \"sin\""));
    assert!(!out_dir.join("report.json").exists());
    assert_eq!(
        code(&evoclim(&["validate", scenario.to_str().unwrap()], None)),
        0
    );
}

#[test]
fn sweep_writes_table_and_reports_extrema() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL
        .split("[ibm]")
        .next()
        .unwrap()
        .replace("[\"analytic\", \"ibm\", \"ide\"]", "[\"analytic\"]")
        .replace("n = 1", "n = 3")
        .replace("c = 0.001", "c = 0.01");
    let config = write(dir.path(), "lin.toml", &text);
    let out_dir = dir.path().join("sweep");
    let out = evoclim(
        &[
            "sweep",
            &config,
            "--axis",
            "mu",
            "--values",
            "0.01:0.06:26",
            "--out",
            out_dir.to_str().unwrap(),
        ],
        None,
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("mbar_inf Max"), "{stdout}");
    let csv = std::fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    let data: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(data.len(), 27);
    assert!(out_dir.join("sweep.json").exists());

    let bad = evoclim(
        &["sweep", &config, "--axis", "params.nope", "--values", "1,2"],
        None,
    );
    assert_eq!(code(&bad), 2);
    let bad = evoclim(&["sweep", &config, "--axis", "mu", "--values", "3,2"], None);
    assert_eq!(code(&bad), 2);
}
