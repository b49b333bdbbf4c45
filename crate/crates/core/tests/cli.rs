use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const MINIMAL: &str = include_str!("data/minimal.toml");

fn fedaudit(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedaudit"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_report_plots_replay() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    fs::write(&cfg, MINIMAL.replace("seeds = [3]", "name = \"cli\"\nseeds = [3]")).unwrap();
    let out = dir.path().join("runs");

    let o = fedaudit(&out, &["run", cfg.to_str().unwrap(), "--seed-override", "3,4"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("FedMIA-II"));
    let run = out.join("cli");
    let by_seed = fs::read_to_string(run.join("metrics_by_seed.csv")).unwrap();
    assert_eq!(by_seed.lines().count(), 3);

    let o = fedaudit(&out, &["report", run.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("2 seed(s)"));

    let o = fedaudit(&out, &["plots", run.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(run.join("plots/histogram.csv").exists());

    let attack = dir.path().join("attack.toml");
    fs::write(
        &attack,
        "schema_version = 1\n[attack]\nmethods = [\"fedmia_i\", \"grad_norm\"]\n",
    )
    .unwrap();
    let trace = run.join("traces/seed4_point0");
    let o = fedaudit(&out, &["replay", trace.to_str().unwrap(), attack.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("reused"));
    let scores = fs::read_to_string(out.join("replay/seed4_point0/scores.csv")).unwrap();
    assert!(scores
        .lines()
        .skip(1)
        .all(|l| l.starts_with("fedmia_i,") || l.starts_with("grad_norm,")));

    let o = fedaudit(&out, &["replay", trace.to_str().unwrap(), cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "a full experiment config also works as an attack config");
}

#[test]
fn output_root_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    fs::write(
        &cfg,
        MINIMAL.replace("seeds = [3]", "name = \"env\"\nseeds = [3]\nsave_traces = false"),
    )
    .unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_fedaudit"))
        .args(["--jobs", "2", "run", cfg.to_str().unwrap()])
        .env("FEDAUDIT_OUT", dir.path().join("elsewhere"))
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(dir.path().join("elsewhere/env/metrics.csv").exists());
    assert!(!dir.path().join("elsewhere/env/traces").exists());
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("runs");
    let missing = dir.path().join("nope.toml");
    assert_eq!(code(&fedaudit(&out, &["run", missing.to_str().unwrap()])), 2);

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, MINIMAL.replace("clients = 3", "clients = 2")).unwrap();
    let o = fedaudit(&out, &["run", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("clients"));

    fs::write(&bad, "schema_version = 1\nname = [").unwrap();
    assert_eq!(code(&fedaudit(&out, &["run", bad.to_str().unwrap()])), 2);

    assert_eq!(code(&fedaudit(&out, &["report", dir.path().to_str().unwrap()])), 2);
}

#[test]
fn integrity_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    fs::write(&cfg, MINIMAL.replace("seeds = [3]", "name = \"t\"\nseeds = [3]")).unwrap();
    let out = dir.path().join("runs");
    assert_eq!(code(&fedaudit(&out, &["run", cfg.to_str().unwrap()])), 0);

    let trace = out.join("t/traces/seed3_point0");
    let bin = trace.join("round_0001.bin");
    let mut bytes = fs::read(&bin).unwrap();
    bytes.truncate(bytes.len() - 8);
    fs::write(&bin, bytes).unwrap();
    let o = fedaudit(&out, &["replay", trace.to_str().unwrap(), cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));

    let empty = dir.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    assert_eq!(
        code(&fedaudit(
            &out,
            &["replay", empty.to_str().unwrap(), cfg.to_str().unwrap()]
        )),
        3
    );

    fs::write(out.join("t/report.json"), "{").unwrap();
    assert_eq!(code(&fedaudit(&out, &["report", out.join("t").to_str().unwrap()])), 3);
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&fedaudit(dir.path(), &["frobnicate"])), 2);
    assert_eq!(code(&fedaudit(dir.path(), &["run"])), 2);
}
