use std::fs;
use std::path::Path;
use std::process::Command;

use cpnav::harness::scenarios::{Scenario, ScenarioKind};
use cpnav_cli::{parse_config, Overrides, RunConfig};

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn cpnav() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cpnav"))
}

#[test]
fn empty_config_gives_defaults() {
    let d = tempfile::tempdir().unwrap();
    let p = write(d.path(), "empty.toml", "");
    let cfg = parse_config(Some(&p), &Overrides::default()).unwrap();
    assert_eq!(cfg.scenario, Scenario::preset(ScenarioKind::PlanOffline));
    assert_eq!(cfg, parse_config(None, &Overrides::default()).unwrap());
}

#[test]
fn scenario_kind_in_file_selects_preset() {
    let d = tempfile::tempdir().unwrap();
    let p = write(
        d.path(),
        "c.toml",
        "[scenario]\nkind = \"drop\"\ntrials = 3\n",
    );
    let cfg = parse_config(Some(&p), &Overrides::default()).unwrap();
    let mut expected = Scenario::preset(ScenarioKind::Drop);
    expected.trials = 3;
    assert_eq!(cfg.scenario, expected);
}

#[test]
fn seed_flag_overrides_file() {
    let d = tempfile::tempdir().unwrap();
    let p = write(d.path(), "c.toml", "[scenario]\nseed = 7\n");
    let ov = Overrides {
        seed: Some(42),
        ..Default::default()
    };
    assert_eq!(parse_config(Some(&p), &ov).unwrap().scenario.seed, 42);
    assert_eq!(
        parse_config(Some(&p), &Overrides::default())
            .unwrap()
            .scenario
            .seed,
        7
    );
}

#[test]
fn negative_mass_names_the_field() {
    let d = tempfile::tempdir().unwrap();
    let p = write(d.path(), "c.toml", "[robot]\nmass = -1.0\n");
    let msg = parse_config(Some(&p), &Overrides::default())
        .unwrap_err()
        .to_string();
    assert!(msg.contains("mass"), "{msg}");
}

#[test]
fn unknown_key_is_rejected() {
    let d = tempfile::tempdir().unwrap();
    let p = write(d.path(), "c.toml", "[robot]\nmas = 1.0\n");
    let msg = parse_config(Some(&p), &Overrides::default())
        .unwrap_err()
        .to_string();
    assert!(msg.contains("mas"), "{msg}");
}

#[test]
fn syntax_error_reports_line() {
    let d = tempfile::tempdir().unwrap();
    let p = write(d.path(), "c.toml", "[scenario]\nseed = = 3\n");
    let msg = parse_config(Some(&p), &Overrides::default())
        .unwrap_err()
        .to_string();
    assert!(msg.contains("line 2"), "{msg}");
}

#[test]
fn config_round_trips() {
    let cfg = parse_config(None, &Overrides::default()).unwrap();
    let text = toml::to_string(&cfg).unwrap();
    let back: RunConfig = toml::from_str(&text).unwrap();
    assert_eq!(cfg, back);
}

#[test]
fn binary_reports_one_line_error() {
    let d = tempfile::tempdir().unwrap();
    let p = write(d.path(), "c.toml", "[robot]\nmass = -1.0\n");
    let out = cpnav().arg("run").arg("--config").arg(&p).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim().lines().count(), 1, "{err}");
    assert!(err.starts_with("error kind=validation field=mass"), "{err}");
}

fn run_drop(out: &Path) {
    let status = cpnav()
        .args([
            "run",
            "--scenario",
            "drop",
            "--trials",
            "2",
            "--seed",
            "5",
            "--out",
        ])
        .arg(out)
        .env_remove("CPNAV_OUT")
        .output()
        .unwrap();
    assert!(
        status.status.success(),
        "{}",
        String::from_utf8_lossy(&status.stderr)
    );
}

fn snapshot(dir: &Path) -> Vec<(std::ffi::OsString, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| !e.file_name().to_string_lossy().contains("timing"))
        .map(|e| (e.file_name(), fs::read(e.path()).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn outputs_land_under_out_dir_and_rerun_is_identical() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("run");
    run_drop(&out);
    let first = snapshot(&out);
    for n in [
        "drop_metrics.csv",
        "drop_summary.toml",
        "drop_compliant_0.3m_trace.csv",
    ] {
        assert!(first.iter().any(|(x, _)| x == n), "missing {n}");
    }
    assert!(out.join("drop_timing.csv").exists());
    run_drop(&out);
    assert_eq!(first, snapshot(&out));
}

#[test]
fn env_sets_default_out_dir() {
    let d = tempfile::tempdir().unwrap();
    let out = cpnav()
        .args(["map", "--gen", "--n", "5", "--seed", "1"])
        .env("CPNAV_OUT", d.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(d.path().join("map_n5_seed1.toml").exists());
}
