use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_morselab"));
    c.env_remove("MORSELAB_THREADS");
    c
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn run(cmd: &mut Command) -> (i32, String, String) {
    let Output {
        status,
        stdout,
        stderr,
    } = cmd.output().unwrap();
    (
        status.code().unwrap(),
        String::from_utf8(stdout).unwrap(),
        String::from_utf8(stderr).unwrap(),
    )
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("cfg.json");
    fs::write(&path, body).unwrap();
    path
}

#[test]
fn validate_reports_growth() {
    let (code, out, _) = run(bin()
        .args(["validate", "--config"])
        .arg(config("double_well.json")));
    assert_eq!(code, 0);
    let growth: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(growth["pass"], true);
    assert_eq!(growth["alpha"], 3.5);
}

#[test]
fn growth_exponent_at_2p_exits_with_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"name": "bad", "grid": {"dim": 1, "extents": [1.0], "interior_counts": [16]}, "p": 2.0,
            "g": {"name": "doublewell", "params": [15.0, 1.0]}}"#,
    );
    let (code, _, err) = run(bin().args(["validate", "--config"]).arg(&cfg));
    assert_eq!(code, 2);
    assert!(err.contains("alpha"), "{err}");
    let (code, _, _) = run(bin()
        .args(["homology", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path()));
    assert_eq!(code, 2);
}

#[test]
fn homology_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out, err) = run(bin()
        .args(["homology", "--config"])
        .arg(config("double_well.json"))
        .arg("--out")
        .arg(dir.path()));
    assert_eq!(code, 0, "{out}\n{err}");
    assert!(out.contains("betti [1, 0]"), "{out}");
    for name in [
        "double_well_report.json",
        "double_well_counts.json",
        "double_well_cp2.csv",
    ] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
}

#[test]
fn check_mode_prints_checks_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let (code, out, _) = run(bin()
        .args(["homology", "--check", "--config"])
        .arg(config("convex_1d.json"))
        .arg("--out")
        .arg(&out_dir));
    assert_eq!(code, 0);
    assert!(out.lines().all(|l| l.starts_with("PASS ")), "{out}");
    assert!(out.contains("PASS contractible_homology"));
    assert!(!out_dir.exists());
}

#[test]
fn critical_points_and_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out, _) = run(bin()
        .args(["critical-points", "--seed", "99", "--config"])
        .arg(config("double_well.json"))
        .arg("--out")
        .arg(dir.path()));
    assert_eq!(code, 0);
    assert!(out.contains("3 critical points"));
    let report: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("double_well_report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["config"]["rng_seed"], 99);
    assert!(report["homology"].is_null());
}

#[test]
fn plot_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, _) = run(bin()
        .args(["plot", "--kind", "spectrum", "--config"])
        .arg(config("convex_1d.json"))
        .arg("--out")
        .arg(dir.path()));
    assert_eq!(code, 0);
    let text = fs::read_to_string(dir.path().join("convex_1d_spectrum.csv")).unwrap();
    assert!(text.starts_with("cp_id,eigenvalue_rank,eigenvalue\n0,0,"));
    let (code, _, err) = run(bin()
        .args(["plot", "--kind", "contour", "--config"])
        .arg(config("convex_1d.json"))
        .arg("--out")
        .arg(dir.path()));
    assert_eq!(code, 2);
    assert!(err.contains("contour"));
}

#[test]
fn thread_cap_does_not_change_the_report() {
    let reports: Vec<String> = ["1", "3"]
        .iter()
        .map(|threads| {
            let dir = tempfile::tempdir().unwrap();
            let (code, _, _) = run(bin()
                .env("MORSELAB_THREADS", threads)
                .args(["homology", "--config"])
                .arg(config("double_well.json"))
                .arg("--out")
                .arg(dir.path()));
            assert_eq!(code, 0);
            let mut v: serde_json::Value = serde_json::from_str(
                &fs::read_to_string(dir.path().join("double_well_report.json")).unwrap(),
            )
            .unwrap();
            v["timings"] = serde_json::Value::Null;
            v.to_string()
        })
        .collect();
    assert_eq!(reports[0], reports[1]);

    let (code, _, err) = run(bin()
        .env("MORSELAB_THREADS", "0")
        .args(["validate", "--config"])
        .arg(config("convex_1d.json")));
    assert_eq!(code, 2);
    assert!(err.contains("MORSELAB_THREADS"), "{err}");
}

#[test]
fn missing_config_is_an_error() {
    let (code, _, err) = run(bin().args(["homology", "--config", "/nonexistent/cfg.json"]));
    assert_eq!(code, 2);
    assert!(err.contains("/nonexistent/cfg.json"));
}
