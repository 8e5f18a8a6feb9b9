use std::fs;
use std::path::Path;

use morselab::discretization::GridSpec;
use morselab::experiment::{
    emit_plotdata, run, run_with, ExperimentConfig, GConfig, PlotKind, RunOptions, Stage,
};
use morselab::Error;

fn interval_config(name: &str, g: GConfig, p: f64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(name, GridSpec::interval(1.0, 64), p, g);
    cfg.rng_seed = 11;
    cfg
}

fn double_well() -> ExperimentConfig {
    interval_config(
        "dw",
        GConfig::named("doublewell", &[15.0, 1.0]).with_alpha(3.5),
        2.0,
    )
}

fn configs_dir() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs"))
}

#[test]
fn convex_run_has_one_minimum() {
    let r = run(&interval_config("zero", GConfig::named("zero", &[]), 2.0)).unwrap();
    assert_eq!(r.critical_points.len(), 1);
    assert_eq!(r.critical_points[0].index, 0);
    assert!(r.counts.is_empty());
    assert_eq!(r.betti(), Some(&[1][..]));
    assert!(r.all_checks_passed);
    assert!(r.stages.iter().all(|s| s.ok && s.error.is_none()));
}

#[test]
fn double_well_run() {
    let r = run(&double_well()).unwrap();
    let indices: Vec<usize> = r.critical_points.iter().map(|c| c.index).collect();
    assert_eq!(indices, vec![0, 0, 1]);
    let saddle = r.critical_points[2].id;
    let hits: Vec<usize> = r
        .counts
        .iter()
        .filter(|c| c.hi == saddle && c.mod2 == 1)
        .map(|c| c.lo)
        .collect();
    assert_eq!(hits, vec![0, 1]);
    let complex = r.complex.as_ref().unwrap();
    assert_eq!(complex.generators_by_degree, vec![vec![0, 1], vec![2]]);
    assert_eq!(
        complex.boundary_matrices[0],
        vec!["1".to_string(), "1".to_string()]
    );
    assert_eq!(r.boundary_squared_zero, Some(true));
    assert_eq!(r.betti(), Some(&[1, 0][..]));
    assert!(
        r.all_checks_passed,
        "{:?}",
        r.checks.iter().filter(|c| !c.pass).collect::<Vec<_>>()
    );
    for name in [
        "growth_condition",
        "linear_lyapunov",
        "hyperbolic_trace",
        "palais_smale",
        "symmetry_closure",
    ] {
        assert!(r.check(name).is_some_and(|c| c.pass), "{name}");
    }
}

#[test]
fn growth_exponent_at_2p_is_refused() {
    let cfg = interval_config("bad", GConfig::named("doublewell", &[15.0, 1.0]), 2.0);
    assert!(matches!(run(&cfg), Err(Error::Config(_))));
    let cfg = interval_config("bad", GConfig::named("zero", &[]).with_alpha(4.0), 2.0);
    assert!(run(&cfg).is_err());
}

#[test]
fn invalid_names_and_grids_are_refused() {
    let mut cfg = interval_config("a/b", GConfig::named("zero", &[]), 2.0);
    assert!(run(&cfg).is_err());
    cfg.name = "ok".into();
    cfg.grid = GridSpec::rectangle([1.0, 1.0], [8, 8]);
    cfg.p = 1.0;
    assert!(run(&cfg).is_err());
    cfg.p = 2.0;
    cfg.g = GConfig::named("no_such_family", &[]);
    assert!(run(&cfg).is_err());
}

#[test]
fn partial_runs_stop_at_the_requested_stage() {
    let a = run_with(
        &double_well(),
        RunOptions {
            through: Stage::CriticalPoints,
        },
    )
    .unwrap();
    assert_eq!(a.points.len(), 3);
    assert!(a.report.counts.is_empty() && a.report.homology.is_none());
    assert!(a.trajectories.is_empty());
    let a = run_with(
        &double_well(),
        RunOptions {
            through: Stage::Growth,
        },
    )
    .unwrap();
    assert!(a.points.is_empty() && a.report.critical_points.is_empty());
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    let cfg = double_well();
    let one = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let four = rayon::ThreadPoolBuilder::new()
        .num_threads(4)
        .build()
        .unwrap();
    let a = one.install(|| run(&cfg)).unwrap().canonical_json().unwrap();
    let b = four
        .install(|| run(&cfg))
        .unwrap()
        .canonical_json()
        .unwrap();
    assert_eq!(a, b);
}

#[test]
fn seed_changes_search_but_not_results() {
    let mut cfg = double_well();
    let a = run(&cfg).unwrap();
    cfg.rng_seed = 12345;
    let b = run(&cfg).unwrap();
    assert_eq!(a.betti(), b.betti());
    assert_eq!(a.critical_points.len(), b.critical_points.len());
    for (x, y) in a.critical_points.iter().zip(&b.critical_points) {
        assert!((x.energy - y.energy).abs() < 1e-10);
    }
}

#[test]
fn outputs_and_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let a = run_with(&double_well(), RunOptions::default()).unwrap();
    let files = morselab::experiment::write_outputs(&a, dir.path()).unwrap();
    for name in [
        "dw_cp0.csv",
        "dw_cp1.csv",
        "dw_cp2.csv",
        "dw_report.json",
        "dw_counts.json",
    ] {
        assert!(files.contains(&dir.path().join(name)), "{name}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("dw_report.json")).unwrap())
            .unwrap();
    assert_eq!(report["homology"]["betti"], serde_json::json!([1, 0]));

    let spectrum = emit_plotdata(&a, PlotKind::Spectrum, dir.path()).unwrap();
    assert_eq!(spectrum, vec![dir.path().join("dw_spectrum.csv")]);
    let text = fs::read_to_string(&spectrum[0]).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("cp_id,eigenvalue_rank,eigenvalue"));
    assert_eq!(lines.count(), 3 * 64);

    let traj = emit_plotdata(&a, PlotKind::Trajectories, dir.path()).unwrap();
    assert_eq!(traj.len(), a.trajectories.len());
    assert!(traj.iter().all(|p| p
        .file_name()
        .unwrap()
        .to_str()
        .unwrap()
        .starts_with("dw_trajectories_cp2_shot")));

    let land = emit_plotdata(&a, PlotKind::EnergyLandscape, dir.path()).unwrap();
    assert_eq!(
        fs::read_to_string(&land[0]).unwrap().lines().count(),
        1 + 41 * 41
    );

    let mut flat = ExperimentConfig::new(
        "flat2d",
        GridSpec::rectangle([1.0, 1.0], [5, 5]),
        2.0,
        GConfig::named("zero", &[]),
    );
    flat.rng_seed = 1;
    let a = run_with(&flat, RunOptions::default()).unwrap();
    assert!(matches!(
        emit_plotdata(&a, PlotKind::EnergyLandscape, dir.path()),
        Err(Error::Refused(_))
    ));
    assert!("contour".parse::<PlotKind>().is_err());
    assert_eq!(
        "energy_landscape".parse::<PlotKind>().unwrap(),
        PlotKind::EnergyLandscape
    );
}

#[test]
fn shipped_configs_round_trip() {
    let mut seen = 0;
    for entry in fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        let cfg = ExperimentConfig::load(&path).unwrap();
        cfg.functional().unwrap();
        let again = ExperimentConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(cfg, again);
        seen += 1;
    }
    assert!(seen >= 4);
}

#[test]
fn unknown_config_keys_are_rejected() {
    let text = r#"{"name": "x", "grid": {"dim": 1, "extents": [1.0], "interior_counts": [8]}, "p": 2.0,
                  "g": {"name": "zero"}, "typo": 1}"#;
    assert!(ExperimentConfig::from_json(text).is_err());
    let ok = text.replace(r#", "typo": 1"#, "");
    let cfg = ExperimentConfig::from_json(&ok).unwrap();
    assert_eq!(cfg.rng_seed, 0);
    assert_eq!(cfg.g.window, (-10.0, 10.0));
}

/// Every serialized key has a schema entry and vice versa; listed defaults match.
fn check_schema(schema: &serde_json::Value, value: &serde_json::Value, path: &str) {
    let props = schema["properties"]
        .as_object()
        .unwrap_or_else(|| panic!("{path}: no properties"));
    let obj = value.as_object().unwrap();
    let mut want: Vec<&String> = obj.keys().collect();
    let mut have: Vec<&String> = props.keys().collect();
    want.sort();
    have.sort();
    assert_eq!(want, have, "{path}");
    for (k, v) in obj {
        let sub = &props[k];
        if let Some(d) = sub.get("default") {
            assert_eq!(d, v, "{path}.{k}");
        }
        if sub["type"] == "object" {
            check_schema(sub, v, &format!("{path}.{k}"));
        }
    }
}

#[test]
fn schema_matches_config() {
    let text = fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../../docs/experiment_config.schema.json"
    ))
    .unwrap();
    let schema: serde_json::Value = serde_json::from_str(&text).unwrap();
    let mut cfg = ExperimentConfig::new(
        "x",
        GridSpec::interval(1.0, 4),
        2.0,
        GConfig::named("zero", &[]),
    );
    cfg.rng_seed = 0;
    check_schema(&schema, &serde_json::to_value(&cfg).unwrap(), "config");
}
