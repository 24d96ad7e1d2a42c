//! Runs the `tiltsens` binary on small synthetic inputs.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tiltsens_cli::Artifact;
use tiltsens_core::estimator::induced_mean;
use tiltsens_core::sim::synthetic_birthweight;
use tiltsens_core::*;

struct Setup {
    dir: tempfile::TempDir,
    ds: Dataset,
}

fn setup() -> Setup {
    let dir = tempfile::tempdir().unwrap();
    let ds = synthetic_birthweight(240, 5).unwrap();
    ds.write_csv_path(dir.path().join("data.csv")).unwrap();
    std::fs::write(dir.path().join("schema.json"), serde_json::to_string(&ds.schema()).unwrap()).unwrap();
    Setup { dir, ds }
}

fn base_config() -> Value {
    json!({
        "data": "data.csv",
        "schema": "schema.json",
        "seed": 9,
        "k": 2,
        "nuisance": { "outcome": { "restarts": 1 } }
    })
}

fn run(s: &Setup, cmd: &str, cfg: &Value, out: &str) -> (Output, PathBuf) {
    let cfg_path = s.dir.path().join(format!("{out}.json"));
    std::fs::write(&cfg_path, cfg.to_string()).unwrap();
    let out = s.dir.path().join(out);
    let o = Command::new(env!("CARGO_BIN_EXE_tiltsens"))
        .arg(cmd)
        .arg("--config")
        .arg(&cfg_path)
        .arg("--out")
        .arg(&out)
        .arg("--threads")
        .arg("1")
        .output()
        .unwrap();
    (o, out)
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn read_csv(p: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(p).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect()
}

#[test]
fn missing_outcome_column_is_a_schema_error() {
    let s = setup();
    let mut schema = s.ds.schema();
    schema.columns.remove(s.ds.outcome_name());
    schema.columns.insert("birthweight_missing".into(), serde_json::from_value(json!({"role": "outcome"})).unwrap());
    std::fs::write(s.dir.path().join("schema.json"), serde_json::to_string(&schema).unwrap()).unwrap();
    let (o, _) = run(&s, "fit", &base_config(), "fit");
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn config_errors_exit_with_two() {
    let s = setup();
    let mut cfg = base_config();
    cfg.as_object_mut().unwrap().remove("seed");
    assert_eq!(code(&run(&s, "estimate", &cfg, "noseed").0), 2);
    let mut cfg = base_config();
    cfg["k"] = json!(1);
    assert_eq!(code(&run(&s, "estimate", &cfg, "k1").0), 2);
    let (o, _) = run(&s, "gof", &base_config(), "nogof");
    assert_eq!(code(&o), 2);
}

#[test]
fn fit_writes_versioned_artifact_and_telemetry() {
    let s = setup();
    let (o, out) = run(&s, "fit", &base_config(), "fit");
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let a = Artifact::load(&out.join("nuisance.json")).unwrap();
    assert_eq!(a.version, tiltsens_cli::ARTIFACT_VERSION);
    assert_eq!(a.covariates, s.ds.covariate_names());
    let tel: Value = serde_json::from_str(&std::fs::read_to_string(out.join("fit_telemetry.json")).unwrap()).unwrap();
    assert_eq!(tel["outcome"].as_array().unwrap().len(), 2);

    // the saved fit can drive a simulation
    let mut cfg = base_config();
    cfg["simulate"] = json!({
        "truth": { "source": "artifact", "path": out.join("nuisance.json") },
        "settings": { "gamma1": [0.0, 0.001], "gamma0": [0.0], "sample_sizes": [300], "replications": 1, "k": 2,
                      "ci": { "method": "normal" }, "nuisance": { "outcome": { "restarts": 1 } } }
    });
    let (o, sim) = run(&s, "simulate", &cfg, "sim");
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_csv(&sim.join("simulation_arm1.csv")).len(), 2);
    assert_eq!(read_csv(&sim.join("simulation_arm0.csv")).len(), 1);
}

#[test]
fn estimate_grid_contour_and_partial_exit() {
    let s = setup();
    let mut cfg = base_config();
    cfg["tilt"] = json!({ "gamma1": [0.0, 0.001, 0.002], "gamma0": [-0.001, 0.0] });
    let (o, out) = run(&s, "estimate", &cfg, "grid");
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_csv(&out.join("grid.csv")).len(), 6);
    assert!(std::fs::read_to_string(out.join("contour.svg")).unwrap().starts_with("<svg"));

    cfg["tilt"] = json!({ "gamma1": [0.0, 50.0], "gamma0": [0.0] });
    let (o, out) = run(&s, "estimate", &cfg, "partial");
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_csv(&out.join("grid.csv"));
    assert_eq!(rows[1].last().unwrap(), "failed");
    assert!(!out.join("contour.svg").exists());
}

#[test]
fn induced_endpoint_matches_direct_computation() {
    let s = setup();
    let mut cfg = base_config();
    cfg["tilt"] = json!({ "gamma1": [0.0, 0.002], "gamma0": [-0.002, 0.0] });
    let (o, out) = run(&s, "induced", &cfg, "induced");
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_csv(&out.join("induced.csv"));
    assert_eq!(rows.len(), 4);

    let mut nc = NuisanceConfig::default();
    nc.outcome.restarts = 1;
    let plan = make_folds(&s.ds, 2, 9).unwrap();
    let cf = CrossFit::fit(&s.ds, &plan, &nc).unwrap();
    let r = cf.arm(&s.ds, &TiltSpec::null(Arm::Treated)).unwrap();
    let direct = induced_mean(r.psi, &s.ds, Arm::Treated).unwrap();
    let row = rows.iter().find(|r| r[0] == Arm::Treated.to_string() && r[1] == "0").unwrap();
    assert!((row[4].parse::<f64>().unwrap() - direct).abs() < 1e-9 * direct.abs());
}

#[test]
fn summary_and_gof_outputs() {
    let s = setup();
    let (o, out) = run(&s, "summary", &base_config(), "summary");
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let naive = read_csv(&out.join("naive.csv"));
    let expect = s.ds.arm_mean(Arm::Treated) - s.ds.arm_mean(Arm::Control);
    assert!((naive[0][0].parse::<f64>().unwrap() - expect).abs() < 1e-9);

    let mut cfg = base_config();
    cfg["gof"] = json!({
        "subgroups": [{ "name": "all", "conditions": {} }, { "name": "young", "conditions": { "age": { "max": 25 } } }],
        "n_synth": 2000,
        "parametric": true
    });
    let (o, out) = run(&s, "gof", &cfg, "gof");
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_csv(&out.join("gof.csv")).len(), 2);
    assert_eq!(read_csv(&out.join("gof_parametric.csv")).len(), 2);
}
