use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const MINIMAL: &str = r#"{"grid": {"dimension": 1, "half_width": 1, "spacing": 1}, "profile": {"kind": "constant"}, "nmax": 2,
  "verify": {"nmax_ladder": [2, 3]}, "scan": {"couplings": [0], "nmax": 2}}"#;

fn polaron(dir: &Path, args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_polaron"));
    cmd.current_dir(dir).args(args).env("RUST_LOG", "info");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn setup(config: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("config.json");
    fs::write(&path, config).unwrap();
    (dir, path)
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn schema_valid(schema: &str, doc: &Value) {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/schemas").join(schema);
    let schema: Value = serde_json::from_str(&fs::read_to_string(root).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator.iter_errors(doc).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{errors:?}");
}

#[test]
fn build_minimal_and_cache_hit() {
    let (dir, _) = setup(MINIMAL);
    let first = polaron(dir.path(), &["build", "--config", "config.json", "--out", "run"], &[]);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let a = stdout_json(&first);
    assert_eq!(a["dimension"], 6);
    assert_eq!(a["cache_hit"], false);
    let bytes = fs::read(dir.path().join("run/matrices/hamiltonian.bin")).unwrap();

    let second = polaron(dir.path(), &["build", "--config", "config.json", "--out", "run"], &[]);
    let b = stdout_json(&second);
    assert_eq!(b["cache_hit"], true);
    assert!(String::from_utf8_lossy(&second.stderr).contains("cache hit"));
    assert_eq!(fs::read(dir.path().join("run/matrices/hamiltonian.bin")).unwrap(), bytes);
    assert_eq!(a["hamiltonian_sha256"], b["hamiltonian_sha256"]);

    let manifest: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("run/manifest.json")).unwrap()).unwrap();
    schema_valid("manifest.schema.json", &manifest);
}

#[test]
fn config_errors_exit_two() {
    let bad_grid = MINIMAL.replace("\"half_width\": 1,", "\"half_width\": 1.5,");
    let (dir, _) = setup(&bad_grid);
    let out = polaron(dir.path(), &["build", "--config", "config.json", "--out", "run"], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("multiple"));

    let typo = MINIMAL.replace("\"nmax\": 2,", "\"nmaxx\": 2,");
    let (dir, _) = setup(&typo);
    let out = polaron(dir.path(), &["build", "--config", "config.json", "--out", "run"], &[]);
    assert_eq!(out.status.code(), Some(2));

    let (dir, _) = setup(MINIMAL);
    let out = polaron(dir.path(), &["build", "--config", "config.json", "--out", "run"], &[("POLARON_SOLVER__TYPO", "1")]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn free_spectrum_matches_schema() {
    let (dir, _) = setup(MINIMAL);
    let out = polaron(dir.path(), &["spectrum", "--config", "config.json", "--out", "run"], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s = stdout_json(&out);
    assert_eq!(s["ground_energy"], 0.0);
    assert_eq!(s["eigenvalues"].as_array().unwrap().len(), 1);
    schema_valid("spectral_result.schema.json", &s);
}

#[test]
fn verify_filter_and_unknown_id() {
    let cfg = MINIMAL.replace("\"nmax\": 2,", "\"nmax\": 2, \"coupling\": 0.1,");
    let (dir, _) = setup(&cfg);
    assert!(polaron(dir.path(), &["build", "--config", "config.json", "--out", "run"], &[]).status.success());
    let out = polaron(dir.path(), &["verify", "run", "--filter", "id3"], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("run/results/verification.json")).unwrap()).unwrap();
    assert_eq!(doc["reports"].as_array().unwrap().len(), 1);
    assert_eq!(doc["reports"][0]["classification"], "exact");
    assert_eq!(doc["reports"][0]["passed"], true);
    schema_valid("verification_manifest.schema.json", &doc);

    let out = polaron(dir.path(), &["verify", "run", "--filter", "no_such_identity"], &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn exact_failure_exits_one() {
    let cfg = MINIMAL.replace("\"nmax\": 2,", "\"nmax\": 2, \"coupling\": 0.1,");
    let (dir, _) = setup(&cfg);
    let env = [("POLARON_VERIFY__THRESHOLDS__EXACT", "0")];
    let out = polaron(dir.path(), &["verify", "--config", "config.json", "--out", "run", "--filter", "id3"], &env);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn free_verify_reports_absent_with_warning() {
    let (dir, _) = setup(MINIMAL);
    let out = polaron(dir.path(), &["verify", "--config", "config.json", "--out", "run", "--filter", "norm_identity,id3"], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let o = stdout_json(&out);
    assert_eq!(o["warning"], true);
    let doc: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("run/results/verification.json")).unwrap()).unwrap();
    let norm = doc["reports"].as_array().unwrap().iter().find(|r| r["id"] == "norm_identity").unwrap();
    assert_eq!(norm["absent"], true);
}

#[test]
fn scan_single_free_row_and_report() {
    let (dir, _) = setup(MINIMAL);
    let out = polaron(dir.path(), &["scan", "--config", "config.json", "--out", "scan"], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s = stdout_json(&out);
    assert_eq!(s["points"].as_array().unwrap().len(), 1);
    assert_eq!(s["points"][0]["count"], 1);
    assert!(s["g_star"].is_null());
    schema_valid("scan_result.schema.json", &s);
    assert!(dir.path().join("scan/points/000-g0/point.json").exists());

    let out = polaron(dir.path(), &["report", "scan"], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("scan/tables/scan.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert_eq!(header, polaron::scan::ScanResult::CSV_HEADER);
    for field in ["coupling", "e0", "nu1", "nu2", "count", "min_one_particle", "c0", "a_norm", "norm_identity_residual"] {
        assert!(header.split(',').any(|h| h == field), "{field}");
    }
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn single_run_report_one_row() {
    let (dir, _) = setup(MINIMAL);
    assert!(polaron(dir.path(), &["spectrum", "--config", "config.json", "--out", "run"], &[]).status.success());
    let out = polaron(dir.path(), &["report", "run"], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("run/tables/summary.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(String::from_utf8_lossy(&out.stdout).contains("spectrum:"));
}

#[test]
fn report_without_results_fails() {
    let (dir, _) = setup(MINIMAL);
    assert!(polaron(dir.path(), &["build", "--config", "config.json", "--out", "run"], &[]).status.success());
    let out = polaron(dir.path(), &["report", "run"], &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn corruption_exits_four() {
    let (dir, _) = setup(MINIMAL);
    assert!(polaron(dir.path(), &["spectrum", "--config", "config.json", "--out", "run"], &[]).status.success());

    // tampered manifest
    let path = dir.path().join("run/manifest.json");
    let original = fs::read_to_string(&path).unwrap();
    fs::write(&path, original.replace("\"coupling\": 0.0", "\"coupling\": 0.5")).unwrap();
    let out = polaron(dir.path(), &["report", "run"], &[]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    fs::write(&path, &original).unwrap();

    // tampered matrix
    let bin = dir.path().join("run/matrices/hamiltonian.bin");
    let mut bytes = fs::read(&bin).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    fs::write(&bin, bytes).unwrap();
    let out = polaron(dir.path(), &["spectrum", "run"], &[]);
    assert_eq!(out.status.code(), Some(4));
    let out = polaron(dir.path(), &["build", "--config", "config.json", "--out", "run"], &[]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn env_and_seed_overrides_reach_manifest() {
    let (dir, _) = setup(MINIMAL);
    let out = polaron(dir.path(), &["build", "--config", "config.json", "--out", "run", "--seed", "9"], &[("POLARON_COUPLING", "0.25")]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("run/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["coupling"], 0.25);
    assert_eq!(manifest["config"]["solver"]["seed"], 9);
}

#[test]
fn full_verify_then_report_round_trips() {
    let cfg = MINIMAL.replace("\"nmax\": 2,", "\"nmax\": 3, \"coupling\": 0.1,");
    let (dir, _) = setup(&cfg);
    let out = polaron(dir.path(), &["verify", "--config", "config.json", "--out", "run"], &[]);
    assert!(out.status.code().is_some_and(|c| c <= 1), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("run/results/verification.json")).unwrap()).unwrap();
    assert!(doc["reports"].as_array().unwrap().iter().any(|r| r["threshold"].is_null()));
    schema_valid("verification_manifest.schema.json", &doc);
    let out = polaron(dir.path(), &["report", "run"], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("verification:"));
}
