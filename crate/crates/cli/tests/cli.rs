//! End-to-end tests of the binary: subcommands, exit codes, output
//! formats, and determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hiertmle"))
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

fn small_config(dir: &Path, extra: serde_json::Value) -> PathBuf {
    let mut cfg = serde_json::json!({
        "dgp": {
            "j_communities": 30,
            "n_individuals": {"kind": "fixed", "n": 4},
            "f_e": [{"kind": "uniform", "lo": -1.0, "hi": 1.0}],
            "f_w": [{"intercept": 0.0, "e_coefs": [0.0, 0.3], "sd": 0.7}],
            "rho_w": 0.2,
            "f_a": {"kind": "logistic", "intercept": 0.2, "e_coefs": [0.0, 0.8], "w_mean_coefs": [0.6]},
            "f_y": {
                "link": "expit", "intercept": -0.4, "a_coef": 0.8,
                "e_coefs": [0.0, 0.7], "w_coefs": [0.5],
                "noise": {"kind": "bernoulli"}
            }
        },
        "interventions": [
            {"kind": "static", "name": "treat", "a_star": 1.0},
            {"kind": "static", "name": "control", "a_star": 0.0}
        ],
        "contrasts": [["treat", "control"]],
        "density": {"cv_folds": 3},
        "outcome": {"cv_folds": 3}
    });
    if let serde_json::Value::Object(add) = extra {
        cfg.as_object_mut().unwrap().extend(add);
    }
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn run_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn simulate_writes_expected_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), serde_json::json!({}));
    let out_path = dir.path().join("data.csv");
    let out = bin()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .args(["--seed", "5", "--out"])
        .arg(&out_path)
        .output()
        .unwrap();
    run_ok(&out);
    let text = std::fs::read_to_string(&out_path).unwrap();
    // header + 30 communities x 4 individuals
    assert_eq!(text.lines().count(), 1 + 30 * 4);
    assert!(text.lines().next().unwrap().starts_with("community_id,a,e_1,e_2,w_1,y,alpha"));
}

#[test]
fn simulate_defaults_seed_to_42_and_logs_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), serde_json::json!({}));
    let out_path = dir.path().join("d.csv");
    let out = bin()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_path)
        .output()
        .unwrap();
    run_ok(&out);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("42"), "stderr: {stderr}");
}

#[test]
fn malformed_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{ not json").unwrap();
    let out = bin().args(["simulate", "--config"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unwritable_output_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), serde_json::json!({}));
    let out = bin()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .args(["--seed", "1", "--out", "/nonexistent-dir-xyz/data.csv"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn estimate_emits_valid_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), serde_json::json!({"emit_eic": true}));
    let report_path = dir.path().join("report.json");
    let out = bin()
        .args(["estimate", "--config"])
        .arg(&cfg)
        .args(["--seed", "3", "--out"])
        .arg(&report_path)
        .output()
        .unwrap();
    run_ok(&out);

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    let schema_text =
        std::fs::read_to_string(repo_root().join("schemas/report.schema.json")).unwrap();
    let schema: serde_json::Value = serde_json::from_str(&schema_text).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator.iter_errors(&report).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "schema violations: {errors:#?}");

    let reports = report["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 2);
    for r in reports {
        let psi = r["psi_hat"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&psi));
        assert!(r["eic"].as_array().unwrap().len() == 30);
    }
    assert_eq!(report["contrasts"].as_array().unwrap().len(), 1);
}

#[test]
fn estimate_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), serde_json::json!({}));
    let (p1, p2) = (dir.path().join("r1.json"), dir.path().join("r2.json"));
    for p in [&p1, &p2] {
        let out = bin()
            .args(["estimate", "--config"])
            .arg(&cfg)
            .args(["--seed", "9", "--out"])
            .arg(p)
            .output()
            .unwrap();
        run_ok(&out);
    }
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
}

#[test]
fn individual_level_on_varying_sizes_warns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(
        dir.path(),
        serde_json::json!({
            "dgp": {
                "j_communities": 25,
                "n_individuals": {"kind": "uniform_int", "lo": 2, "hi": 6},
                "f_w": [{"intercept": 0.0, "sd": 1.0}],
                "f_a": {"kind": "logistic", "intercept": 0.0, "w_mean_coefs": [0.5]},
                "f_y": {
                    "link": "expit", "intercept": -0.2, "a_coef": 0.6,
                    "w_coefs": [0.4], "noise": {"kind": "bernoulli"}
                }
            },
            "targeting": {"level": "individual"},
            "outcome": {"level": "pooled_individual", "cv_folds": 3}
        }),
    );
    let report_path = dir.path().join("report.json");
    let out = bin()
        .args(["estimate", "--config"])
        .arg(&cfg)
        .args(["--seed", "2", "--out"])
        .arg(&report_path)
        .output()
        .unwrap();
    run_ok(&out);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    let warnings = report["reports"][0]["diagnostics"]["warnings"].as_array().unwrap();
    assert!(
        warnings.iter().any(|w| w.as_str().unwrap().contains("constant")),
        "warnings: {warnings:?}"
    );
}

#[test]
fn estimate_from_csv_input() {
    let dir = tempfile::tempdir().unwrap();
    // simulate, then re-estimate from the written file
    let sim_cfg = small_config(dir.path(), serde_json::json!({}));
    let data = dir.path().join("data.csv");
    let out = bin()
        .args(["simulate", "--config"])
        .arg(&sim_cfg)
        .args(["--seed", "4", "--out"])
        .arg(&data)
        .output()
        .unwrap();
    run_ok(&out);

    let est_cfg_path = dir.path().join("estimate.json");
    std::fs::write(
        &est_cfg_path,
        serde_json::to_string(&serde_json::json!({
            "input": data,
            "interventions": [{"kind": "static", "name": "treat", "a_star": 1.0}],
            "density": {"cv_folds": 3},
            "outcome": {"cv_folds": 3}
        }))
        .unwrap(),
    )
    .unwrap();
    let report_path = dir.path().join("report.json");
    let out = bin()
        .args(["estimate", "--config"])
        .arg(&est_cfg_path)
        .args(["--seed", "4", "--out"])
        .arg(&report_path)
        .output()
        .unwrap();
    run_ok(&out);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report["reports"][0]["j_communities"].as_u64(), Some(30));
}

#[test]
fn benchmark_writes_rows_plus_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(
        dir.path(),
        serde_json::json!({
            "benchmark": {"replicates": 10, "oracle_draws": 10000},
            "interventions": [{"kind": "static", "name": "treat", "a_star": 1.0}],
            "contrasts": []
        }),
    );
    let out_path = dir.path().join("bench.csv");
    let out = bin()
        .args(["benchmark", "--config"])
        .arg(&cfg)
        .args(["--seed", "6", "--threads", "2", "--out"])
        .arg(&out_path)
        .output()
        .unwrap();
    run_ok(&out);
    let text = std::fs::read_to_string(&out_path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1 + 10 + 1, "{text}");
    assert!(lines[0].starts_with("replicate,psi_hat"));
    assert!(lines.last().unwrap().starts_with("aggregate,"));
    for line in &lines[1..=10] {
        let covered = line.split(',').nth(5).unwrap();
        assert!(covered == "0" || covered == "1", "covered = {covered}");
    }
}

#[test]
fn report_pretty_prints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), serde_json::json!({}));
    let report_path = dir.path().join("report.json");
    let out = bin()
        .args(["estimate", "--config"])
        .arg(&cfg)
        .args(["--seed", "8", "--out"])
        .arg(&report_path)
        .output()
        .unwrap();
    run_ok(&out);
    let out = bin().args(["report", "--input"]).arg(&report_path).output().unwrap();
    run_ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("intervention"));
    assert!(stdout.contains("treat"));
    assert!(stdout.contains("contrast"));
}
