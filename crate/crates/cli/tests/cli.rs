use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn locsvm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_locsvm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_in(out: &Path, cmd: &str, config: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        cmd,
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    locsvm(&args)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Writes `text` as a config file next to the fixtures' relative paths.
fn temp_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn train_fixture_text() -> String {
    std::fs::read_to_string(fixture("train.toml")).unwrap()
}

#[test]
fn train_matches_golden_summary() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), "train", &fixture("train.toml"), &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let got = std::fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    let want = std::fs::read_to_string(fixture("../golden/train_summary.txt")).unwrap();
    assert_eq!(got, want);
    let model: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("model.json")).unwrap())
            .unwrap();
    assert_eq!(model["locals"].as_array().unwrap().len(), 3);
}

#[test]
fn single_region_reports_global_model() {
    let dir = tempfile::tempdir().unwrap();
    let text = train_fixture_text()
        .replace("regions = 3", "regions = 1")
        .replace("lambdas = [0.5, 1.0, 2.0]", "lambda = 0.5");
    let cfg = temp_config(dir.path(), &text);
    let o = run_in(dir.path(), "train", &cfg, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("regions      1 (global model)"));
}

#[test]
fn missing_csv_is_an_input_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(fixture("csv.toml"))
        .unwrap()
        .replace("small.csv", "does-not-exist.csv");
    let cfg = temp_config(dir.path(), &text);
    let o = run_in(dir.path(), "train", &cfg, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("does-not-exist.csv"), "{}", stderr(&o));
}

#[test]
fn malformed_csv_reports_the_line() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.csv"), "x0,y\n0.1,1\nabc,-1\n").unwrap();
    let text = std::fs::read_to_string(fixture("csv.toml"))
        .unwrap()
        .replace("small.csv", "bad.csv");
    let cfg = temp_config(dir.path(), &text);
    let o = run_in(dir.path(), "train", &cfg, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn unknown_config_keys_are_rejected_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = temp_config(
        dir.path(),
        &format!("{}\n[model2]\nx = 1\n", train_fixture_text()),
    );
    let o = run_in(dir.path(), "train", &cfg, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line"), "{}", stderr(&o));
}

#[test]
fn contamination_level_above_one_half_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let text = train_fixture_text().replace(
        "maxbias_eps = 0.1",
        "maxbias_eps = 0.1\neps_ladder = [0.6, 0.3]",
    );
    let cfg = temp_config(dir.path(), &text);
    let o = run_in(dir.path(), "train", &cfg, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("0.6"), "{}", stderr(&o));

    let text = train_fixture_text().replace("maxbias_eps = 0.1", "maxbias_eps = 0.6");
    let cfg = temp_config(dir.path(), &text);
    assert_eq!(
        run_in(dir.path(), "train", &cfg, &[]).status.code(),
        Some(2)
    );
}

#[test]
fn non_convergence_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let text = train_fixture_text().replace(
        "lambdas = [0.5, 1.0, 2.0]",
        "lambdas = [0.5, 1.0, 2.0]\nmax_iter = 1",
    );
    let cfg = temp_config(dir.path(), &text);
    let o = run_in(dir.path(), "train", &cfg, &[]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("region"), "{}", stderr(&o));
}

#[test]
fn audit_of_fixture_is_satisfied() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture("train.toml");
    assert!(run_in(dir.path(), "train", &cfg, &[]).status.success());
    let model = dir.path().join("model.json");
    let o = run_in(
        dir.path(),
        "audit",
        &cfg,
        &["--model", model.to_str().unwrap()],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("audit.json")).unwrap())
            .unwrap();
    // Gaussian RBF with logistic loss: 2 Σ 1/λ_b for λ = (0.5, 1, 2)
    assert_eq!(report["if_bound_rough"], 7.0);
    assert_eq!(report["satisfied"]["if"], true);
    assert_eq!(report["satisfied"]["maxbias"], true);
    let empirical = &report["empirical"];
    for key in ["if_sup", "maxbias_sup", "decomposition_residual"] {
        assert!(empirical[key].is_number(), "{key}");
    }
    let ladder = empirical["ladder"].as_array().unwrap();
    assert_eq!(ladder.len(), 4);
    assert!(ladder[0]["h_norms"].is_object());
    assert_eq!(report["per_region_terms"].as_array().unwrap().len(), 3);
}

#[test]
fn audit_rejects_a_model_trained_on_other_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture("train.toml");
    assert!(run_in(dir.path(), "train", &cfg, &[]).status.success());
    let model = dir.path().join("model.json");
    let o = run_in(
        dir.path(),
        "audit",
        &cfg,
        &["--model", model.to_str().unwrap(), "--seed", "5"],
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn csv_dataset_with_label_flip_audit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture("csv.toml");
    let o = run_in(dir.path(), "train", &cfg, &["--threads", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let model = dir.path().join("model.json");
    let o = run_in(
        dir.path(),
        "audit",
        &cfg,
        &["--model", model.to_str().unwrap()],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("audit.json")).unwrap())
            .unwrap();
    assert_eq!(report["if_bound_rough"], 4.0);
}

#[test]
fn seed_flag_overrides_config() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = fixture("train.toml");
    assert!(run_in(a.path(), "train", &cfg, &[]).status.success());
    assert!(run_in(b.path(), "train", &cfg, &["--seed", "77"])
        .status
        .success());
    let read = |d: &Path| std::fs::read_to_string(d.join("model.json")).unwrap();
    assert_ne!(read(a.path()), read(b.path()));
}

#[test]
fn consistency_preset_is_deterministic_with_five_rows() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = fixture("consistency.toml");
    let o = run_in(a.path(), "experiment", &cfg, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(run_in(b.path(), "experiment", &cfg, &["--threads", "1"])
        .status
        .success());
    let csv_a = std::fs::read(a.path().join("trend.csv")).unwrap();
    let csv_b = std::fs::read(b.path().join("trend.csv")).unwrap();
    assert_eq!(csv_a, csv_b);
    let text = String::from_utf8(csv_a).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "n,risk,bayes_proxy,global_risk,lambda");
    assert_eq!(lines.len(), 6);
    assert!(a.path().join("trend.json").exists());
}

#[test]
fn tradeoff_preset_bound_halves_as_lambda_doubles() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), "experiment", &fixture("tradeoff.toml"), &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 4);
    for w in rows.windows(2) {
        assert_eq!(w[1][0], 2.0 * w[0][0]);
        assert_eq!(w[0][4], 2.0 * w[1][4]);
    }
}
