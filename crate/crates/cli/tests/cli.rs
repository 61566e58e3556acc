use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ilhte(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ilhte")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn simulate(dir: &Path, extra: &[&str]) -> String {
    let mut args = vec!["simulate", "--out-dir"];
    let d = s(dir);
    args.push(&d);
    args.extend(["--set", "n_persons=100", "--set", "n_items=8"]);
    args.extend(extra);
    let out = ilhte(&args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    s(&dir.join("responses.csv"))
}

fn error_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().find(|l| l.starts_with('{')).expect("json error line");
    serde_json::from_str(line).unwrap()
}

#[test]
fn fit_writes_item_table() {
    let tmp = tempfile::tempdir().unwrap();
    let input = simulate(&tmp.path().join("d"), &[]);
    let out_dir = s(&tmp.path().join("fit"));
    let out = ilhte(&["fit", "--input", &input, "--model", "3", "--out-dir", &out_dir]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(tmp.path().join("fit/eb_items.csv")).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    assert_eq!(lines.next().unwrap(), "item_id,b_hat,zeta_hat,total_effect");
    assert_eq!(lines.count(), 8);
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(summary["manifest_hash"].as_str().unwrap().len() == 64);
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let input = simulate(&tmp.path().join("d"), &["--seed", "5"]);
    for rep in ["a", "b"] {
        let dir = s(&tmp.path().join(rep));
        let out = ilhte(&["fit", "--input", &input, "--model", "2", "--out-dir", &dir]);
        assert_eq!(out.status.code(), Some(0));
    }
    for name in ["fit.json", "fixed_effects.csv", "eb_items.csv", "analysis.csv"] {
        assert_eq!(fs::read(tmp.path().join("a").join(name)).unwrap(), fs::read(tmp.path().join("b").join(name)).unwrap(), "{name}");
    }
}

#[test]
fn interaction_model_without_covariate_names_the_column() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("nocov.csv");
    let mut text = String::from("person_id,item_id,score,treatment\n");
    for p in 0..6 {
        for i in 0..3 {
            text.push_str(&format!("p{p},i{i},{},{}\n", (p + i) % 2, p % 2));
        }
    }
    fs::write(&csv, text).unwrap();
    let out = ilhte(&["fit", "--input", &s(&csv), "--model", "5", "--out-dir", &s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = error_json(&out);
    assert!(err["error"]["message"].as_str().unwrap().contains("covariate"), "{err}");
    let explicit = ilhte(&["fit", "--input", &s(&csv), "--covariate-col", "pretest", "--out-dir", &s(&tmp.path().join("o"))]);
    assert_eq!(explicit.status.code(), Some(1));
    assert!(error_json(&explicit)["error"]["message"].as_str().unwrap().contains("pretest"));
}

#[test]
fn show_config_lists_defaults_and_overrides() {
    let out = ilhte(&["--show-config", "confound-demo"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().any(|l| l.starts_with("n_persons = 2000")));
    assert!(text.lines().any(|l| l.starts_with("rho = 0.9")));
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "# comment\nn_persons = 321\nrho=0.2\n").unwrap();
    let out = ilhte(&["--config", &s(&cfg), "--set", "rho=0.4", "--show-config", "simulate"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().any(|l| l.starts_with("n_persons = 321")));
    assert!(text.lines().any(|l| l.starts_with("rho = 0.4")));
}

#[test]
fn unknown_setting_is_a_usage_error() {
    let out = ilhte(&["simulate", "--set", "no_such_key=1"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["error"]["kind"], "usage");
}

#[test]
fn toy_replication_tolerance_override() {
    let tmp = tempfile::tempdir().unwrap();
    let ok = ilhte(&["replicate-toy", "--out-dir", &s(&tmp.path().join("a"))]);
    assert_eq!(ok.status.code(), Some(0));
    let table = fs::read_to_string(tmp.path().join("a/toy_checks.csv")).unwrap();
    assert!(!table.contains(",false"));
    let tight = ilhte(&["replicate-toy", "--tolerance", "1e-6", "--out-dir", &s(&tmp.path().join("b"))]);
    assert_eq!(tight.status.code(), Some(0));
    let table = fs::read_to_string(tmp.path().join("b/toy_checks.csv")).unwrap();
    let failing: Vec<&str> = table.lines().filter(|l| l.ends_with(",false")).collect();
    assert!(failing.iter().any(|l| l.starts_with("\"sumscore")));
    assert!(failing.iter().any(|l| l.starts_with("\"confound")));
    assert!(!failing.iter().any(|l| l.starts_with("\"sigma_b_star")));
}

#[test]
fn analyze_combines_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let a = simulate(&tmp.path().join("a"), &["--seed", "1"]);
    let b = simulate(&tmp.path().join("b"), &["--seed", "2", "--set", "sigma_zeta=0"]);
    let b2 = s(&tmp.path().join("second.csv"));
    fs::copy(&b, &b2).unwrap();
    let out = ilhte(&["analyze", "--input", &a, "--input", &b2, "--out-dir", &s(&tmp.path().join("o"))]);
    assert!(matches!(out.status.code(), Some(0) | Some(2)), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(tmp.path().join("o/analysis.csv")).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("dataset,"));
    assert!(rows[1].starts_with("responses,") && rows[2].starts_with("second,"));
    for f in ["eb_items.csv", "se_ratio.csv", "fixed_effects.csv", "analysis.json"] {
        assert!(tmp.path().join("o").join(f).exists(), "{f}");
    }
}

#[test]
fn bad_input_reports_json_error() {
    let out = ilhte(&["fit", "--input", "/definitely/missing.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["error"]["kind"], "io");
}
