use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sdtrade(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdtrade"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("SDTRADE_SEED")
        .output()
        .unwrap()
}

fn leftovers(out: &Path) -> Vec<String> {
    fs::read_dir(out)
        .map(|rd| rd.filter_map(|e| e.ok()).map(|e| e.file_name().to_string_lossy().into_owned()).collect())
        .unwrap_or_default()
}

#[test]
fn help_and_version_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    for flag in ["--help", "--version"] {
        let out = sdtrade(dir.path(), &[flag]);
        assert_eq!(out.status.code(), Some(0), "{flag}");
        assert!(!out.stdout.is_empty());
    }
}

#[test]
fn bounds_prints_rounded_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = sdtrade(dir.path(), &["bounds", "--theorem", "1", "--d", "1", "--beta", "0.5", "--alpha-fp", "0"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), r#"{"bound":0.6826894921}"#);
    assert!(dir.path().join("bound.json").exists());
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn usage_and_config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [&[&str]; 4] = [
        &["tradeoff"],
        &["tradeoff", "--synthetic", "random-texture", "--bogus"],
        &["toy-validate", "--trials", "10"],
        &["bounds", "--theorem", "3", "--beta", "-1"],
    ];
    for args in cases {
        let out = sdtrade(dir.path(), args);
        assert_eq!(out.status.code(), Some(1), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(!out.stderr.is_empty());
    }
    assert!(leftovers(dir.path()).is_empty(), "{:?}", leftovers(dir.path()));
}

#[test]
fn runtime_errors_exit_two_and_leave_nothing_behind() {
    let dir = tempfile::tempdir().unwrap();
    let out = sdtrade(dir.path(), &["tradeoff", "--data", "/definitely/not/here"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(leftovers(dir.path()).is_empty());
}

#[test]
fn seed_env_matches_flag() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["toy-validate", "--trials", "2000"];
    let by_flag = dir.path().join("flag");
    let mut flag_args = vec!["--seed", "11"];
    flag_args.extend(args);
    assert!(sdtrade(&by_flag, &flag_args).status.success());
    let by_env = dir.path().join("env");
    let out = Command::new(env!("CARGO_BIN_EXE_sdtrade"))
        .arg("--out")
        .arg(&by_env)
        .args(args)
        .env("SDTRADE_SEED", "11")
        .output()
        .unwrap();
    assert!(out.status.success());
    let read = |p: &Path| fs::read(p.join("toy_validate.csv")).unwrap();
    assert_eq!(read(&by_flag), read(&by_env));
    let other = dir.path().join("other");
    assert!(sdtrade(&other, &["--seed", "12", "toy-validate", "--trials", "2000"]).status.success());
    assert_ne!(read(&by_flag), read(&other));
}

#[test]
fn tradeoff_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = sdtrade(
        dir.path(),
        &[
            "tradeoff",
            "--synthetic",
            "piecewise-smooth",
            "--n-images",
            "60",
            "--n-base",
            "5",
            "--n-pert",
            "5",
            "--tau-points",
            "10",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("tradeoff.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("extractor,dataset,beta,tau,alpha_fp,alpha_det,n_fp,n_det"));
    assert_eq!(lines.count(), 10);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["tool"], "sdtrade");
    assert_eq!(manifest["seed"], 0);
    assert_eq!(manifest["config"]["subcommand"], "tradeoff");
    assert!(manifest["version"].as_str().unwrap().starts_with('v'));
    assert!(manifest["wall_time_s"].as_f64().unwrap() >= 0.0);
    let outputs: Vec<&str> = manifest["outputs"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert_eq!(outputs, ["tradeoff.csv", "manifest.json"]);
    assert!(!leftovers(dir.path()).iter().any(|f| f.starts_with(".sdtrade-staging")));
}

#[test]
fn extract_reuses_cache() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["extract", "--synthetic", "random-texture", "--n-images", "5", "--dims", "8x8x3"];
    let first = sdtrade(dir.path(), &args);
    assert!(first.status.success());
    let cache = dir.path().join("features_blacklight.jsonl");
    let before = fs::read(&cache).unwrap();
    let second = sdtrade(dir.path(), &args);
    assert!(second.status.success());
    assert!(String::from_utf8_lossy(&second.stdout).contains("hit"));
    assert_eq!(fs::read(&cache).unwrap(), before);
}
