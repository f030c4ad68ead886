use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_stable-mckean");

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("STABLE_MCKEAN_OUT_DIR")
        .output()
        .unwrap()
}

fn files_with_suffix(dir: &Path, suffix: &str) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.to_string_lossy().ends_with(suffix))
        .collect();
    out.sort();
    out
}

const SMALL: &str = r#"{
  "seed": 7,
  "system": { "particles": 16, "delta": 0.0625, "horizon": 0.5 },
  "study": { "replications": 4 }
}"#;

#[test]
fn validate_accepts_holder_pair_and_writes_nothing() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "ok.json",
        r#"{"seed": 1, "noise": {"alpha": 1.5}, "drift": {"beta": 0.75}}"#,
    );
    let out_dir = tmp.path().join("out");
    let out = run(&[
        "validate",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(!out_dir.exists());
}

#[test]
fn validate_rejects_holder_violation() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "bad.json",
        r#"{"seed": 1, "noise": {"alpha": 1.2}, "drift": {"beta": 0.3}}"#,
    );
    let out = run(&["validate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("(H2)") && stderr.contains("2β+α>2 violated"),
        "{stderr}"
    );
}

#[test]
fn config_errors_exit_two() {
    let tmp = TempDir::new().unwrap();
    let no_seed = write_config(tmp.path(), "noseed.json", "{}");
    assert_eq!(
        run(&["validate", "--config", no_seed.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
    let typo = write_config(
        tmp.path(),
        "typo.json",
        r#"{"seed": 1, "system": {"particle": 3}}"#,
    );
    assert_eq!(
        run(&["validate", "--config", typo.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
    let missing = tmp.path().join("missing.json");
    assert_eq!(
        run(&["validate", "--config", missing.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&[]).status.code(), Some(2));
}

#[test]
fn seed_flag_satisfies_requirement() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "noseed.json", "{}");
    let out = run(&["validate", "--config", cfg.to_str().unwrap(), "--seed", "5"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn zero_drift_step_study_is_degenerate_pass() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "small.json", SMALL);
    let out_dir = tmp.path().join("out");
    let out = run(&[
        "study-dt",
        "--config",
        cfg.to_str().unwrap(),
        "--set",
        "drift.kind=zero",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let json = files_with_suffix(&out_dir, "-7.json");
    assert_eq!(json.len(), 1);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&json[0]).unwrap()).unwrap();
    let report = &summary["report"];
    assert_eq!(report["verdict"], "PASS");
    assert_eq!(report["degenerate"], true);
    assert!(report["fit"].is_null());
    let csv = fs::read_to_string(files_with_suffix(&out_dir, "-7.csv").remove(0)).unwrap();
    assert!(csv.starts_with("grid_value,error,stderr\n"));
    assert!(csv
        .lines()
        .skip(1)
        .all(|l| l.split(',').nth(1) == Some("0")));
    assert_eq!(files_with_suffix(&out_dir, ".manifest.json").len(), 1);
}

#[test]
fn failing_band_exits_one() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "small.json", SMALL);
    let out = run(&[
        "study-dt",
        "--config",
        cfg.to_str().unwrap(),
        "--set",
        "study.band_lo=5",
        "--out-dir",
        tmp.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

fn study_outputs(
    command: &str,
    threads: &str,
    dir: &Path,
    cfg: &Path,
    extra: &[&str],
) -> (String, String) {
    let mut args = vec![
        command,
        "--config",
        cfg.to_str().unwrap(),
        "--threads",
        threads,
        "--out-dir",
        dir.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    let out = run(&args);
    assert!(
        matches!(out.status.code(), Some(0 | 1)),
        "{command}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = fs::read_to_string(files_with_suffix(dir, ".csv").remove(0)).unwrap();
    let json = files_with_suffix(dir, ".json")
        .into_iter()
        .find(|p| !p.to_string_lossy().ends_with(".manifest.json"))
        .unwrap();
    (csv, fs::read_to_string(json).unwrap())
}

#[test]
fn outputs_are_identical_across_thread_counts() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "small.json", SMALL);
    let cases: [(&str, &[&str]); 5] = [
        ("study-dt", &["--set", "study.grid=[0.125,0.0625,0.03125]"]),
        (
            "study-moment",
            &["--set", "study.grid=[0.125,0.0625,0.03125]"],
        ),
        ("study-n", &["--set", "study.grid=[4,8,16]"]),
        (
            "study-emprate",
            &[
                "--set",
                "study.grid=[8,16,32]",
                "--set",
                "study.proxy_factor=4",
            ],
        ),
        ("study-mollify", &["--set", "study.grid=[2,4,8]"]),
    ];
    for (k, (command, extra)) in cases.iter().enumerate() {
        let one = tmp.path().join(format!("one-{k}"));
        let two = tmp.path().join(format!("two-{k}"));
        let a = study_outputs(command, "1", &one, &cfg, extra);
        let b = study_outputs(command, "3", &two, &cfg, extra);
        assert_eq!(a, b, "{command}");
    }
}

#[test]
fn out_dir_defaults_from_environment() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "small.json", SMALL);
    let env_dir = tmp.path().join("from-env");
    let out = Command::new(BIN)
        .args([
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--dump-paths",
        ])
        .env("STABLE_MCKEAN_OUT_DIR", &env_dir)
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let paths = files_with_suffix(&env_dir, "-paths.csv");
    assert_eq!(paths.len(), 1);
    let dump = fs::read_to_string(&paths[0]).unwrap();
    assert!(dump.starts_with("time,particle,coordinate,value\n"));
    // 9 lattice times x 16 particles x 1 coordinate.
    assert_eq!(dump.lines().count(), 1 + 9 * 16);
    let summary = files_with_suffix(&env_dir, "-7.json");
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&summary[0]).unwrap()).unwrap();
    assert_eq!(summary["adjusted_horizon"], 0.5);
}

#[test]
fn noise_check_passes_for_default_noise() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "noise.json",
        r#"{"seed": 3, "noise": {"dim": 2, "mode": "per_axis"}}"#,
    );
    let out = run(&[
        "noise-check",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
}

#[test]
fn wasserstein_of_small_clouds() {
    let tmp = TempDir::new().unwrap();
    let a = write_config(tmp.path(), "a.csv", "# one point per row\n0.0\n1.0\n");
    let b = write_config(tmp.path(), "b.csv", "2.0\n1.0\n");
    let out = run(&[
        "wasserstein",
        "--a",
        a.to_str().unwrap(),
        "--b",
        b.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["distance"], 1.0);

    let c = write_config(tmp.path(), "c.csv", "0,0\n3,4\n");
    let d = write_config(tmp.path(), "d.csv", "3,4\n0,0\n");
    let out = run(&[
        "wasserstein",
        "--a",
        c.to_str().unwrap(),
        "--b",
        d.to_str().unwrap(),
        "--p",
        "2",
    ]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["distance"], 0.0);

    let out = run(&[
        "wasserstein",
        "--a",
        a.to_str().unwrap(),
        "--b",
        c.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}
