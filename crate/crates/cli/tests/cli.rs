use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn qgl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qgl"))
        .args(args)
        .env_remove("QGL_OUT")
        .output()
        .expect("binary runs")
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn column(path: &Path, name: &str) -> Vec<f64> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let idx = lines.next().unwrap().split(',').position(|h| h == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().parse().unwrap()).collect()
}

#[test]
fn no_arguments_prints_usage() {
    let out = qgl(&[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn inverted_support_names_the_constraint() {
    let out = qgl(&["sigma", "--l-min", "1.2", "--l-max", "0.8"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("l_min < l_max"));
}

#[test]
fn unknown_flags_and_keys_are_usage_errors() {
    assert_eq!(qgl(&["sigma", "--bogus", "1"]).status.code(), Some(2));
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "colour = blue\n").unwrap();
    let out = qgl(&["infspec", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));
}

#[test]
fn flags_override_file_values() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "# cube size\nn = 8\nalpha = 2.5\nl_min = 0.9\n").unwrap();
    let out_dir = tmp.path().join("a");
    let out = qgl(&[
        "spectrum",
        "--config",
        cfg.to_str().unwrap(),
        "--n",
        "16",
        "--window",
        "0.5,3",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(&out_dir);
    assert_eq!(m["config"]["n"], 16);
    assert_eq!(m["config"]["alpha"], 2.5);
    assert_eq!(m["config"]["l_min"], 0.9);
    assert_eq!(m["config"]["l_max"], 1.2);
    assert!(m["wall_clock_seconds"].as_f64().unwrap() >= 0.0);
}

#[test]
fn output_root_from_environment() {
    let tmp = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_qgl"))
        .args(["infspec", "--alpha", "-1"])
        .env("QGL_OUT", tmp.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let e = column(&tmp.path().join("infspec/infspec.csv"), "energy");
    assert!(e[0] < 0.0);
}

#[test]
fn free_case_has_one_band_from_zero() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("s");
    let out = qgl(&["sigma", "--alpha", "0", "--window", "0,20", "--out", dir.to_str().unwrap()]);
    assert!(out.status.success());
    let left = column(&dir.join("sigma_bands.csv"), "left");
    assert_eq!(left.len(), 1);
    assert_eq!(left[0], 0.0);
}

#[test]
fn wegner_below_zero_with_positive_coupling_is_zero() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("w");
    let out = qgl(&[
        "wegner",
        "--alpha",
        "1",
        "--window=-2,-0.5",
        "--widths",
        "0.4,0.2",
        "--n-list",
        "8,16",
        "--realizations",
        "30",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(column(&dir.join("wegner.csv"), "probability").iter().all(|&p| p == 0.0));
}

#[test]
fn wegner_refuses_interval_meeting_delta() {
    let out = qgl(&["wegner", "--window", "6,8", "--realizations", "2", "--out", "/nonexistent/never"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("wegner_experiment"));
}

#[test]
fn check_suite_passes_on_defaults() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("c");
    let out = qgl(&["check", "--out", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.join("check.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert!(rows.len() >= 5);
    assert!(rows.iter().all(|r| r.split(',').nth(1) == Some("pass")), "{text}");
}

#[test]
fn lifshitz_control_and_refusal() {
    let tmp = TempDir::new().unwrap();
    let refused = qgl(&["lifshitz", "--alpha", "0", "--e0", "0", "--n-list", "8", "--realizations", "3"]);
    assert_eq!(refused.status.code(), Some(2));
    let dir = tmp.path().join("l");
    let out = qgl(&[
        "lifshitz",
        "--alpha",
        "0",
        "--e0",
        "0",
        "--control",
        "--n-list",
        "8,16",
        "--realizations",
        "10",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(column(&dir.join("lifshitz_probability.csv"), "probability").iter().all(|&p| p == 1.0));
}

fn csv_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn reruns_are_byte_identical_across_threads_and_plots() {
    let tmp = TempDir::new().unwrap();
    let run = |name: &str, extra: &[&str]| {
        let dir = tmp.path().join(name);
        let mut args = vec![
            "wegner",
            "--n-list",
            "8,16",
            "--realizations",
            "40",
            "--seed",
            "11",
            "--raw",
            "--out",
            dir.to_str().unwrap(),
        ];
        args.extend_from_slice(extra);
        let out = qgl(&args);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        dir
    };
    let a = run("a", &["--threads", "1"]);
    let b = run("b", &["--threads", "3", "--plot"]);
    assert_eq!(csv_bytes(&a), csv_bytes(&b));
    assert!(b.join("wegner.svg").exists());
    let (ma, mb) = (manifest(&a), manifest(&b));
    assert_eq!(ma["config"]["seed"], mb["config"]["seed"]);
    assert_eq!(ma["version"], mb["version"]);
}
