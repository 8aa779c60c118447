use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_steering"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn write_spec(dir: &Path, name: &str, json: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, json).unwrap();
    p.to_str().unwrap().to_string()
}

fn steer(dir: &Path, spec: &str, out: &str) -> Output {
    let spec = write_spec(dir, "spec.json", spec);
    let out = dir.join(out);
    run(&["steer", &spec, "--out", out.to_str().unwrap()])
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

const DUBINS2D: &str = r#"{"system":"dubins2d","chi_i":"default","chi_f":[4,1,0.5235987755982988],"T":9.42477796076938}"#;
const VDP_B: &str = r#"{"system":"vdp","chi_i":[2,2],"chi_f":[0.6,-0.9],"T":4}"#;

#[test]
fn dubins2d_goal_gives_cscc_and_verifies() {
    let dir = TempDir::new().unwrap();
    let o = steer(dir.path(), DUBINS2D, "out");
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let out = dir.path().join("out");
    let summary = read_json(&out.join("summary.json"));
    let sols = summary["solutions"].as_array().unwrap();
    assert!(sols.iter().any(|s| s["structure"] == "CSCC"));
    assert!(out.join("plot.svg").exists());
    assert!(out.join("metadata.json").exists());

    let v = run(&["verify", out.join("summary.json").to_str().unwrap()]);
    assert_eq!(code(&v), 0, "{}", text(&v.stdout));
}

#[test]
fn trajectory_time_column_is_strictly_increasing() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&steer(dir.path(), DUBINS2D, "out")), 0);
    let out = dir.path().join("out");
    let summary = read_json(&out.join("summary.json"));
    for s in summary["solutions"].as_array().unwrap() {
        let csv = fs::read_to_string(out.join(s["trajectory"].as_str().unwrap())).unwrap();
        let times: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
        assert!(times.len() > 2);
        assert!(times.windows(2).all(|w| w[1] > w[0]), "{}", s["trajectory"]);
    }
}

#[test]
fn vdp_round_trip_and_tau_edit_is_caught() {
    let dir = TempDir::new().unwrap();
    let o = steer(dir.path(), VDP_B, "out");
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let summary_path = dir.path().join("out/summary.json");
    let v = run(&["verify", summary_path.to_str().unwrap()]);
    assert_eq!(code(&v), 0, "{}", text(&v.stdout));

    let mut summary = read_json(&summary_path);
    for s in summary["solutions"].as_array_mut().unwrap() {
        let tau = s["tau"].as_f64().unwrap();
        s["tau"] = Value::from(tau + 0.05);
    }
    let edited = dir.path().join("edited.json");
    fs::write(&edited, serde_json::to_string(&summary).unwrap()).unwrap();
    let v = run(&["verify", edited.to_str().unwrap()]);
    assert_eq!(code(&v), 3);
    assert!(text(&v.stderr).contains("verification failed for record(s)"));
}

#[test]
fn missing_horizon_is_rejected() {
    let dir = TempDir::new().unwrap();
    let o = steer(dir.path(), r#"{"system":"vdp","chi_f":[0.6,-0.9]}"#, "out");
    assert_eq!(code(&o), 1);
    assert!(text(&o.stderr).contains("`T`"), "{}", text(&o.stderr));
}

#[test]
fn empty_summary_has_nothing_to_verify() {
    let dir = TempDir::new().unwrap();
    let p = write_spec(
        dir.path(),
        "summary.json",
        r#"{"spec":{"system":"vdp","chi_i":[2,2],"chi_f":[0,0],"T":4},"solutions":[]}"#,
    );
    let o = run(&["verify", &p]);
    assert_eq!(code(&o), 0);
    assert!(text(&o.stdout).contains("nothing to verify"));
}

#[test]
fn bad_flags_exit_with_input_error() {
    assert_eq!(code(&run(&["oracle", "sample", "--system", "boat", "--t", "1", "--n", "3", "--out", "x"])), 1);
    assert_eq!(code(&run(&["steer"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn zero_time_sample_is_the_origin() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("o");
    let o = run(&["oracle", "sample", "--system", "dubins2d", "--t", "0", "--n", "10", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let csv = fs::read_to_string(out.join("cloud.csv")).unwrap();
    let rows: Vec<Vec<f64>> =
        csv.lines().skip(1).map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 10);
    assert!(rows.iter().all(|r| r.iter().all(|v| *v == 0.0)));
}

#[test]
fn sample_is_reproducible_for_a_seed() {
    let dir = TempDir::new().unwrap();
    let go = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let o = run(&[
            "oracle", "sample", "--system", "vdp", "--t", "2", "--n", "500", "--seed", seed, "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0);
        fs::read(out.join("cloud.csv")).unwrap()
    };
    let a = go("a", "7");
    assert_eq!(a, go("b", "7"));
    assert_ne!(a, go("c", "8"));
}

#[test]
fn vdp_continuity_bound_holds() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("c");
    let o = run(&[
        "oracle", "continuity", "--system", "vdp", "--t", "4", "--chi-f", "0.6,-0.9", "--times",
        "1.25,1.75,2.25,2.75", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let report = read_json(&out.join("continuity.json"));
    assert_eq!(report["all_hold"], Value::Bool(true));
    assert_eq!(report["records"].as_array().unwrap().len(), 3);
}

#[test]
fn summary_is_identical_across_worker_counts() {
    let dir = TempDir::new().unwrap();
    let spec = write_spec(dir.path(), "spec.json", DUBINS2D);
    let mut outputs = Vec::new();
    for (name, workers) in [("w1", "1"), ("w3", "3"), ("w1b", "1")] {
        let out = dir.path().join(name);
        let o = bin()
            .env("STEERING_WORKERS", workers)
            .args(["steer", &spec, "--out", out.to_str().unwrap()])
            .output()
            .unwrap();
        assert_eq!(code(&o), 0);
        outputs.push(fs::read(out.join("summary.json")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
}

#[test]
fn bad_worker_count_is_rejected() {
    let o = bin().env("STEERING_WORKERS", "zero").args(["verify", "nope.json"]).output().unwrap();
    assert_eq!(code(&o), 1);
}
