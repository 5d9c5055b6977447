use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fpcbf"))
}

fn replica() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios/sim_iva.scenario")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn replica_run_passes_bound_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = run(&["run", replica().to_str().unwrap(), "--out", out, "--bound-report", "--frames"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("bound_report.json")).unwrap()).unwrap();
    assert_eq!(report["all_pass"], true);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["robots"], 15);
    assert_eq!(summary["safe"], true);
    assert!(dir.path().join("frames/0000.json").exists());
    assert!(dir.path().join("frames/0059.json").exists());
    let csv = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 61);
    assert_eq!(csv.lines().next().unwrap().split(',').count(), 12 + 6 * 15);
}

#[test]
fn both_modes_write_matching_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["run", replica().to_str().unwrap(), "--mode", "both", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let a = dir.path().join("decentralized/metrics.csv");
    let b = dir.path().join("centralized/metrics.csv");
    assert_eq!(header(&a), header(&b));
    assert_eq!(fs::read_to_string(&a).unwrap().lines().count(), fs::read_to_string(&b).unwrap().lines().count());
}

#[test]
fn robot_ringed_by_danger_reports_violation_not_failure() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("ring.scenario");
    fs::write(
        &scenario,
        r#"
name = "ring"
[grid]
nx = 20
ny = 20
cell = 0.1
[robots]
precision = [[25.0, 0.0], [0.0, 25.0]]
positions = [[0.0, 0.0]]
[target]
center = [0.6, 0.6]
precision = [[8.0, 0.0], [0.0, 8.0]]
[[danger]]
type = "box"
min = [-0.3, -0.3]
max = [0.3, -0.2]
[[danger]]
type = "box"
min = [-0.3, 0.2]
max = [0.3, 0.3]
[[danger]]
type = "box"
min = [-0.3, -0.3]
max = [-0.2, 0.3]
[[danger]]
type = "box"
min = [0.2, -0.3]
max = [0.3, 0.3]
[controller]
alpha = 1.0
beta = 1.0
gamma = 10.0
epsilon = 0.01
u_max = 0.5
[verifier]
beta = 1.0
[sim]
dt = 0.05
steps = 10
detection_radius = 1.0
"#,
    )
    .unwrap();
    let o = run(&["run", scenario.to_str().unwrap(), "--out", dir.path().join("out").to_str().unwrap()]);
    let stderr = String::from_utf8_lossy(&o.stderr);
    match o.status.code() {
        Some(0) => {}
        Some(2) => assert!(stderr.contains("safety violation"), "{stderr}"),
        other => panic!("unexpected exit {other:?}: {stderr}"),
    }
}

#[test]
fn validate_accepts_bundled_and_rejects_bad_files() {
    let o = run(&["validate", replica().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("15 robots"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.scenario");
    fs::write(&bad, fs::read_to_string(replica()).unwrap().replace("dt = 0.05", "dt = 0.0")).unwrap();
    let o = run(&["validate", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("dt"));

    let o = run(&["validate", dir.path().join("missing.scenario").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn unwritable_output_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let o = run(&["run", replica().to_str().unwrap(), "--out", blocker.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn timing_prints_statistics() {
    let o = run(&["timing", replica().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let stats: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(stats["count"], 15 * 60);
    assert!(stats["mean"].as_f64().unwrap() > 0.0);
}
