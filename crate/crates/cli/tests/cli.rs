use std::process::Command;

fn sim() -> Command {
    Command::new(env!("CARGO_BIN_EXE_swarm-sim"))
}

#[test]
fn check_passes_and_exports() {
    let dir = tempfile::tempdir().unwrap();
    let out = sim()
        .args(["--scenario", "circle-exchange", "--n-uavs", "6", "--n-cus", "2", "--rounds", "40"])
        .args(["--loss-prob", "0.1", "--jam", "10:15:c0,u1", "--seed", "3", "--check", "--json"])
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["rounds"], 40);
    assert_eq!(summary["collision_violations"], 0);
    assert!(summary["messages"]["jammed"].as_u64().unwrap() > 0);
    for f in ["positions.csv", "metrics.csv", "events.jsonl", "trace.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let csv = std::fs::read_to_string(dir.path().join("positions.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 40 * 6);
}

#[test]
fn ablation_under_jam_fails_check() {
    let out = sim()
        .args(["--scenario", "circle-exchange", "--n-cus", "3", "--rounds", "60", "--seed", "0"])
        .args(["--jam", "5:15:c0,c1,c2", "--disable-mlr", "--check"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn scenario_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.toml");
    std::fs::write(
        &path,
        r#"
name = "pair"
n_cus = 1
rounds = 30
trigger = "rr"
initial = [[-0.5, 0.0, 1.0], [0.5, 0.0, 1.0]]
targets = [[[0.5, 0.0, 1.0], [-0.5, 0.0, 1.0]]]
[optimization]
d_hat_min = 0.3
"#,
    )
    .unwrap();
    let out = sim().arg("--scenario").arg(&path).args(["--json", "--check"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["scenario"], "pair");
    assert!(summary["min_reference_distance"].as_f64().unwrap() >= 0.3 - 1e-9);
}

#[test]
fn rejects_bad_input() {
    let out = sim().args(["--scenario", "nowhere"]).output().unwrap();
    assert!(!out.status.success());
    let out = sim().args(["--jam", "1:2"]).output().unwrap();
    assert!(!out.status.success());
    let out = sim().args(["--n-uavs", "2", "--n-cus", "3"]).output().unwrap();
    assert!(!out.status.success());
}
