use std::process::Command;

fn qpnls() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qpnls"))
}

#[test]
fn solve_writes_manifest_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let status = qpnls().args(["solve", "--out"]).arg(dir.path()).output().unwrap().status;
    assert_eq!(status.code(), Some(0));
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["passed"], true);
    assert!(dir.path().join("solution.json").exists());
}

#[test]
fn invalid_parameter_exits_two_with_json_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = qpnls()
        .args(["solve", "--set", "params.delta=1.5", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["kind"], "validation");
}

#[test]
fn toml_config_is_read() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "seed = 3\n[regions]\nr = 2\nN = 2\n").unwrap();
    let status = qpnls()
        .args(["regions", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("out"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let regions = std::fs::read_to_string(dir.path().join("out/regions.json")).unwrap();
    assert!(regions.contains("center"));
}

#[test]
fn missing_config_file_is_reported() {
    let out = qpnls().args(["solve", "--config", "/nonexistent/run.toml"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("\"kind\":\"io\""));
}

#[test]
fn unknown_command_is_rejected() {
    let out = qpnls().arg("frobnicate").output().unwrap();
    assert!(!out.status.success());
}
