use std::path::Path;
use std::process::Command;

fn peershare() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_peershare"));
    cmd.env_remove("PEERSHARE_CONFIG");
    cmd
}

#[test]
fn all_scenarios_pass() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios");
    let out = peershare().arg("scenario").arg(&dir).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        out.status.success(),
        "{stdout}\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(
        stdout.lines().filter(|l| l.starts_with("PASS")).count() >= 5,
        "{stdout}"
    );
}

#[test]
fn agent_without_a_pin_refuses_to_start() {
    let dir = tempfile::tempdir().unwrap();
    let out = peershare()
        .current_dir(dir.path())
        .args([
            "--json",
            "--server-url",
            "https://127.0.0.1:1",
            "agent",
            "run",
            "-u",
            "alice",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    let err: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(err["error"]["code"], "CONFIG_ERROR");
}

#[test]
fn missing_pin_file_is_not_an_empty_pin() {
    let dir = tempfile::tempdir().unwrap();
    let out = peershare()
        .current_dir(dir.path())
        .args([
            "--server-url",
            "https://127.0.0.1:1",
            "--pin",
            "absent.pem",
            "agent",
            "run",
            "-u",
            "alice",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn a_failing_scenario_exits_with_the_expectation_code() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("bad.scenario");
    std::fs::write(&script, "$ peershare inspect cert nowhere.pem\n").unwrap();
    let out = peershare().arg("scenario").arg(&script).output().unwrap();
    assert_eq!(out.status.code(), Some(13));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("FAIL"));
}
