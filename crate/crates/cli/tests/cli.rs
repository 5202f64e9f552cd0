use std::fs;
use std::process::Command;

fn pide2d() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pide2d"));
    cmd.env("RUST_LOG", "warn");
    cmd
}

#[test]
fn price_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = pide2d()
        .args(["price", "--preset", "VG1", "--nx", "12", "--threads", "1", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 9);
    for name in ["surface.csv", "table.csv", "manifest.json"] {
        assert!(dir.path().join(name).exists(), "missing {name}");
    }
    let table = fs::read_to_string(dir.path().join("table.csv")).unwrap();
    assert!(table.starts_with("x1,x2,price\n90.0,90.0,"));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, r#"{"preset": "VG0", "n_x": 40, "seed": 5, "n_z": 8}"#).unwrap();
    let out = pide2d()
        .args(["weights", "--nx", "6", "--preset", "NIG1", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["n_x"], 6);
    assert_eq!(manifest["config"]["preset"], "NIG1");
    assert_eq!(manifest["config"]["seed"], 5);
    assert_eq!(manifest["n_z"], 8);
    let weights = fs::read_to_string(dir.path().join("weights.csv")).unwrap();
    assert_eq!(weights.lines().next(), Some("quantity,i,j,value"));
}

#[test]
fn rejects_bad_input() {
    let out = pide2d().args(["price", "--preset", "XYZ"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("XYZ"));
    let out = pide2d().args(["price", "--threads", "0"]).output().unwrap();
    assert!(!out.status.success());
    let out = pide2d().args(["frobnicate"]).output().unwrap();
    assert!(!out.status.success());
}
