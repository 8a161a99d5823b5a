use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qpreduce"))
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

/// A worked config shrunk to a small band and a short horizon.
fn small_config(dir: &Path, name: &str) -> PathBuf {
    let text = std::fs::read_to_string(configs_dir().join(name)).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["xi_max"] = 16.into();
    v["K"] = 1.into();
    v["t_final"] = 2.0.into();
    v["sample_stride"] = 5.into();
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string(&v).unwrap()).unwrap();
    path
}

fn ok(cmd: &mut Command) -> std::process::Output {
    let out = cmd.output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    out
}

#[test]
fn reduce_verify_and_evolve_both_branches() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["worked_sublinear.json", "worked_linear.json"] {
        let cfg = small_config(dir.path(), name);
        let cert = dir.path().join(format!("{name}.cert.json"));
        ok(bin().args(["reduce", "--config"]).arg(&cfg).arg("--out").arg(&cert));
        let text = std::fs::read_to_string(&cert).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["K"], 1);
        assert!(v["ledger"].as_array().is_some_and(|l| !l.is_empty()));

        let report = dir.path().join("report.json");
        ok(bin().args(["verify", "--config"]).arg(&cfg).arg("--cert").arg(&cert).arg("--out").arg(&report));
        let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
        assert_eq!(r["passed"], true, "{r}");
        assert!(r["growth"]["l2_drift"].as_f64().unwrap() < 1e-10);

        for with_cert in [false, true] {
            let csv_path = dir.path().join("run.csv");
            let mut cmd = bin();
            cmd.args(["evolve", "--config"]).arg(&cfg).arg("--out").arg(&csv_path);
            if with_cert {
                cmd.arg("--cert").arg(&cert);
            }
            ok(&mut cmd);
            let mut rd = csv::Reader::from_path(&csv_path).unwrap();
            let header: Vec<String> = rd.headers().unwrap().iter().map(String::from).collect();
            assert_eq!(header.first().map(String::as_str), Some("t"));
            assert_eq!(header.last().map(String::as_str), Some("l2"));
            assert!(header.iter().any(|h| h == "Hs_1"));
            let rows: Vec<csv::StringRecord> = rd.records().map(Result::unwrap).collect();
            assert_eq!(rows.len(), 41);
            let l2: Vec<f64> = rows.iter().map(|r| r[r.len() - 1].parse().unwrap()).collect();
            if !with_cert {
                assert!(l2.iter().all(|v| (v - l2[0]).abs() < 1e-10));
            }
        }
    }
}

#[test]
fn evolve_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "worked_sublinear.json");
    let run = |seed: &str, out: &str| {
        let p = dir.path().join(out);
        ok(bin().args(["evolve", "--config"]).arg(&cfg).arg("--out").arg(&p).args(["--seed", seed]));
        std::fs::read_to_string(p).unwrap()
    };
    assert_eq!(run("3", "a.csv"), run("3", "b.csv"));
    assert_ne!(run("3", "a.csv"), run("4", "c.csv"));
}

#[test]
fn certificate_from_another_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let a = small_config(dir.path(), "worked_sublinear.json");
    let b = small_config(dir.path(), "worked_linear.json");
    let cert = dir.path().join("cert.json");
    ok(bin().args(["reduce", "--config"]).arg(&a).arg("--out").arg(&cert));
    let out = bin().args(["evolve", "--config"]).arg(&b).arg("--cert").arg(&cert).arg("--out").arg(dir.path().join("x.csv")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin()
        .args(["verify", "--no-growth", "--config"])
        .arg(&b)
        .arg("--cert")
        .arg(&cert)
        .arg("--out")
        .arg(dir.path().join("r.json"))
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn check_freq_reports_and_sets_exit_code() {
    let out = ok(bin().args(["check-freq", "--omega", "1,0.6180339887498949", "--gamma", "0.05", "--tau", "2", "--L", "60"]));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("diophantine") && text.contains("pass"));

    let out = bin().args(["check-freq", "--omega", "1,0.5", "--gamma", "0.05", "--tau", "2", "--L", "10"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("FAIL") && text.contains("[1, -2]"), "{text}");

    let out = bin()
        .args(["check-freq", "--omega", "1,0.6180339887498949", "--gamma", "0.05", "--tau", "2", "--lambda", "1", "--L", "10"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stdout).unwrap().contains("melnikov"));
}

#[test]
fn bad_input_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    std::fs::write(&p, "{\"nu\": 1}").unwrap();
    let out = bin().args(["reduce", "--config"]).arg(&p).arg("--out").arg(dir.path().join("c.json")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    let out = bin().args(["check-freq", "--omega", "1", "--gamma", "2", "--tau", "2"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
