use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_harnack-lab"));
    c.env_remove("HARNACK_LAB_OUT");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const HARNACK: &str = r#"{
  "command": "harnack",
  "exponents": {"n": 3, "p": 2, "q": 2},
  "seed": 11,
  "solve": {
    "initial": {"kind": "gaussian", "amplitude": 1, "width": 0.45},
    "grid": {"intervals": 200, "radius": 2},
    "t_end": 0.1,
    "solver": {"cadence": {"kind": "uniform", "count": 500}}
  },
  "harnack": {
    "queries": [{"x0": 0.1, "t0": 0.03, "r": 0.2, "c": 0.5, "mu": 20, "direction": "forward"}],
    "sweep": {"c": 1, "radii": [0.1, 0.2], "random_points": 6}
  }
}"#;

#[test]
fn certify_phi_passes_with_checksummed_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("cert");
    let o = run(&["certify", "--n", "2", "--p", "2", "--q", "1.8", "--function", "phi", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let cert: Value = serde_json::from_str(&fs::read_to_string(out.join("certificate_phi.json")).unwrap()).unwrap();
    assert_eq!(cert["pass"], true);
    let m = manifest(&out);
    assert_eq!(m["schema_version"], 1);
    assert_eq!(m["status"], "pass");
    for f in m["files"].as_array().unwrap() {
        let bytes = fs::read(out.join(f["path"].as_str().unwrap())).unwrap();
        assert_eq!(f["bytes"].as_u64().unwrap(), bytes.len() as u64);
        assert_eq!(f["sha256"].as_str().unwrap().len(), 64);
    }
}

#[test]
fn malformed_config_exits_2_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    let out = tmp.path().join("out");
    for text in [
        r#"{"command": "solve", "exponents": {"n": 3, "p": 2, "q": 2}, "solve": {"t_ends": 1}}"#,
        r#"{"command": "solve", "exponents": {"n": 3, "p": 2, "q": 0.5}}"#,
        r#"{"command": "solve""#,
        r#"{"command": "certify", "exponents": {"n": 3, "p": 2, "q": 2}}"#,
    ] {
        fs::write(&cfg, text).unwrap();
        let o = run(&["solve", "--config", path(&cfg), "--out", path(&out)]);
        assert_eq!(o.status.code(), Some(2), "{text}");
        assert!(!out.exists(), "{text}");
    }
    let o = run(&["extinction", "--n", "3", "--p", "1.4", "--q", "1.7", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["sweep", "--q-range", "1.2:1.1:0.1", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["certify", "--n", "2", "--p", "2", "--q", "1.8", "--jobs", "0", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn failed_check_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("sob.json");
    fs::write(&cfg, r#"{"command": "sobolev", "exponents": {"n": 3, "p": 2, "q": 2}, "sobolev": {"tolerance": 1e-9}}"#).unwrap();
    let out = tmp.path().join("sob");
    let o = run(&["sobolev", "--config", path(&cfg), "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(manifest(&out)["status"], "fail");
}

#[test]
fn sweep_writes_one_row_per_q() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sweep");
    let o = run(&["sweep", "--q-range", "1.2:2.8:0.1", "--jobs", "4", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let mut rdr = csv::Reader::from_path(out.join("sweep.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let col = headers.iter().position(|h| h == "dichotomy").unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 17);
    for r in &rows {
        let q: f64 = r[0].parse().unwrap();
        let want = if (q - 1.6).abs() < 1e-9 { "n/a" } else { "true" };
        assert_eq!(&r[col], want, "q = {q}");
    }
}

#[test]
fn identical_config_gives_identical_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("h.json");
    fs::write(&cfg, HARNACK).unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        let o = run(&["harnack", "--config", path(&cfg), "--out", path(dir)]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let ma = manifest(&a);
    let files = ma["files"].as_array().unwrap();
    assert!(files.len() >= 5);
    for f in files {
        let name = f["path"].as_str().unwrap();
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    assert_eq!(ma["files"], manifest(&b)["files"]);
    let c = tmp.path().join("c");
    run(&["harnack", "--config", path(&cfg), "--seed", "12", "--out", path(&c)]);
    assert_ne!(fs::read(a.join("mu_sweep.json")).unwrap(), fs::read(c.join("mu_sweep.json")).unwrap());
}

#[test]
fn flags_override_config_and_env_sets_output_root() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    fs::write(&cfg, r#"{"command": "certify", "exponents": {"n": 2, "p": 2, "q": 1.8}, "certify": {"function": "phi", "grid": {"nr": 40, "nt": 40}}}"#).unwrap();
    let root = tmp.path().join("env_root");
    let o = bin().args(["certify", "--config", path(&cfg), "--q", "1.7"]).env("HARNACK_LAB_OUT", &root).output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(&root);
    assert_eq!(m["config"]["exponents"]["q"], 1.7);
    assert_eq!(m["config"]["exponents"]["n"], 2);
    let explicit = tmp.path().join("flag");
    let o = bin().args(["certify", "--config", path(&cfg), "--out", path(&explicit)]).env("HARNACK_LAB_OUT", &root).output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(explicit.join("certificate_phi.json").exists());
}

#[test]
fn chain_and_extinction_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("chain.json");
    let mut v: Value = serde_json::from_str(HARNACK).unwrap();
    let obj = v.as_object_mut().unwrap();
    obj.remove("harnack");
    obj.insert("command".into(), "chain".into());
    obj.insert("chain".into(), serde_json::json!({"start": [0.1, 0.04], "target": [0.1, 0.05], "mode": "time"}));
    fs::write(&cfg, v.to_string()).unwrap();
    let out = tmp.path().join("chain");
    let o = run(&["chain", "--config", path(&cfg), "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let trace: Value = serde_json::from_str(&fs::read_to_string(out.join("chain.json")).unwrap()).unwrap();
    assert_eq!(trace["certified"], true);

    let out = tmp.path().join("ext");
    let o = run(&["extinction", "--n", "3", "--p", "1.4", "--q", "1.45", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rep: Value = serde_json::from_str(&fs::read_to_string(out.join("extinction.json")).unwrap()).unwrap();
    assert_eq!(rep["extinct"], true);
    let curve = fs::read_to_string(out.join("norm_curve.csv")).unwrap();
    assert!(curve.starts_with("t,v,v_pow_2_minus_q\n"));
}
