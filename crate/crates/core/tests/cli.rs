use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qsysid::io::read_model;

fn qsysid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qsysid")).args(args).output().expect("spawn qsysid")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, body).unwrap();
    p
}

const SMALL: &str = r#"{
  "quadratures": ["q"],
  "omegas": [100],
  "orders": [1],
  "seeds": [1],
  "solver": "both",
  "threads": 2
}"#;

fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();

    let cases = [
        r#"{"Ts": -0.01}"#,
        r#"{"orders": [0]}"#,
        r#"{"omegas": []}"#,
        r#"{"total": 10}"#,
        r#"{"no_such_field": 1}"#,
        r#"{"gamma0": {"fixed": 0.0}}"#,
        "not json",
    ];
    for body in cases {
        let cfg = write_config(dir.path(), body);
        let o = qsysid(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out]);
        assert_eq!(code(&o), 2, "{body}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(code(&qsysid(&["simulate", "--config", "/nonexistent/cfg.json", "--out", out])), 2);
    assert_eq!(code(&qsysid(&["simulate", "--solver", "magic", "--out", out])), 2);
    assert_eq!(code(&qsysid(&["simulate", "--quadrature", "x", "--out", out])), 2);
    assert!(!Path::new(out).join("records").exists());
}

#[test]
fn missing_artifacts_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("empty");
    let out = out.to_str().unwrap();
    assert_eq!(code(&qsysid(&["table", "--out", out])), 2);
    assert_eq!(code(&qsysid(&["validate", "--out", out])), 2);
    assert_eq!(code(&qsysid(&["identify", "--out", out, "missing.csv"])), 2);
}

#[test]
fn pipeline_is_deterministic_and_realizable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let cfg = cfg.to_str().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = qsysid(&["pipeline", "--config", cfg, "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let a = run("a");
    let b = run("b");

    let sa = snapshot(&a);
    let sb = snapshot(&b);
    assert_eq!(sa.keys().collect::<Vec<_>>(), sb.keys().collect::<Vec<_>>());
    for (k, v) in &sa {
        assert!(v == &sb[k], "{} differs between runs", k.display());
    }

    let stem = "q_omega100_seed1";
    for solver in ["lifted", "reduced"] {
        let m = read_model(&a.join("models").join(format!("{stem}_n1_{solver}.json"))).unwrap();
        let r = m.realization().unwrap();
        let (r1, r2) = r.residuals().unwrap();
        assert!(r1 <= 1e-6 && r2 <= 1e-6, "{solver}: {r1:e} {r2:e}");
        for suffix in ["json", "autocorr.csv", "prediction.csv"] {
            let name = if suffix == "json" { format!("{stem}_n1_{solver}.json") } else { format!("{stem}_n1_{solver}_{suffix}") };
            assert!(a.join("metrics").join(&name).exists(), "{name}");
        }
        let table = fs::read_to_string(a.join(format!("table_q_{solver}.csv"))).unwrap();
        assert_eq!(table.lines().count(), 2, "{table}");
        let md = fs::read_to_string(a.join(format!("table_q_{solver}.md"))).unwrap();
        assert!(!md.contains("failed"), "{md}");
    }
    assert!(a.join("records").join(format!("{stem}.json")).exists());
    assert!(!a.join("records").join("p_omega100_seed1.csv").exists());
    assert!(!a.join("diagnostics.json").exists());
}

#[test]
fn stages_compose_and_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let cfg = cfg.to_str().unwrap();
    let out = dir.path().join("out");
    let o = out.to_str().unwrap();
    let base = ["--config", cfg, "--out", o, "--seed", "7", "--solver", "reduced"];
    let step = |cmd: &[&str]| {
        let args: Vec<&str> = cmd.iter().chain(base.iter()).copied().collect();
        let r = qsysid(&args);
        assert_eq!(code(&r), 0, "{cmd:?}: {}", String::from_utf8_lossy(&r.stderr));
    };
    step(&["simulate"]);
    let record = out.join("records").join("q_omega100_seed7.csv");
    assert!(record.exists());
    step(&["identify", record.to_str().unwrap()]);
    let model = out.join("models").join("q_omega100_seed7_n1_reduced.json");
    assert!(model.exists());
    assert!(!out.join("models").join("q_omega100_seed7_n1_lifted.json").exists());
    step(&["validate", model.to_str().unwrap(), record.to_str().unwrap()]);
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("metrics").join("q_omega100_seed7_n1_reduced.json")).unwrap()).unwrap();
    assert!(metrics["fit"].as_array().unwrap().iter().all(|f| f.as_f64().unwrap() > 80.0), "{metrics}");
    step(&["table"]);
    assert!(out.join("table_q_reduced.md").exists());
}

#[test]
fn numerical_failure_exits_3_with_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{
  "quadratures": ["q"],
  "omegas": [100],
  "orders": [1],
  "seeds": [1],
  "solver": "lifted",
  "gamma0": {"fixed": 1e-30},
  "rounds": 1,
  "warm_start": "symplectic"
}"#,
    );
    let out = dir.path().join("out");
    let o = qsysid(&["pipeline", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    let diag: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("diagnostics.json")).unwrap()).unwrap();
    assert_eq!(diag["status"], "numerical_failure");
    let failures = diag["failures"].as_array().unwrap();
    assert!(!failures.is_empty());
    assert!(failures.iter().any(|f| f["kind"] == "NoFeasiblePointFound"), "{diag}");
    assert!(out.join("models").join("q_omega100_seed1_n1_classical.json").exists());
    let md = fs::read_to_string(out.join("table_q_lifted.md")).unwrap();
    assert!(md.contains("failed"), "{md}");
}

#[test]
fn classical_failure_leaves_marker_and_failed_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"quadratures": ["p"], "omegas": [100], "orders": [1, 2], "solver": "reduced"}"#);
    let out = dir.path().join("out");
    let o = qsysid(&["pipeline", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    let marker: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("models").join("p_omega100_seed1_n2_failed.json")).unwrap()).unwrap();
    assert_eq!(marker["kind"], "LogUndefined");
    assert!(!out.join("models").join("p_omega100_seed1_n2_classical.json").exists());
    let md = fs::read_to_string(out.join("table_p_reduced.md")).unwrap();
    let rows: Vec<&str> = md.lines().filter(|l| l.starts_with("| 100")).collect();
    assert_eq!(rows.len(), 2, "{md}");
    assert!(!rows[0].contains("failed") && rows[1].contains("failed"), "{md}");

    let o = qsysid(&["validate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}
