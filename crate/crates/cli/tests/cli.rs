use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn plett(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_plett"));
    cmd.args(args).env_remove("PLETT_OUT_DIR");
    if let Some(dir) = env_out {
        cmd.env("PLETT_OUT_DIR", dir);
    }
    cmd.output().expect("spawn plett")
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn write_preset(dir: &Path, kind: &str, policy: &str) -> String {
    let json = ok(plett(&["preset", "--kind", kind, "--policy", policy], None));
    let path = dir.join(format!("{policy}.json"));
    fs::write(&path, json).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn preset_run_report_pareto() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_preset(dir.path(), "synthetic-linear", "rho_ett_wc");
    let out = dir.path().join("run");
    let stdout = ok(plett(
        &["run", "--config", &config, "--seeds", "3", "--out", out.to_str().unwrap(), "--jobs", "2", "--trace"],
        None,
    ));
    assert!(stdout.starts_with("rho_ett_wc:"), "{stdout}");

    let runs = fs::read_to_string(out.join("runs.csv")).unwrap();
    let mut lines = runs.lines();
    assert_eq!(
        lines.next().unwrap(),
        "seed,status,rho_min_true,rho_min_hat,events,sign_mismatches,lane_changes"
    );
    assert_eq!(lines.count(), 3);
    for seed in 0..3 {
        let trace = fs::read_to_string(out.join(format!("trace_seed{seed}.csv"))).unwrap();
        assert_eq!(trace.lines().count(), 501);
    }

    let rows = out.join("rows.csv");
    let header = fs::read_to_string(&rows).unwrap();
    assert!(header.starts_with("label,rho_min,m_mean,m_std,feasible,rho_min_mean,runs,failures"), "{header}");
    let report = ok(plett(&["report", "--in", rows.to_str().unwrap()], None));
    assert!(report.contains("rho_ett_wc"), "{report}");
    let json = ok(plett(&["report", "--in", rows.to_str().unwrap(), "--json"], None));
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["policies"][0]["label"], "rho_ett_wc");

    let front = ok(plett(&["pareto", "--in", rows.to_str().unwrap()], None));
    assert_eq!(front.lines().count(), 2);
    let front_json = dir.path().join("front.json");
    ok(plett(&["pareto", "--in", rows.to_str().unwrap(), "--out", front_json.to_str().unwrap()], None));
    assert!(fs::read_to_string(front_json).unwrap().contains("rho_ett_wc"));
}

#[test]
fn rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_preset(dir.path(), "single-lane", "rho_ett");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(plett(&["run", "--config", &config, "--seeds", "2", "--out", a.to_str().unwrap(), "--jobs", "1"], None));
    ok(plett(&["run", "--config", &config, "--seeds", "2", "--out", b.to_str().unwrap()], None));
    for f in ["runs.csv", "rows.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn output_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_preset(dir.path(), "synthetic-linear", "tt");
    let out = dir.path().join("from_env");
    ok(plett(&["run", "--config", &config, "--seeds", "1"], Some(&out)));
    let rows = fs::read_to_string(out.join("rows.csv")).unwrap();
    assert!(rows.lines().nth(1).unwrap().starts_with("tt,"), "{rows}");
}

#[test]
fn grid_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    fs::write(
        &spec,
        r#"{
            "base": { "kind": "synthetic_linear", "duration": 5.0, "policy": { "kind": "tt" } },
            "seeds": [0, 1],
            "arms": [
                { "label": "tt" },
                {
                    "label": "rho_ett_wc",
                    "set": { "policy": { "kind": "rho_ett_wc", "gains": {
                        "mode": "theorem1",
                        "lambda": { "shared": { "x1": 2.0, "x2": 2.0 } },
                        "eps_rho": { "default": 1.0 }
                    } } },
                    "grid": [{ "path": "policy.gains.eps_rho.default", "values": [1.0, 3.0] }]
                }
            ]
        }"#,
    )
    .unwrap();
    let out = dir.path().join("grid");
    let stdout = ok(plett(&["grid", "--spec", spec.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seeds", "3"], None));
    assert!(stdout.contains("rho_ett_wc"), "{stdout}");
    for f in ["rows.csv", "rows.json", "pareto.csv", "summary.txt", "summary.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let rows = fs::read_to_string(out.join("rows.csv")).unwrap();
    let mut lines = rows.lines();
    assert_eq!(
        lines.next().unwrap(),
        "label,policy.gains.eps_rho.default,rho_min,m_mean,m_std,feasible,rho_min_mean,runs,failures"
    );
    let data: Vec<&str> = lines.collect();
    assert_eq!(data.len(), 3);
    assert!(data.iter().all(|l| l.ends_with(",3,0")), "{rows}");
}

#[test]
fn bad_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let out = plett(&["run", "--config", missing.to_str().unwrap()], None);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.json"));

    let out = plett(&["preset", "--kind", "synthetic-linear", "--policy", "cett"], None);
    assert!(!out.status.success());

    let txt = dir.path().join("rows.txt");
    fs::write(&txt, "x").unwrap();
    assert!(!plett(&["report", "--in", txt.to_str().unwrap()], None).status.success());
}
