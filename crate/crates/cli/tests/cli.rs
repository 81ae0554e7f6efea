use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn quick() -> PathBuf {
    workspace().join("configs/quick.toml")
}

fn mfg(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfg"))
        .args(args)
        .arg("--output")
        .arg(out)
        .env("MFG_LOG", "quiet")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let base = std::fs::read_to_string(quick()).unwrap();
    let p = dir.join("run.toml");
    std::fs::write(&p, format!("{base}\n{text}")).unwrap();
    p
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn check_schema(m: &Value) {
    let text = std::fs::read_to_string(workspace().join("schemas/manifest.schema.json")).unwrap();
    let schema: Value = serde_json::from_str(&text).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator.iter_errors(m).map(|e| format!("{e} at {}", e.instance_path)).collect();
    assert!(errors.is_empty(), "{errors:#?}");
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn cfl_violation_exits_2_with_the_inequality() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfl.toml");
    std::fs::write(&cfg, "[time]\nn_steps = 2\n").unwrap();
    let out = tmp.path().join("out");
    let o = mfg(&["solve-hjb", "--config", cfg.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let err = stderr(&o);
    assert!(err.contains("det-hjb") && err.contains("0.9*dx^2/(2*(sup a + eps) + dx*sup|b|)"), "{err}");
    let m = manifest(&out);
    check_schema(&m);
    assert_eq!(m["status"], "failed");
    assert_eq!(m["error"]["kind"], "cfl");
}

#[test]
fn forced_non_convergence_exits_4_with_one_residual() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[fixpoint]\nmax_iters = 1\n");
    let out = tmp.path().join("out");
    let o = mfg(&["solve-mfg", "--config", cfg.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    let m = manifest(&out);
    check_schema(&m);
    assert_eq!(m["exit_code"], 4);
    assert_eq!(m["error"]["kind"], "non-convergence");
    assert_eq!(m["diagnostics"]["residual_series"].as_array().unwrap().len(), 1);
    let csv = std::fs::read_to_string(out.join("residuals.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn unknown_keys_are_rejected_and_still_leave_a_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[coupling]\nwidth = 0.1\n");
    let out = tmp.path().join("out");
    let o = mfg(&["solve-hjb", "--config", cfg.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown field `width`"), "{}", stderr(&o));
    let m = manifest(&out);
    check_schema(&m);
    assert_eq!(m["error"]["module"], "cli-io");
}

#[test]
fn invalid_values_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    for (i, bad) in ["[fixpoint]\ndamping = 0.0\n", "[problem]\nhjb = \"wave\"\n", "snapshots = 1\n"].iter().enumerate() {
        let p = tmp.path().join(format!("bad{i}.toml"));
        std::fs::write(&p, bad).unwrap();
        let o = mfg(&["solve-hjb", "--config", p.to_str().unwrap()], &tmp.path().join(format!("o{i}")));
        assert_eq!(o.status.code(), Some(2), "{bad}");
    }
    let o = Command::new(env!("CARGO_BIN_EXE_mfg"))
        .args(["solve-hjb", "--output"])
        .arg(tmp.path().join("log"))
        .env("MFG_LOG", "loud")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = mfg(&["solve-hjb", "--workers", "0"], &tmp.path().join("w"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn field_csv_schema() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = mfg(&["solve-bshjb", "--config", quick().to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m = manifest(&out);
    check_schema(&m);
    assert_eq!(m["files"], serde_json::json!(["u.csv", "dm.csv"]));
    let u = std::fs::read_to_string(out.join("u.csv")).unwrap();
    let mut lines = u.lines();
    assert_eq!(lines.next(), Some("t,node_id,x,value"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert!(rows.iter().all(|r| r.len() == 4));
    // Levels 0, 1, 2 of a depth-2 tree: 1 + 2 + 4 nodes of 128 points.
    assert_eq!(rows.len(), 7 * 128);
    let ids: std::collections::BTreeSet<u64> = rows.iter().map(|r| r[1] as u64).collect();
    assert_eq!(ids.into_iter().collect::<Vec<_>>(), (0..7).collect::<Vec<_>>());
    let dm = std::fs::read_to_string(out.join("dm.csv")).unwrap();
    assert_eq!(dm.lines().next(), Some("t,node_id,x,value"));
    assert_eq!(dm.lines().count(), 1 + 6 * 128);
}

#[test]
fn mfg_run_is_bit_reproducible_across_worker_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let q = quick();
    let q = q.to_str().unwrap();
    assert_eq!(mfg(&["solve-mfg", "--config", q, "--workers", "1"], &a).status.code(), Some(0));
    assert_eq!(mfg(&["solve-mfg", "--config", q, "--workers", "3"], &b).status.code(), Some(0));
    for f in ["u.csv", "m.csv", "residuals.csv"] {
        let (x, y) = (std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
        assert!(!x.is_empty() && x == y, "{f} differs");
    }
    let r = std::fs::read_to_string(a.join("residuals.csv")).unwrap();
    assert_eq!(r.lines().next(), Some("iter,residual"));
    let m = manifest(&a);
    check_schema(&m);
    assert_eq!(m["workers"], 1);
    let series = m["diagnostics"]["residual_series"].as_array().unwrap();
    assert_eq!(r.lines().count(), series.len() + 1);
}

#[test]
fn seed_flag_overrides_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = mfg(&["solve-fp", "--config", quick().to_str().unwrap(), "--seed", "42"], &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m = manifest(&out);
    check_schema(&m);
    assert_eq!(m["seed"], 42);
    assert_eq!(m["config"]["seed"], 42);
    let csv = std::fs::read_to_string(out.join("m.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("t,node_id,x,value"));
}

#[test]
fn solve_hjb_reports_the_propagation_fit() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = mfg(&["solve-hjb", "--config", quick().to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m = manifest(&out);
    check_schema(&m);
    assert!(m["diagnostics"]["propagation"]["c_min"].is_number());
    assert!(m["pass_table"].as_array().unwrap().iter().all(|r| r["passed"] == true));
}

#[test]
fn sweep_on_quick_config_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = mfg(&["sweep", "--config", quick().to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m = manifest(&out);
    check_schema(&m);
    for key in ["stability", "refinement", "semiconcavity_refinement", "projection"] {
        assert!(m["diagnostics"][key].is_object(), "{key}");
    }
}

#[test]
fn verify_on_shipped_defaults_is_green() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = workspace().join("configs/default.toml");
    let o = mfg(&["verify", "--config", cfg.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m = manifest(&out);
    check_schema(&m);
    let table = m["pass_table"].as_array().unwrap();
    assert!(table.len() >= 17);
    let failed: Vec<&Value> = table.iter().filter(|r| r["passed"] != true).collect();
    assert!(failed.is_empty(), "{failed:#?}");
    for key in ["gamma", "residual_series", "duality_gap", "refinement", "stability", "martingale"] {
        assert!(!m["diagnostics"][key].is_null(), "{key}");
    }
    for f in ["u.csv", "m.csv", "residuals.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
}
