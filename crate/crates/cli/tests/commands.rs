use std::fs;
use std::path::Path;
use std::process::Command;

const CONFIG: &str = r#"{
  "noise": {"family": "poisson"},
  "m1": 10, "m2": 8, "rank": 2, "gamma": 1.0,
  "n_grid": [300, 600], "replicates": 2,
  "mc_reps": 20, "bound_mc_reps": 5
}"#;

fn expmc(cmd: &str, config: &Path, seed: u64, out: &Path) -> std::process::Output {
    let output = Command::new(env!("CARGO_BIN_EXE_expmc"))
        .args([cmd, "--config"])
        .arg(config)
        .args(["--seed", &seed.to_string(), "--out"])
        .arg(out)
        .output()
        .unwrap();
    assert!(output.status.success(), "{cmd}: {}", String::from_utf8_lossy(&output.stderr));
    output
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn rate_sweep_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    expmc("rate-sweep", &cfg, 17, &a);
    expmc("rate-sweep", &cfg, 17, &b);
    let csv_a = fs::read(a.join("rate_sweep.csv")).unwrap();
    assert_eq!(csv_a, fs::read(b.join("rate_sweep.csv")).unwrap());
    let text = String::from_utf8(csv_a).unwrap();
    assert!(text.starts_with("config_hash,family,estimator,n,replicate,frob_risk"));
    assert_eq!(text.lines().count(), 1 + 4);

    let c = dir.path().join("c");
    expmc("rate-sweep", &cfg, 18, &c);
    assert_ne!(fs::read(a.join("rate_sweep.csv")).unwrap(), fs::read(c.join("rate_sweep.csv")).unwrap());

    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 17);
    assert_eq!(manifest["command"], "rate-sweep");
    assert_eq!(manifest["config"]["m1"], 10);
}

#[test]
fn simulate_then_fit_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let sim = dir.path().join("sim");
    expmc("simulate", &cfg, 1, &sim);
    let obs = fs::read_to_string(sim.join("observations.csv")).unwrap();
    assert!(obs.starts_with("i,row,col,y\n1,"));
    assert_eq!(obs.lines().count(), 301);
    let truth = fs::read_to_string(sim.join("truth.csv")).unwrap();
    assert_eq!(truth.lines().count(), 10);
    assert!(truth.lines().all(|l| l.split(',').count() == 8));

    let fit_cfg = CONFIG.replacen('{', r#"{"observations": "sim/observations.csv", "truth": "sim/truth.csv","#, 1);
    let cfg2 = dir.path().join("fit.json");
    fs::write(&cfg2, fit_cfg).unwrap();
    let out = dir.path().join("fit");
    expmc("fit", &cfg2, 1, &out);
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(out.join("fit.json")).unwrap()).unwrap();
    assert!(summary["lambda"].as_f64().unwrap() > 0.0);
    assert!(summary["risk"]["frob_risk"].as_f64().unwrap() >= 0.0);
    assert_eq!(fs::read_to_string(out.join("x_hat.csv")).unwrap().lines().count(), 10);
    assert!(fs::read_to_string(out.join("trace.csv")).unwrap().starts_with("iteration,objective\n0,"));
}

#[test]
fn gen_writes_truth_and_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let out = dir.path().join("gen");
    expmc("gen", &cfg, 2, &out);
    let table = fs::read_to_string(out.join("sampling.csv")).unwrap();
    let total: f64 = table
        .lines()
        .flat_map(|l| l.split(',').map(|v| v.parse::<f64>().unwrap()).collect::<Vec<_>>())
        .sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn other_experiments_run() {
    let dir = tempfile::tempdir().unwrap();
    let ks = CONFIG.replacen('{', r#"{"estimator": "known_sampling","#, 1);
    let cfg = write_config(dir.path(), &ks);
    let out = dir.path().join("oc");
    let o = expmc("oracle-check", &cfg, 3, &out);
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "4/4 runs pass");
    assert!(out.join("oracle_check.csv").exists());

    let out = dir.path().join("conc");
    expmc("concentration", &cfg, 3, &out);
    let rows = fs::read_to_string(out.join("concentration.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 2 * 3);

    let lb = CONFIG.replace("\"m1\": 10, \"m2\": 8", "\"m1\": 16, \"m2\": 16").replace("\"replicates\": 2", "\"replicates\": 1");
    let lb = lb.replace("{\"family\": \"poisson\"}", "{\"family\": \"gaussian\", \"sigma\": 1.0}");
    let cfg = write_config(dir.path(), &lb);
    let out = dir.path().join("lb");
    expmc("lower-bound", &cfg, 3, &out);
    assert!(out.join("packing/manifest.json").exists());
    assert!(out.join("packing/member_0000.csv").exists());
    let rows = fs::read_to_string(out.join("lower_bound.csv")).unwrap();
    assert_eq!(rows.lines().count(), 3);
}

#[test]
fn bad_config_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"noise": {"family": "poisson"}, "m1": 3}"#);
    let status = Command::new(env!("CARGO_BIN_EXE_expmc"))
        .args(["gen", "--config"])
        .arg(&cfg)
        .args(["--out"])
        .arg(dir.path().join("x"))
        .status()
        .unwrap();
    assert!(!status.success());
}
