use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn epd(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_epd-lab"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> Output {
    let out = epd(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn resolved(dir: &Path, key: &str) -> String {
    let text = std::fs::read_to_string(dir.join("config.resolved")).unwrap();
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")).map(str::to_string))
        .unwrap_or_else(|| panic!("{key} missing"))
}

#[test]
fn exponents_report_the_critical_power() {
    let tmp = TempDir::new().unwrap();
    let out = ok(&["exponents", "--n", "3", "--mu", "1", "--alpha", "0"], tmp.path());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("{\"schema_version\":1,"));
    let v: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["p_S"], 2.0);
    assert_eq!(v["gamma_at_p"], 0.0);
    assert_eq!(v["hypotheses"]["critical_power"], true);
    // an explicit supercritical p is reported as such
    let v: Value = serde_json::from_slice(&ok(&["exponents", "--p", "3"], tmp.path()).stdout).unwrap();
    assert_eq!(v["hypotheses"]["critical_power"], false);
}

#[test]
fn empty_config_resolves_to_the_canonical_run() {
    let tmp = TempDir::new().unwrap();
    std::fs::write(tmp.path().join("empty.toml"), "").unwrap();
    ok(&["--config", "empty.toml", "ode-lifespan", "--out", "o"], tmp.path());
    let dir = tmp.path().join("o");
    assert_eq!(resolved(&dir, "model.n"), "3");
    for (key, val) in [("model.mu", 1.0), ("model.alpha", 0.0), ("model.p", 2.0), ("model.eps", 1.0)] {
        assert_eq!(resolved(&dir, key).parse::<f64>().unwrap(), val, "{key}");
    }
}

#[test]
fn flags_override_the_file() {
    let tmp = TempDir::new().unwrap();
    std::fs::write(tmp.path().join("c.toml"), "model.mu = 1.5\ngrid.dr = 0.02\n").unwrap();
    ok(&["--config", "c.toml", "--mu", "2", "ode-lifespan", "--out", "o"], tmp.path());
    let dir = tmp.path().join("o");
    assert_eq!(resolved(&dir, "model.mu").parse::<f64>().unwrap(), 2.0);
    assert_eq!(resolved(&dir, "grid.dr").parse::<f64>().unwrap(), 0.02);
}

#[test]
fn resolved_config_reproduces_itself() {
    let tmp = TempDir::new().unwrap();
    ok(&["--set", "model.alpha=0.5", "--eps", "0.3", "--snapshots", "0.5,1", "ode-lifespan", "--out", "a"], tmp.path());
    ok(&["--config", "a/config.resolved", "ode-lifespan", "--out", "b"], tmp.path());
    let strip = |d: &str| {
        std::fs::read_to_string(tmp.path().join(d).join("config.resolved"))
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with("output.dir"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip("a"), strip("b"));
}

#[test]
fn config_errors_exit_with_code_two() {
    let tmp = TempDir::new().unwrap();
    let out = epd(&["solve", "--rmax", "5", "--tbudget", "10"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("containment") && err.lines().count() == 1, "{err}");

    std::fs::write(tmp.path().join("bad.toml"), "model.nu = 1\n").unwrap();
    let out = epd(&["--config", "bad.toml", "exponents"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("model.nu"));

    let out = epd(&["frobnicate"], tmp.path());
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().contains("Usage"));
}

#[test]
fn numeric_failure_exits_with_code_three() {
    let tmp = TempDir::new().unwrap();
    let out = epd(&["ode-lifespan", "--c0", "1e-6", "--c1", "1e-6", "--eps", "0.5"], tmp.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error[blowup_lab.non_convergence]"));
}

#[test]
fn ode_lifespan_matches_closed_form() {
    let tmp = TempDir::new().unwrap();
    ok(&["ode-lifespan", "--eps", "0.5", "--out", "o"], tmp.path());
    let v = json(&tmp.path().join("o/ode_lifespan.json"));
    let s = v["s_numeric"].as_f64().unwrap();
    // p = 2, c0 = c1 = 1, s_start = 2: s·ε² = e
    assert!((s * 0.25 - std::f64::consts::E).abs() < 1e-9, "{v}");
    assert!(v["gap"].as_f64().unwrap() < 1e-6);
}

#[test]
fn bessel_and_h_tables() {
    let tmp = TempDir::new().unwrap();
    let out = String::from_utf8(ok(&["bessel", "--nu", "0.5", "--z", "1,2"], tmp.path()).stdout).unwrap();
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "nu,z,value");
    assert_eq!(lines.len(), 3);
    let v: f64 = lines[1].split(',').nth(2).unwrap().parse().unwrap();
    let exact = (std::f64::consts::PI / 2.0).sqrt() * (-1.0f64).exp();
    assert!((v / exact - 1.0).abs() < 1e-12);

    let out = String::from_utf8(ok(&["hfun", "--mu", "1", "--t", "0.5,1"], tmp.path()).stdout).unwrap();
    assert_eq!(out.lines().next(), Some("mu,t,h,hprime"));
    assert_eq!(out.lines().count(), 3);
}

#[test]
fn solve_writes_trace_verdict_and_snapshots() {
    let tmp = TempDir::new().unwrap();
    ok(&["solve", "--tbudget", "2", "--dr", "0.02", "--snapshots", "0,1", "--out", "run"], tmp.path());
    let dir = tmp.path().join("run");
    let trace = std::fs::read_to_string(dir.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().next(), Some("t,sup_norm,energy,dissipation,support_radius"));
    assert!(!trace.contains('\r'));
    let v = json(&dir.join("verdict.json"));
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["verdict"], "survived");
    assert!(v["T_num"].is_null() && v["refine_gap"].is_null());
    assert_eq!(v["grid"]["dr"], 0.02);
    let snap = std::fs::read_to_string(dir.join("snapshot_t0.000000.csv")).unwrap();
    let mut rows = snap.lines();
    assert_eq!(rows.next(), Some("r,u"));
    let first: Vec<f64> = rows.next().unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    assert_eq!(first, vec![0.0, 1.0]);
    assert!(dir.join("snapshot_t1.000000.csv").exists());
}

#[test]
fn large_amplitude_solve_blows_up() {
    let tmp = TempDir::new().unwrap();
    ok(&["solve", "--eps", "12", "--tbudget", "5", "--dr", "0.01", "--out", "run"], tmp.path());
    let v = json(&tmp.path().join("run/verdict.json"));
    assert_eq!(v["verdict"], "blew_up");
    let t = v["T_num"].as_f64().unwrap();
    assert!((2.4..2.7).contains(&t), "{v}");
    assert!(v["refine_gap"].as_f64().unwrap() < 0.01);
}

#[test]
fn identical_configs_give_identical_bytes() {
    let tmp = TempDir::new().unwrap();
    for d in ["a", "b"] {
        ok(&["solve", "--eps", "3", "--tbudget", "3", "--dr", "0.02", "--out", d], tmp.path());
    }
    for f in ["trace.csv", "verdict.json"] {
        let a = std::fs::read(tmp.path().join("a").join(f)).unwrap();
        let b = std::fs::read(tmp.path().join("b").join(f)).unwrap();
        assert!(a == b, "{f} differs");
    }
}

#[test]
fn functional_reads_a_run_directory() {
    let tmp = TempDir::new().unwrap();
    ok(&["solve", "--tbudget", "8", "--out", "run"], tmp.path());
    ok(&["functional", "--run", "run", "--M", "1,2,4,8", "--out", "fn"], tmp.path());
    let csv = std::fs::read_to_string(tmp.path().join("fn/functional.csv")).unwrap();
    let mut rows = csv.lines();
    assert_eq!(rows.next(), Some("M,Y,Z"));
    let ys: Vec<f64> = rows.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(ys.len(), 4);
    assert_eq!(ys[0], 0.0);
    assert!(ys.windows(2).all(|w| w[1] > w[0]));
    let fit = json(&tmp.path().join("fn/functional_fit.json"));
    assert!(fit["slope"].as_f64().unwrap() > 0.0);
    // a missing run directory is a config error
    assert_eq!(epd(&["functional", "--run", "nowhere"], tmp.path()).status.code(), Some(2));
}

#[test]
fn sweep_reports_budget_outs_as_data() {
    let tmp = TempDir::new().unwrap();
    ok(&["sweep", "--eps-list", "16,12,10,1", "--tbudget", "8", "--dr", "0.02", "--out", "sw"], tmp.path());
    let csv = std::fs::read_to_string(tmp.path().join("sw/sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "eps,x_fit,T_num,refine_gap");
    assert!(lines[4].ends_with(",,"), "{}", lines[4]);
    let fit = json(&tmp.path().join("sw/sweep_fit.json"));
    assert!(fit["slope"].as_f64().unwrap() > 0.0 && fit["r2"].as_f64().unwrap() > 0.9);
    assert_eq!(fit["completed"], 3);

    ok(&["sweep", "--eps-list", "12,1", "--tbudget", "4", "--dr", "0.02", "--out", "thin"], tmp.path());
    let fit = json(&tmp.path().join("thin/sweep_fit.json"));
    assert!(fit["slope"].is_null() && fit["fit_error"].is_string());
}

#[test]
fn picard_and_testfn_verify() {
    let tmp = TempDir::new().unwrap();
    ok(&["picard", "--eps", "0.5", "--tbudget", "1", "--dr", "0.01", "--out", "pc"], tmp.path());
    let v = json(&tmp.path().join("pc/picard.json"));
    assert!(v["max_gap_ratio"].as_f64().unwrap() < 1.0);
    let csv = std::fs::read_to_string(tmp.path().join("pc/picard.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("iteration,gap"));

    ok(&["testfn-verify", "--mu", "2.5", "--out", "tf"], tmp.path());
    let v = json(&tmp.path().join("tf/testfn_verdict.json"));
    assert_eq!(v["identity_ok"], true);
    assert_eq!(v["slope_ok"], true);
    let csv = std::fs::read_to_string(tmp.path().join("tf/testfn.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("t,r,b_q,db_q_dt,pde_residual,ratio_tq"));
    assert_eq!(csv.lines().count(), 26);
}
